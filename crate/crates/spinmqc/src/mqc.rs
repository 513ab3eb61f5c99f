//! Evolution-reversal multiple-quantum experiments.
//!
//! Forward evolution `V`, collective z rotation by `phi_k = k pi / K`,
//! backward evolution `W`, and readout of a diagonal observable. Both backends
//! first produce the coherence-resolved intensities
//! `I_q = sum_{(M_a - M_b)/2 = q} (V rho V^dagger)_ab (W^dagger O W)_ba`,
//! from which the phase signals `S^k = sum_q I_q exp(-i k dphi q)` follow.

use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::{OperatorSpec, build_dq};
use crate::lattice::CouplingMatrix;
use crate::linalg::{BlockEigen, CMat, adjoint};
use crate::propagator::chebyshev::Chebyshev;
use crate::propagator::exact::{DensityMatrix, EXACT_MAX_SPINS};
use crate::propagator::pulse::{
    CYCLE_MAX_SPINS, Phase, PulseEngine, PulseMode, PulseSequence, cycle_propagator, dq16,
};
use crate::states::{Amplitudes, MixedStateSpec, flip_site, random_state, sample_product_random};

/// Relative `|J_K|` above which a run is flagged as possibly aliased.
pub const ALIAS_THRESHOLD: f64 = 1e-3;
/// Bound on the relative imaginary residue of exact-backend runs.
pub const IMAG_RESIDUE_BOUND: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    UnitSum,
}

/// Coherence intensities `J_n(t)` for `n = 0..=K`.
///
/// `J_K` holds half of the Nyquist bin so that `J_0 + 2 sum_{n>0} J_n` equals
/// the total signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MQCSpectrum {
    pub times: Vec<f64>,
    pub orders: Vec<i32>,
    /// `j[t][n]`.
    pub j: Vec<Vec<f64>>,
    pub normalization: Normalization,
    pub imag_residue: Vec<f64>,
    /// Phase signals `S^k` for `k = 1..=2K`, per time.
    pub signals: Vec<Vec<f64>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MQCSpectrum {
    pub fn k(&self) -> usize {
        self.orders.len() - 1
    }

    /// Time series of one order.
    pub fn order(&self, n: usize) -> Vec<f64> {
        self.j.iter().map(|row| row[n]).collect()
    }

    pub fn total(&self, ti: usize) -> f64 {
        let row = &self.j[ti];
        row[0] + 2.0 * row[1..].iter().sum::<f64>()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time");
        for n in &self.orders {
            s.push_str(&format!(",J{n}"));
        }
        s.push_str(",imag_residue\n");
        for (ti, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t:.16e}"));
            for v in &self.j[ti] {
                s.push_str(&format!(",{v:.16e}"));
            }
            s.push_str(&format!(",{:.16e}\n", self.imag_residue[ti]));
        }
        s
    }
}

/// How `V` and `W` are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evolution {
    /// `V = exp(-i H t)`, `W = V^dagger`.
    Hamiltonian { h: OperatorSpec },
    /// `V = exp(-i H_f t)`, `W = exp(-i H_b t)`.
    Pair {
        forward: OperatorSpec,
        backward: OperatorSpec,
    },
    /// `m` forward and `m` backward cycles with `t = m T_forward`.
    Pulsed {
        forward: PulseSequence,
        backward: PulseSequence,
        h_int: OperatorSpec,
        mode: PulseMode,
    },
    /// DQ-16 with a fixed number of cycles; the delay is chosen per time point
    /// so that `cycles` cycles last `t`.
    PulsedScan {
        h_int: OperatorSpec,
        mode: PulseMode,
        width: f64,
        cycles: usize,
    },
}

impl Evolution {
    pub fn n_spins(&self) -> usize {
        match self {
            Evolution::Hamiltonian { h } => h.n_spins,
            Evolution::Pair { forward, .. } => forward.n_spins,
            Evolution::Pulsed { h_int, .. } | Evolution::PulsedScan { h_int, .. } => h_int.n_spins,
        }
    }

    /// Ideal double-quantum evolution for a coupling matrix.
    pub fn ideal_dq(c: &CouplingMatrix) -> Self {
        Evolution::Hamiltonian { h: build_dq(c) }
    }
}

/// DQ-16 delay for a cycle of length `tc` with pulses of width `width`.
pub fn scan_delta(tc: f64, width: f64) -> f64 {
    tc / 24.0 - width
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    ExactDensity,
    /// `rho ~ 2^n |R'><R|` averaged over `realizations` random states.
    Typicality {
        realizations: usize,
        seed: u64,
        amplitudes: Amplitudes,
    },
    /// `sigma^z_j ~ 2^{n-1} (|up r><up r| - |down r><down r|)`, one random
    /// `|r>` per site and realization.
    PerSite {
        realizations: usize,
        seed: u64,
        amplitudes: Amplitudes,
    },
}

impl Backend {
    pub fn typicality(n_spins: usize, seed: u64) -> Self {
        Backend::Typicality {
            realizations: default_realizations(n_spins),
            seed,
            amplitudes: Amplitudes::RandomPhase,
        }
    }
}

/// One random state for large systems, ten below 16 spins.
pub fn default_realizations(n_spins: usize) -> usize {
    if n_spins >= 16 { 1 } else { 10 }
}

/// Seed of realization `r`.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProtocol {
    pub evolution: Evolution,
    /// Highest encoded order; `2K` phase steps of `pi / K`.
    pub k: usize,
    pub backend: Backend,
    pub times: Vec<f64>,
    pub initial: MixedStateSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-12
}

pub const DEFAULT_K_THERMAL: usize = 12;
pub const DEFAULT_K_END: usize = 16;

impl ExperimentProtocol {
    pub fn new(
        evolution: Evolution,
        initial: MixedStateSpec,
        times: Vec<f64>,
        backend: Backend,
    ) -> Self {
        let k = match initial.kind {
            crate::states::StateKind::EndPolarized => DEFAULT_K_END,
            _ => DEFAULT_K_THERMAL,
        };
        Self {
            evolution,
            k,
            backend,
            times,
            initial,
            tol: default_tol(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn delta_phi(&self) -> f64 {
        std::f64::consts::PI / self.k as f64
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let n = self.evolution.n_spins();
        if self.initial.n_spins != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.initial.n_spins,
            });
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument(
                "times must be finite and non-negative".into(),
            ));
        }
        match &self.evolution {
            Evolution::Hamiltonian { h } if !h.is_hermitian() => return Err(Error::NonHermitian),
            Evolution::Pair { forward, backward } => {
                if backward.n_spins != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: backward.n_spins,
                    });
                }
                if !forward.is_hermitian() || !backward.is_hermitian() {
                    return Err(Error::NonHermitian);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// DFT over the `2K` phase samples, folded to `n >= 0`.
///
/// Returns `(J_0..=J_K, max |Im J_n|)`.
pub fn coherence_transform(signals: &[C64], k: usize) -> Result<(Vec<f64>, f64)> {
    if k == 0 || signals.len() != 2 * k {
        return Err(Error::DimensionMismatch {
            expected: 2 * k,
            got: signals.len(),
        });
    }
    let two_k = 2 * k;
    let dphi = std::f64::consts::PI / k as f64;
    let full: Vec<C64> = (0..two_k)
        .map(|n| {
            signals
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    // the exponent only matters modulo 2K
                    let arg = -((((i + 1) * n) % two_k) as f64) * dphi;
                    s * C64::from_polar(1.0, arg)
                })
                .sum::<C64>()
                / two_k as f64
        })
        .collect();
    let imag = full.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let mut out = Vec::with_capacity(k + 1);
    out.push(full[0].re);
    for n in 1..k {
        out.push(0.5 * (full[n].re + full[two_k - n].re));
    }
    out.push(0.5 * full[k].re);
    Ok((out, imag))
}

/// Rescales every time step to `J_0 + 2 sum J_n = 1`.
pub fn normalize_spectrum(s: &MQCSpectrum) -> Result<MQCSpectrum> {
    let mut out = s.clone();
    for (ti, row) in out.j.iter_mut().enumerate() {
        let total = row[0] + 2.0 * row[1..].iter().sum::<f64>();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "zero total signal at time index {ti}"
            )));
        }
        for v in row.iter_mut() {
            *v /= total;
        }
        out.imag_residue[ti] /= total.abs();
        for v in out.signals[ti].iter_mut() {
            *v /= total;
        }
    }
    out.normalization = Normalization::UnitSum;
    Ok(out)
}

/// `I_q` for `q = -n..=n`, stored at index `q + n`.
type Intensities = Vec<C64>;

fn zeros(n: usize) -> Intensities {
    vec![C64::new(0.0, 0.0); 2 * n + 1]
}

fn diag_of(w: &[f64], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(j, &x)| if (i >> j) & 1 == 0 { x } else { -x })
                .sum()
        })
        .collect()
}

fn popcount(i: usize) -> i64 {
    i.count_ones() as i64
}

fn spectrum_from(
    times: &[f64],
    k: usize,
    n_spins: usize,
    intensities: &[Intensities],
    exact: bool,
) -> Result<MQCSpectrum> {
    let dphi = std::f64::consts::PI / k as f64;
    let mut j = Vec::with_capacity(times.len());
    let mut residue = Vec::with_capacity(times.len());
    let mut signals = Vec::with_capacity(times.len());
    let mut warnings = Vec::new();
    for (ti, iq) in intensities.iter().enumerate() {
        let s: Vec<C64> = (1..=2 * k)
            .map(|kk| {
                let z: C64 = iq
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| {
                        let q = idx as i64 - n_spins as i64;
                        v * C64::from_polar(1.0, -(kk as f64) * dphi * q as f64)
                    })
                    .sum();
                if exact { z } else { C64::new(z.re, 0.0) }
            })
            .collect();
        let (row, imag) = coherence_transform(&s, k)?;
        let scale = row
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        if exact && imag > IMAG_RESIDUE_BOUND * scale {
            warnings.push(format!("imaginary residue {imag:.3e} at t = {}", times[ti]));
        }
        if row[k].abs() > ALIAS_THRESHOLD * scale {
            warnings.push(format!(
                "|J_K| = {:.3e} at t = {}; K may be too small",
                row[k].abs(),
                times[ti]
            ));
        }
        j.push(row);
        residue.push(imag);
        signals.push(s.iter().map(|z| z.re).collect());
    }
    Ok(MQCSpectrum {
        times: times.to_vec(),
        orders: (0..=k as i32).collect(),
        j,
        normalization: Normalization::Raw,
        imag_residue: residue,
        signals,
        warnings,
    })
}

/// Raw spectra for several diagonal readouts `sum_j w_j sigma^z_j`.
pub fn run_mqc_readouts(p: &ExperimentProtocol, readouts: &[Vec<f64>]) -> Result<Vec<MQCSpectrum>> {
    p.validate()?;
    let n = p.evolution.n_spins();
    if readouts.iter().any(|w| w.len() != n) {
        return Err(Error::InvalidArgument(
            "readout weights must cover every site".into(),
        ));
    }
    let per_readout = match p.backend {
        Backend::ExactDensity => {
            let rho = p.initial.diagonal();
            exact_intensities(p, Initial::Diagonal(&rho), readouts)?
        }
        Backend::Typicality {
            realizations,
            seed,
            amplitudes,
        } => {
            let dim = 1usize << n;
            let mut acc = vec![vec![zeros(n); p.times.len()]; readouts.len()];
            for r in 0..realizations.max(1) {
                let bra = random_state(n, realization_seed(seed, r), amplitudes);
                let mut ket = bra.clone();
                p.initial.apply_in_place(&mut ket.amps);
                let part = pair_intensities(p, &bra.amps, &ket.amps, readouts)?;
                accumulate(&mut acc, &part, dim as f64 / realizations.max(1) as f64);
            }
            acc
        }
        Backend::PerSite {
            realizations,
            seed,
            amplitudes,
        } => {
            let dim = 1usize << n;
            let mut acc = vec![vec![zeros(n); p.times.len()]; readouts.len()];
            let w = p.initial.weights();
            let reps = realizations.max(1);
            for r in 0..reps {
                for (j, &wj) in w.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    let s = realization_seed(seed, r * n + j);
                    let up = sample_product_random(n, j, s, amplitudes)?;
                    let down = flip_site(&up, j);
                    let scale = wj * (dim / 2) as f64 / reps as f64;
                    let a = pair_intensities(p, &up.amps, &up.amps, readouts)?;
                    accumulate(&mut acc, &a, scale);
                    let b = pair_intensities(p, &down.amps, &down.amps, readouts)?;
                    accumulate(&mut acc, &b, -scale);
                }
            }
            acc
        }
    };
    let exact = matches!(p.backend, Backend::ExactDensity);
    per_readout
        .iter()
        .map(|iq| spectrum_from(&p.times, p.k, n, iq, exact))
        .collect()
}

fn accumulate(acc: &mut [Vec<Intensities>], part: &[Vec<Intensities>], scale: f64) {
    for (a, b) in acc.iter_mut().zip(part) {
        for (x, y) in a.iter_mut().zip(b) {
            for (u, v) in x.iter_mut().zip(y) {
                *u += v * scale;
            }
        }
    }
}

/// Normalized spectrum with collective `sigma_z` readout.
pub fn run_mqc(p: &ExperimentProtocol) -> Result<MQCSpectrum> {
    let raw = run_mqc_raw(p)?;
    normalize_spectrum(&raw)
}

pub fn run_mqc_raw(p: &ExperimentProtocol) -> Result<MQCSpectrum> {
    let n = p.evolution.n_spins();
    let mut v = run_mqc_readouts(p, &[vec![1.0; n]])?;
    Ok(v.remove(0))
}

/// Exact-backend run from an arbitrary initial density matrix.
pub fn run_mqc_density(p: &ExperimentProtocol, rho: &DensityMatrix) -> Result<MQCSpectrum> {
    p.validate()?;
    let n = p.evolution.n_spins();
    if rho.n_spins != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rho.n_spins,
        });
    }
    let mut v = exact_intensities(p, Initial::Dense(&rho.entries), &[vec![1.0; n]])?;
    spectrum_from(&p.times, p.k, n, &v.remove(0), true)
}

enum Initial<'a> {
    Diagonal(&'a [f64]),
    Dense(&'a CMat),
}

fn exact_guard(n: usize, max: usize) -> Result<()> {
    if n > max {
        return Err(Error::SizeGuard {
            what: "exact MQC backend",
            n,
            max,
        });
    }
    Ok(())
}

/// `[readout][time] -> I_q`.
fn exact_intensities(
    p: &ExperimentProtocol,
    rho: Initial<'_>,
    readouts: &[Vec<f64>],
) -> Result<Vec<Vec<Intensities>>> {
    let n = p.evolution.n_spins();
    exact_guard(n, EXACT_MAX_SPINS)?;
    let dim = 1usize << n;
    let obs: Vec<Vec<f64>> = readouts.iter().map(|w| diag_of(w, dim)).collect();
    let per_time: Vec<Vec<Intensities>> = match (&p.evolution, &rho) {
        (Evolution::Hamiltonian { h }, Initial::Diagonal(d)) => {
            let be = BlockEigen::new(&h.compile())?;
            p.times
                .par_iter()
                .map(|&t| block_intensities(&be, t, d, &obs, n))
                .collect()
        }
        _ => {
            exact_guard(n, CYCLE_MAX_SPINS)?;
            let pairs = dense_pairs(p)?;
            let rho_dense = match rho {
                Initial::Diagonal(d) => Mat::from_fn(dim, dim, |i, j| {
                    if i == j {
                        C64::new(d[i], 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }),
                Initial::Dense(m) => m.clone(),
            };
            pairs
                .par_iter()
                .map(|(v, w)| dense_intensities(v, w, &rho_dense, &obs, n))
                .collect()
        }
    };
    // transpose to [readout][time]
    Ok((0..readouts.len())
        .map(|r| per_time.iter().map(|row| row[r].clone()).collect())
        .collect())
}

fn block_intensities(
    be: &BlockEigen,
    t: f64,
    rho: &[f64],
    obs: &[Vec<f64>],
    n: usize,
) -> Vec<Intensities> {
    let mut out = vec![zeros(n); obs.len()];
    for ((idx, _), u) in be.blocks.iter().zip(be.block_unitaries(t)) {
        let m = idx.len();
        let ud = adjoint(u.as_ref());
        let conj_diag = |d: &dyn Fn(usize) -> f64| -> CMat {
            let ur = Mat::from_fn(m, m, |a, c| u[(a, c)] * d(idx[c]));
            &ur * &ud
        };
        let a = conj_diag(&|i| rho[i]);
        for (o, iq) in obs.iter().zip(out.iter_mut()) {
            let b = conj_diag(&|i| o[i]);
            for x in 0..m {
                for y in 0..m {
                    let q = popcount(idx[y]) - popcount(idx[x]) + n as i64;
                    iq[q as usize] += a[(x, y)] * b[(y, x)];
                }
            }
        }
    }
    out
}

fn dense_intensities(
    v: &CMat,
    w: &CMat,
    rho: &CMat,
    obs: &[Vec<f64>],
    n: usize,
) -> Vec<Intensities> {
    let dim = v.nrows();
    let a = v * rho * v.adjoint();
    let wd = adjoint(w.as_ref());
    obs.iter()
        .map(|o| {
            let ow = Mat::from_fn(dim, dim, |i, j| w[(i, j)] * o[i]);
            let b = &wd * &ow;
            let mut iq = zeros(n);
            for x in 0..dim {
                for y in 0..dim {
                    let q = popcount(y) - popcount(x) + n as i64;
                    iq[q as usize] += a[(x, y)] * b[(y, x)];
                }
            }
            iq
        })
        .collect()
}

fn cycles_for(t: f64, period: f64) -> Result<usize> {
    if period <= 0.0 {
        return Err(Error::InvalidArgument(
            "pulse cycle has zero duration".into(),
        ));
    }
    let m = (t / period).round();
    if (m * period - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a whole number of cycles of length {period}"
        )));
    }
    Ok(m as usize)
}

fn mat_pow(u: &CMat, m: usize) -> CMat {
    let mut acc = crate::linalg::identity(u.nrows());
    for _ in 0..m {
        acc = u * &acc;
    }
    acc
}

/// Dense `(V, W)` per time point for pulsed evolutions.
fn dense_pairs(p: &ExperimentProtocol) -> Result<Vec<(CMat, CMat)>> {
    match &p.evolution {
        Evolution::Hamiltonian { h } => {
            let be = BlockEigen::new(&h.compile())?;
            Ok(p.times
                .iter()
                .map(|&t| (be.unitary(t), be.unitary(-t)))
                .collect())
        }
        Evolution::Pair { forward, backward } => {
            let f = BlockEigen::new(&forward.compile())?;
            let b = BlockEigen::new(&backward.compile())?;
            Ok(p.times
                .iter()
                .map(|&t| (f.unitary(t), b.unitary(t)))
                .collect())
        }
        Evolution::Pulsed {
            forward,
            backward,
            h_int,
            mode,
        } => {
            let ux = cycle_propagator(forward, h_int, *mode)?;
            let uy = cycle_propagator(backward, h_int, *mode)?;
            let period = forward.duration(*mode);
            p.times
                .iter()
                .map(|&t| {
                    let m = cycles_for(t, period)?;
                    Ok((mat_pow(&ux, m), mat_pow(&uy, m)))
                })
                .collect()
        }
        Evolution::PulsedScan {
            h_int,
            mode,
            width,
            cycles,
        } => p
            .times
            .iter()
            .map(|&t| {
                let dim = 1usize << h_int.n_spins;
                if t == 0.0 || *cycles == 0 {
                    return Ok((crate::linalg::identity(dim), crate::linalg::identity(dim)));
                }
                let (x, y) = scan_pair(t, *width, *cycles, *mode)?;
                let ux = cycle_propagator(&x, h_int, *mode)?;
                let uy = cycle_propagator(&y, h_int, *mode)?;
                Ok((mat_pow(&ux, *cycles), mat_pow(&uy, *cycles)))
            })
            .collect(),
    }
}

fn scan_pair(
    t: f64,
    width: f64,
    cycles: usize,
    mode: PulseMode,
) -> Result<(PulseSequence, PulseSequence)> {
    let tc = t / cycles as f64;
    let w = if mode == PulseMode::FiniteWidth {
        width
    } else {
        0.0
    };
    let delta = scan_delta(tc, w);
    if delta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "cycle time {tc} is shorter than the pulses allow"
        )));
    }
    Ok((dq16(delta, w, Phase::X), dq16(delta, w, Phase::Y)))
}

/// Pure-state intensities for `rho ~ |ket><bra|` (unscaled), `[readout][time]`.
fn pair_intensities(
    p: &ExperimentProtocol,
    bra: &[C64],
    ket: &[C64],
    readouts: &[Vec<f64>],
) -> Result<Vec<Vec<Intensities>>> {
    let n = p.evolution.n_spins();
    let dim = 1usize << n;
    let obs: Vec<Vec<f64>> = readouts.iter().map(|w| diag_of(w, dim)).collect();
    let mut out = vec![Vec::with_capacity(p.times.len()); readouts.len()];
    let mut push = |row: Vec<Intensities>| {
        for (o, r) in out.iter_mut().zip(row) {
            o.push(r);
        }
    };
    match &p.evolution {
        Evolution::Hamiltonian { h } => {
            let prop = Chebyshev::new(Arc::new(h.compile()), p.tol)?;
            let (mut fb, mut fk) = (bra.to_vec(), ket.to_vec());
            let mut last = 0.0;
            for &t in &p.times {
                if t < last {
                    return Err(Error::InvalidArgument(
                        "typicality backend needs nondecreasing times".into(),
                    ));
                }
                let plan = prop.plan(t - last)?;
                prop.evolve_with(&plan, &mut fb)?;
                prop.evolve_with(&plan, &mut fk)?;
                last = t;
                let back = prop.plan(-t)?;
                let row = sector_readout(n, &fb, &fk, &obs, |v| prop.evolve_with(&back, v))?;
                push(row);
            }
        }
        Evolution::Pair { forward, backward } => {
            let fp = Chebyshev::new(Arc::new(forward.compile()), p.tol)?;
            let bp = Chebyshev::new(Arc::new(backward.compile()), p.tol)?;
            let (mut fb, mut fk) = (bra.to_vec(), ket.to_vec());
            let mut last = 0.0;
            for &t in &p.times {
                if t < last {
                    return Err(Error::InvalidArgument(
                        "typicality backend needs nondecreasing times".into(),
                    ));
                }
                let plan = fp.plan(t - last)?;
                fp.evolve_with(&plan, &mut fb)?;
                fp.evolve_with(&plan, &mut fk)?;
                last = t;
                let back = bp.plan(t)?;
                push(sector_readout(n, &fb, &fk, &obs, |v| {
                    bp.evolve_with(&back, v)
                })?);
            }
        }
        Evolution::Pulsed {
            forward,
            backward,
            h_int,
            mode,
        } => {
            let fe = PulseEngine::new(forward, h_int, *mode, p.tol)?;
            let be = PulseEngine::new(backward, h_int, *mode, p.tol)?;
            let period = forward.duration(*mode);
            let (mut fb, mut fk) = (bra.to_vec(), ket.to_vec());
            let mut done = 0usize;
            for &t in &p.times {
                let m = cycles_for(t, period)?;
                if m < done {
                    return Err(Error::InvalidArgument(
                        "typicality backend needs nondecreasing times".into(),
                    ));
                }
                fe.run_cycles(&mut fb, m - done)?;
                fe.run_cycles(&mut fk, m - done)?;
                done = m;
                push(sector_readout(n, &fb, &fk, &obs, |v| be.run_cycles(v, m))?);
            }
        }
        Evolution::PulsedScan {
            h_int,
            mode,
            width,
            cycles,
        } => {
            for &t in &p.times {
                if t == 0.0 || *cycles == 0 {
                    push(sector_readout(n, bra, ket, &obs, |_| Ok(()))?);
                    continue;
                }
                let (x, y) = scan_pair(t, *width, *cycles, *mode)?;
                let fe = PulseEngine::new(&x, h_int, *mode, p.tol)?;
                let be = PulseEngine::new(&y, h_int, *mode, p.tol)?;
                let (mut fb, mut fk) = (bra.to_vec(), ket.to_vec());
                fe.run_cycles(&mut fb, *cycles)?;
                fe.run_cycles(&mut fk, *cycles)?;
                push(sector_readout(n, &fb, &fk, &obs, |v| {
                    be.run_cycles(v, *cycles)
                })?);
            }
        }
    }
    Ok(out)
}

fn project(v: &[C64], s: usize) -> Vec<C64> {
    v.iter()
        .enumerate()
        .map(|(i, &a)| {
            if i.count_ones() as usize == s {
                a
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// `sum_{s, s'} <W alpha_s'| O |W beta_s>` binned by `q = s' - s`.
fn sector_readout(
    n: usize,
    fb: &[C64],
    fk: &[C64],
    obs: &[Vec<f64>],
    mut backward: impl FnMut(&mut [C64]) -> Result<()>,
) -> Result<Vec<Intensities>> {
    let mut bras = Vec::with_capacity(n + 1);
    for s in 0..=n {
        let mut a = project(fb, s);
        backward(&mut a)?;
        bras.push(a);
    }
    let mut out = vec![zeros(n); obs.len()];
    for s in 0..=n {
        let mut b = project(fk, s);
        backward(&mut b)?;
        for (o, iq) in obs.iter().zip(out.iter_mut()) {
            for (sp, a) in bras.iter().enumerate() {
                let g = weighted_inner(a, &b, o);
                iq[(sp as i64 - s as i64 + n as i64) as usize] += g;
            }
        }
    }
    Ok(out)
}

fn weighted_inner(a: &[C64], b: &[C64], o: &[f64]) -> C64 {
    const CHUNK: usize = 1 << 12;
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .zip(o.par_chunks(CHUNK))
        .map(|((x, y), w)| {
            x.iter()
                .zip(y)
                .zip(w)
                .map(|((p, q), &wi)| p.conj() * q * wi)
                .sum::<C64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Intra-chain and leakage readouts for an initial state confined to `source`.
pub fn split_readouts(labels: &[usize], source: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let distinct = labels.iter().any(|&l| l != labels[0]);
    if labels.is_empty() || !distinct {
        return Err(Error::InvalidArgument(
            "split needs at least two labels".into(),
        ));
    }
    let intra = labels
        .iter()
        .map(|&l| if l == source { 1.0 } else { 0.0 })
        .collect();
    let leak = labels
        .iter()
        .map(|&l| if l == source { 0.0 } else { 1.0 })
        .collect();
    Ok((intra, leak))
}

/// Raw intra-chain and leakage spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpectrum {
    pub intra: MQCSpectrum,
    pub leak: MQCSpectrum,
}

impl SplitSpectrum {
    /// Total spectrum, normalized.
    pub fn total(&self) -> Result<MQCSpectrum> {
        let mut t = self.intra.clone();
        for (a, b) in t.j.iter_mut().zip(&self.leak.j) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in t.signals.iter_mut().zip(&self.leak.signals) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in t.imag_residue.iter_mut().zip(&self.leak.imag_residue) {
            *a += b;
        }
        normalize_spectrum(&t)
    }

    /// `max_n |J_n(total) - J_n(intra)|` per time, both normalized: the change
    /// in the normalized spectrum when environment spins join the readout.
    pub fn readout_deviation(&self) -> Result<Vec<f64>> {
        let total = self.total()?;
        let intra = normalize_spectrum(&self.intra)?;
        Ok(total
            .j
            .iter()
            .zip(&intra.j)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .collect())
    }

    /// `rms_k S_leak^k / rms_k S_total^k` per time.
    pub fn leakage_fraction(&self) -> Vec<f64> {
        self.intra
            .signals
            .iter()
            .zip(&self.leak.signals)
            .map(|(i, l)| {
                let leak: f64 = l.iter().map(|x| x * x).sum();
                let tot: f64 = i.iter().zip(l).map(|(a, b)| (a + b) * (a + b)).sum();
                if tot == 0.0 { 0.0 } else { (leak / tot).sqrt() }
            })
            .collect()
    }
}

/// Runs `p` with the readout split by chain label; the initial state must be
/// confined to `source`.
pub fn split_signal(
    p: &ExperimentProtocol,
    labels: &[usize],
    source: usize,
) -> Result<SplitSpectrum> {
    if labels.len() != p.initial.n_spins {
        return Err(Error::DimensionMismatch {
            expected: p.initial.n_spins,
            got: labels.len(),
        });
    }
    if p.initial
        .terms
        .iter()
        .any(|&(s, w)| w != 0.0 && labels[s] != source)
    {
        return Err(Error::InvalidArgument(
            "initial state must live on the source chain".into(),
        ));
    }
    let (intra, leak) = split_readouts(labels, source)?;
    let mut v = run_mqc_readouts(p, &[intra, leak])?;
    let leak = v.pop().expect("two readouts");
    let intra = v.pop().expect("two readouts");
    Ok(SplitSpectrum { intra, leak })
}

/// `Lambda(m) = Tr[O W^m V^m rho V^m+ W^m+] / Tr[O rho]` for `m` in `cycles`,
/// with `O` the collective `sigma_z`; returns `(m T, Lambda)`.
pub fn run_overlap(
    seq_x: &PulseSequence,
    seq_y: &PulseSequence,
    h_int: &OperatorSpec,
    initial: &MixedStateSpec,
    cycles: &[usize],
    mode: PulseMode,
) -> Result<Vec<(f64, f64)>> {
    let n = h_int.n_spins;
    if initial.n_spins != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: initial.n_spins,
        });
    }
    exact_guard(n, CYCLE_MAX_SPINS)?;
    let dim = 1usize << n;
    let ux = cycle_propagator(seq_x, h_int, mode)?;
    let uy = cycle_propagator(seq_y, h_int, mode)?;
    let rho = initial.diagonal();
    let o = diag_of(&vec![1.0; n], dim);
    let norm: f64 = rho.iter().zip(&o).map(|(a, b)| a * b).sum();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "initial state has no sigma_z overlap".into(),
        ));
    }
    let period = seq_x.duration(mode);
    cycles
        .iter()
        .map(|&m| {
            let u = &mat_pow(&uy, m) * &mat_pow(&ux, m);
            // Tr[O U rho U^dagger] = sum_ij o_i |U_ij|^2 rho_j
            let mut s = 0.0;
            for j in 0..dim {
                for i in 0..dim {
                    s += o[i] * u[(i, j)].norm_sqr() * rho[j];
                }
            }
            Ok((m as f64 * period, s / norm))
        })
        .collect()
}

/// Pure-state version of [`run_overlap`] for systems beyond the dense limit.
pub fn run_overlap_typical(
    seq_x: &PulseSequence,
    seq_y: &PulseSequence,
    h_int: &OperatorSpec,
    initial: &MixedStateSpec,
    cycles: &[usize],
    mode: PulseMode,
    seed: u64,
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = h_int.n_spins;
    let fe = PulseEngine::new(seq_x, h_int, mode, tol)?;
    let be = PulseEngine::new(seq_y, h_int, mode, tol)?;
    let bra0 = random_state(n, seed, Amplitudes::RandomPhase);
    let mut ket0 = bra0.clone();
    initial.apply_in_place(&mut ket0.amps);
    let ones = vec![1.0; n];
    let norm = crate::states::z_expectation(&bra0.amps, &ket0.amps, &ones);
    let period = seq_x.duration(mode);
    cycles
        .iter()
        .map(|&m| {
            let (mut b, mut k) = (bra0.amps.clone(), ket0.amps.clone());
            fe.run_cycles(&mut b, m)?;
            fe.run_cycles(&mut k, m)?;
            be.run_cycles(&mut b, m)?;
            be.run_cycles(&mut k, m)?;
            let s = crate::states::z_expectation(&b, &k, &ones);
            Ok((m as f64 * period, s / norm))
        })
        .collect()
}

/// Weighted mean of per-sector norms `sum_q |I_q|^2` for a density matrix,
/// keyed by coherence order; used to check the content of prepared states.
pub fn coherence_content(rho: &DensityMatrix) -> Vec<f64> {
    let n = rho.n_spins;
    let dim = rho.dim();
    let mut out = vec![0.0; 2 * n + 1];
    for x in 0..dim {
        for y in 0..dim {
            let q = popcount(y) - popcount(x) + n as i64;
            out[q as usize] += rho.entries[(x, y)].norm_sqr();
        }
    }
    out
}
