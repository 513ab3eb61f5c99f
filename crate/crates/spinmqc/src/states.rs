//! Initial states, their pure-state typicality approximations and the
//! end-polarization preparation protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::{Axis, OperatorSpec, PureState, build_dipolar, build_site_sum};
use crate::lattice::CouplingMatrix;
use crate::propagator::exact::{DensityMatrix, EXACT_MAX_SPINS, ExactEvolver};
use crate::propagator::pulse::{PulseAxis, conjugate_collective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Thermal,
    EndPolarized,
    Custom,
}

/// `sum_j weight_j sigma^z_j` with the identity part dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedStateSpec {
    pub kind: StateKind,
    pub n_spins: usize,
    pub terms: Vec<(usize, f64)>,
    /// Polarization scale; carried as metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl MixedStateSpec {
    pub fn custom(n_spins: usize, terms: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(s, _)) = terms.iter().find(|&&(s, _)| s >= n_spins) {
            return Err(Error::InvalidArgument(format!("site {s} out of range")));
        }
        Ok(Self {
            kind: StateKind::Custom,
            n_spins,
            terms,
            epsilon: None,
        })
    }

    /// Single-site state `sigma^z_j`.
    pub fn site(n_spins: usize, j: usize) -> Result<Self> {
        Self::custom(n_spins, vec![(j, 1.0)])
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_spins];
        for &(s, v) in &self.terms {
            w[s] += v;
        }
        w
    }

    pub fn operator(&self) -> OperatorSpec {
        build_site_sum(self.n_spins, Axis::Z, &self.weights())
    }

    /// Diagonal `<i| rho |i>` on one basis index.
    pub fn diagonal_entry(&self, w: &[f64], i: usize) -> f64 {
        w.iter()
            .enumerate()
            .map(|(j, &x)| if (i >> j) & 1 == 0 { x } else { -x })
            .sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let w = self.weights();
        (0..1usize << self.n_spins)
            .map(|i| self.diagonal_entry(&w, i))
            .collect()
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        DensityMatrix::diagonal(self.n_spins, &self.diagonal())
    }

    /// Applies the operator to a state vector in place.
    pub fn apply_in_place(&self, v: &mut [C64]) {
        let w = self.weights();
        for (i, a) in v.iter_mut().enumerate() {
            *a *= self.diagonal_entry(&w, i);
        }
    }

    /// `Tr[rho^2] / 2^n`.
    pub fn norm_sqr_per_dim(&self) -> f64 {
        self.weights().iter().map(|w| w * w).sum()
    }
}

pub fn thermal_state_spec(n: usize) -> MixedStateSpec {
    MixedStateSpec {
        kind: StateKind::Thermal,
        n_spins: n,
        terms: (0..n).map(|j| (j, 1.0)).collect(),
        epsilon: None,
    }
}

pub fn end_polarized_spec(n: usize) -> Result<MixedStateSpec> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "end-polarized state needs n >= 2".into(),
        ));
    }
    Ok(MixedStateSpec {
        kind: StateKind::EndPolarized,
        n_spins: n,
        terms: vec![(0, 1.0), (n - 1, 1.0)],
        epsilon: None,
    })
}

/// Amplitude distribution of random states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplitudes {
    /// Unit modulus, uniform phase: `<R|A|R>` is exact for diagonal `A`.
    #[default]
    RandomPhase,
    /// Independent complex Gaussians, then normalized.
    Gaussian,
}

/// Normalized random state drawn from `seed`.
pub fn random_state(n_spins: usize, seed: u64, kind: Amplitudes) -> PureState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 1usize << n_spins;
    let amps: Vec<C64> = match kind {
        Amplitudes::RandomPhase => {
            let s = 1.0 / (dim as f64).sqrt();
            (0..dim)
                .map(|_| C64::from_polar(s, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        }
        Amplitudes::Gaussian => (0..dim)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re, im)
            })
            .collect(),
    };
    let mut s = PureState { n_spins, amps };
    s.normalize();
    s
}

/// `rho(0) ~ 2^n |ket><bra|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityPair {
    pub bra: PureState,
    pub ket: PureState,
    pub seed: u64,
}

impl TypicalityPair {
    /// Estimate of `Tr[O rho] / 2^n` for a diagonal observable `sum_j w_j sigma^z_j`.
    pub fn estimate_z(&self, w: &[f64]) -> f64 {
        z_expectation(&self.bra.amps, &self.ket.amps, w)
    }
}

pub fn sample_typicality_pair(spec: &MixedStateSpec, seed: u64) -> TypicalityPair {
    sample_typicality_pair_with(spec, seed, Amplitudes::RandomPhase)
}

pub fn sample_typicality_pair_with(
    spec: &MixedStateSpec,
    seed: u64,
    kind: Amplitudes,
) -> TypicalityPair {
    let bra = random_state(spec.n_spins, seed, kind);
    let mut ket = bra.clone();
    spec.apply_in_place(&mut ket.amps);
    TypicalityPair { bra, ket, seed }
}

/// `|up_j> (x) |r>` with `|r>` a normalized random state on the other sites.
///
/// With its partner `sigma^x_j` image this splits `sigma^z_j` as
/// `2^{n-1} (|up r><up r| - |down r><down r|)` on average over `|r>`.
pub fn sample_product_random(
    n_spins: usize,
    j: usize,
    seed: u64,
    kind: Amplitudes,
) -> Result<PureState> {
    if j >= n_spins || n_spins == 0 {
        return Err(Error::InvalidArgument(format!(
            "site {j} out of range for {n_spins} spins"
        )));
    }
    let rest = random_state(n_spins - 1, seed, kind);
    let dim = 1usize << n_spins;
    let low = (1usize << j) - 1;
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    for (r, &a) in rest.amps.iter().enumerate() {
        let i = (r & low) | ((r & !low) << 1);
        amps[i] = a;
    }
    Ok(PureState { n_spins, amps })
}

/// Flips site `j` of a state vector.
pub fn flip_site(s: &PureState, j: usize) -> PureState {
    let bit = 1usize << j;
    let amps = (0..s.dim()).map(|i| s.amps[i ^ bit]).collect();
    PureState {
        n_spins: s.n_spins,
        amps,
    }
}

/// `Re <a| sum_j w_j sigma^z_j |b>` with a fixed chunked reduction order.
pub fn z_expectation(a: &[C64], b: &[C64], w: &[f64]) -> f64 {
    use rayon::prelude::*;
    const CHUNK: usize = 1 << 12;
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .enumerate()
        .map(|(c, (x, y))| {
            let base = c * CHUNK;
            let mut acc = 0.0;
            for (o, (p, q)) in x.iter().zip(y).enumerate() {
                let i = base + o;
                let mut d = 0.0;
                for (j, &wj) in w.iter().enumerate() {
                    if wj != 0.0 {
                        d += if (i >> j) & 1 == 0 { wj } else { -wj };
                    }
                }
                acc += d * (p.conj() * q).re;
            }
            acc
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Phase-cycled `pi/2|_a - t1 - pi/2|_{-a}` preparation from the thermal state
/// under the dipolar Hamiltonian of `c`.
pub fn prepare_end_state(c: &CouplingMatrix, t1: f64, axes: &[PulseAxis]) -> Result<DensityMatrix> {
    Preparation::new(c, axes)?.prepare(t1)
}

/// Diagonalized dipolar evolver and rotated thermal states, reused across `t1`.
pub struct Preparation {
    n_spins: usize,
    evolver: ExactEvolver,
    rotated: Vec<(PulseAxis, DensityMatrix)>,
}

impl Preparation {
    pub fn new(c: &CouplingMatrix, axes: &[PulseAxis]) -> Result<Self> {
        let n = c.n_spins;
        if n > EXACT_MAX_SPINS {
            return Err(Error::SizeGuard {
                what: "prepare_end_state",
                n,
                max: EXACT_MAX_SPINS,
            });
        }
        if axes.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one phase-cycle axis".into(),
            ));
        }
        let evolver = ExactEvolver::new(&build_dipolar(c))?;
        let rho = thermal_state_spec(n).density()?;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let rotated = axes
            .iter()
            .map(|&a| {
                let r = DensityMatrix {
                    n_spins: n,
                    entries: conjugate_collective(&rho.entries, n, a.rotation(half_pi)),
                };
                (a, r)
            })
            .collect();
        Ok(Preparation {
            n_spins: n,
            evolver,
            rotated,
        })
    }

    pub fn prepare(&self, t1: f64) -> Result<DensityMatrix> {
        let n = self.n_spins;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let dim = 1usize << n;
        let mut acc = faer::Mat::<C64>::zeros(dim, dim);
        for (a, r1) in &self.rotated {
            let r2 = self.evolver.evolve(r1, t1)?;
            let r3 = conjugate_collective(&r2.entries, n, a.opposite().rotation(half_pi));
            acc += &r3;
        }
        let scale = C64::new(1.0 / self.rotated.len() as f64, 0.0);
        Ok(DensityMatrix {
            n_spins: n,
            entries: faer::Mat::from_fn(dim, dim, |i, j| acc[(i, j)] * scale),
        })
    }
}

/// Default phase cycle `{x, -y}`.
pub const DEFAULT_PREP_AXES: [PulseAxis; 2] = [PulseAxis::PlusX, PulseAxis::MinusY];

/// `Tr[rho_t rho] / sqrt(Tr[rho_t^2] Tr[rho^2])`.
pub fn preparation_fidelity(rho: &DensityMatrix, target: &MixedStateSpec) -> Result<f64> {
    if rho.n_spins != target.n_spins {
        return Err(Error::DimensionMismatch {
            expected: target.n_spins,
            got: rho.n_spins,
        });
    }
    let d = target.diagonal();
    let overlap: f64 = d
        .iter()
        .enumerate()
        .map(|(i, &x)| x * rho.entries[(i, i)].re)
        .sum();
    let tt: f64 = d.iter().map(|x| x * x).sum();
    let rr = rho.overlap(rho).re;
    if tt <= 0.0 || rr <= 0.0 {
        return Err(Error::Degenerate("zero-norm state in fidelity".into()));
    }
    Ok(overlap / (tt * rr).sqrt())
}

/// `Tr[sigma^z_j rho] / 2^n` per site.
pub fn site_polarizations(rho: &DensityMatrix) -> Vec<f64> {
    let dim = rho.dim();
    (0..rho.n_spins)
        .map(|j| {
            (0..dim)
                .map(|i| {
                    let v = rho.entries[(i, i)].re;
                    if (i >> j) & 1 == 0 { v } else { -v }
                })
                .sum::<f64>()
                / dim as f64
        })
        .collect()
}

/// Per-site estimate `Re <bra| sigma^z_j |ket>` from a (possibly evolved) pair.
pub fn site_polarizations_typical(p: &TypicalityPair) -> Vec<f64> {
    (0..p.bra.n_spins)
        .map(|j| {
            let mut w = vec![0.0; p.bra.n_spins];
            w[j] = 1.0;
            z_expectation(&p.bra.amps, &p.ket.amps, &w)
        })
        .collect()
}

/// One row of a preparation scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepPoint {
    pub t1: f64,
    pub fidelity: f64,
    pub end_polarization: f64,
    pub central_polarization: f64,
}

pub fn central_site(n: usize) -> usize {
    (n - 1) / 2
}

pub fn prep_scan(c: &CouplingMatrix, t1s: &[f64], axes: &[PulseAxis]) -> Result<Vec<PrepPoint>> {
    let n = c.n_spins;
    let target = end_polarized_spec(n)?;
    let prep = Preparation::new(c, axes)?;
    t1s.iter()
        .map(|&t1| {
            let rho = prep.prepare(t1)?;
            let p = site_polarizations(&rho);
            Ok(PrepPoint {
                t1,
                fidelity: preparation_fidelity(&rho, &target)?,
                end_polarization: p[0],
                central_polarization: p[central_site(n)],
            })
        })
        .collect()
}

/// Location of the fidelity maximum, refined by a parabola through the best
/// sample and its neighbours.
pub fn fidelity_peak(c: &CouplingMatrix, lo: f64, hi: f64, samples: usize) -> Result<f64> {
    let ts: Vec<f64> = (0..samples)
        .map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64)
        .collect();
    let scan = prep_scan(c, &ts, &DEFAULT_PREP_AXES)?;
    let f: Vec<f64> = scan.iter().map(|p| p.fidelity).collect();
    let k = (0..f.len())
        .max_by(|&a, &b| f[a].total_cmp(&f[b]))
        .ok_or_else(|| Error::Degenerate("empty scan".into()))?;
    if k == 0 || k + 1 == f.len() {
        return Err(Error::NotFound("fidelity maximum at scan edge".into()));
    }
    let h = ts[1] - ts[0];
    let (a, b, cc) = (f[k - 1], f[k], f[k + 1]);
    let denom = a - 2.0 * b + cc;
    let shift = if denom != 0.0 {
        0.5 * (a - cc) / denom
    } else {
        0.0
    };
    Ok(ts[k] + shift * h)
}

/// First sign change of the central-site polarization, by bisection.
pub fn central_zero_crossing(c: &CouplingMatrix, lo: f64, hi: f64, samples: usize) -> Result<f64> {
    let n = c.n_spins;
    let prep = Preparation::new(c, &DEFAULT_PREP_AXES)?;
    let central = |t: f64| -> Result<f64> {
        let rho = prep.prepare(t)?;
        Ok(site_polarizations(&rho)[central_site(n)])
    };
    let h = (hi - lo) / (samples - 1) as f64;
    let mut prev = (lo, central(lo)?);
    for i in 1..samples {
        let t = lo + h * i as f64;
        let v = central(t)?;
        if prev.1.signum() != v.signum() {
            let (mut a, mut fa, mut b) = (prev.0, prev.1, t);
            for _ in 0..40 {
                let m = 0.5 * (a + b);
                let fm = central(m)?;
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
                if b - a < 1e-6 {
                    break;
                }
            }
            return Ok(0.5 * (a + b));
        }
        prev = (t, v);
    }
    Err(Error::NotFound(
        "central polarization keeps its sign".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    #[test]
    fn spec_weights_and_dense_forms() {
        assert_eq!(thermal_state_spec(3).weights(), vec![1.0, 1.0, 1.0]);
        assert_eq!(thermal_state_spec(2).diagonal(), vec![2.0, 0.0, 0.0, -2.0]);
        assert_eq!(
            end_polarized_spec(2).unwrap().weights(),
            thermal_state_spec(2).weights()
        );
        assert!(end_polarized_spec(1).is_err());
        let e = end_polarized_spec(19).unwrap();
        assert_eq!(e.weights().iter().filter(|&&w| w != 0.0).count(), 2);
        // Tr[rho sigma_z] / 2^n by Pauli orthogonality
        assert_eq!(thermal_state_spec(5).norm_sqr_per_dim(), 5.0);
        assert_eq!(e.norm_sqr_per_dim(), 2.0);
        let dense = thermal_state_spec(3).operator().compile().dense().unwrap();
        let d = thermal_state_spec(3).diagonal();
        for (i, &v) in d.iter().enumerate() {
            assert_eq!(dense[(i, i)].re, v);
        }
    }

    #[test]
    fn typicality_estimate_at_t0() {
        let n = 12;
        let spec = thermal_state_spec(n);
        for kind in [Amplitudes::RandomPhase, Amplitudes::Gaussian] {
            let p = sample_typicality_pair_with(&spec, 7, kind);
            let est = p.estimate_z(&spec.weights());
            let tol = match kind {
                Amplitudes::RandomPhase => 1e-10,
                Amplitudes::Gaussian => 0.05,
            };
            assert!((est - n as f64).abs() < tol * n as f64, "{kind:?} {est}");
            assert!((p.bra.norm_sqr() - 1.0).abs() < 1e-12);
        }
        let a = sample_typicality_pair(&spec, 99);
        let b = sample_typicality_pair(&spec, 99);
        assert_eq!(a, b);
        assert_ne!(a.bra, sample_typicality_pair(&spec, 100).bra);
    }

    #[test]
    fn product_random_state() {
        let s = sample_product_random(5, 2, 3, Amplitudes::Gaussian).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        for (i, a) in s.amps.iter().enumerate() {
            if (i >> 2) & 1 == 1 {
                assert_eq!(*a, C64::new(0.0, 0.0));
            }
        }
        let d = flip_site(&s, 2);
        let mut w = vec![0.0; 5];
        w[2] = 1.0;
        assert!((z_expectation(&s.amps, &s.amps, &w) - 1.0).abs() < 1e-12);
        assert!((z_expectation(&d.amps, &d.amps, &w) + 1.0).abs() < 1e-12);
        assert!(sample_product_random(5, 5, 3, Amplitudes::Gaussian).is_err());
    }

    #[test]
    fn zero_delay_preparation_is_identity() {
        let c = CouplingMatrix::nn_chain(5);
        let rho = prepare_end_state(&c, 0.0, &DEFAULT_PREP_AXES).unwrap();
        let th = thermal_state_spec(5).density().unwrap();
        assert!(max_abs_diff(rho.entries.as_ref(), th.entries.as_ref()) < 1e-13);
    }

    #[test]
    fn fidelity_limits() {
        let e = end_polarized_spec(4).unwrap();
        assert!((preparation_fidelity(&e.density().unwrap(), &e).unwrap() - 1.0).abs() < 1e-14);
        let mid = MixedStateSpec::site(4, 1).unwrap().density().unwrap();
        assert_eq!(preparation_fidelity(&mid, &e).unwrap(), 0.0);
        let zero = DensityMatrix::diagonal(4, &[0.0; 16]).unwrap();
        assert!(preparation_fidelity(&zero, &e).is_err());
    }

    #[test]
    fn polarizations() {
        let p = site_polarizations(&end_polarized_spec(5).unwrap().density().unwrap());
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = CouplingMatrix::nn_chain(6);
        let rho = prepare_end_state(&c, 0.3, &DEFAULT_PREP_AXES).unwrap();
        let p = site_polarizations(&rho);
        let total = thermal_state_spec(6).diagonal();
        let tot: f64 = (0..64)
            .map(|i| total[i] * rho.entries[(i, i)].re)
            .sum::<f64>()
            / 64.0;
        assert!((p.iter().sum::<f64>() - tot).abs() < 1e-12);
    }

    #[test]
    fn end_spins_move_slower() {
        // short-time decay of <sigma^z_j> under H_dip goes as 1 - c_j t^2 with
        // c_j proportional to the number of neighbours
        let n = 6;
        let c = CouplingMatrix::nn_chain(n);
        let ev = ExactEvolver::new(&build_dipolar(&c)).unwrap();
        let t = 0.05;
        let end = MixedStateSpec::site(n, 0).unwrap().density().unwrap();
        let mid = MixedStateSpec::site(n, 2).unwrap().density().unwrap();
        let de = 1.0 - site_polarizations(&ev.evolve(&end, t).unwrap())[0];
        let dm = 1.0 - site_polarizations(&ev.evolve(&mid, t).unwrap())[2];
        let ratio = (de / dm).sqrt();
        assert!(
            (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01,
            "{ratio}"
        );
    }
}
