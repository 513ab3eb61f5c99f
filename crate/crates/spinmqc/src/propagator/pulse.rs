use std::collections::BTreeMap;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chebyshev::{Chebyshev, ChebyshevPlan};
use super::exact::ExactEvolver;
use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::{Axis, OperatorSpec, PauliSum, PureState, build_collective};
use crate::linalg::{CMat, eigh, identity, max_abs_diff, solve};

/// Largest system for dense cycle propagators.
pub const CYCLE_MAX_SPINS: usize = 10;
const CHUNK: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PulseAxis {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
}

impl PulseAxis {
    pub fn axis(self) -> Axis {
        match self {
            PulseAxis::PlusX | PulseAxis::MinusX => Axis::X,
            PulseAxis::PlusY | PulseAxis::MinusY => Axis::Y,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            PulseAxis::PlusX | PulseAxis::PlusY => 1.0,
            PulseAxis::MinusX | PulseAxis::MinusY => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            PulseAxis::PlusX => PulseAxis::MinusX,
            PulseAxis::MinusX => PulseAxis::PlusX,
            PulseAxis::PlusY => PulseAxis::MinusY,
            PulseAxis::MinusY => PulseAxis::PlusY,
        }
    }

    /// `exp(-i angle/2 sigma^axis)` on one spin, basis (up, down).
    pub fn rotation(self, angle: f64) -> [[C64; 2]; 2] {
        let th = self.sign() * angle / 2.0;
        let (s, c) = th.sin_cos();
        match self.axis() {
            Axis::X => [
                [C64::new(c, 0.0), C64::new(0.0, -s)],
                [C64::new(0.0, -s), C64::new(c, 0.0)],
            ],
            _ => [
                [C64::new(c, 0.0), C64::new(-s, 0.0)],
                [C64::new(s, 0.0), C64::new(c, 0.0)],
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Delay {
        duration: f64,
    },
    Pulse {
        axis: PulseAxis,
        angle: f64,
        width: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    Ideal,
    FiniteWidth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub events: Vec<Event>,
}

impl PulseSequence {
    pub fn empty() -> Self {
        Self { events: Vec::new() }
    }

    /// Sum of delays and pulse widths.
    pub fn cycle_time(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match *e {
                Event::Delay { duration } => duration,
                Event::Pulse { width, .. } => width,
            })
            .sum()
    }

    /// Time elapsed per cycle in the given mode; ideal pulses take no time.
    pub fn duration(&self, mode: PulseMode) -> f64 {
        match mode {
            PulseMode::FiniteWidth => self.cycle_time(),
            PulseMode::Ideal => self
                .events
                .iter()
                .map(|e| match *e {
                    Event::Delay { duration } => duration,
                    Event::Pulse { .. } => 0.0,
                })
                .sum(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            events: self.events.iter().rev().copied().collect(),
        }
    }

    pub fn is_time_symmetric(&self) -> bool {
        self.events == self.reversed().events
    }

    pub fn repeated(&self, m: usize) -> Self {
        Self {
            events: (0..m).flat_map(|_| self.events.iter().copied()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(e.to_string()))
    }
}

#[derive(Clone, Debug, Deserialize)]
struct SequenceTemplate {
    signs: Vec<i32>,
    delay_delta: Vec<f64>,
    delay_width: Vec<f64>,
}

const DQ16_DATA: &str = include_str!("../../data/dq16.json");

/// Shipped DQ-16 cycle for the given phase, delay `delta` and pulse `width`.
pub fn dq16(delta: f64, width: f64, phase: Phase) -> PulseSequence {
    let t: SequenceTemplate = serde_json::from_str(DQ16_DATA).expect("dq16 data parses");
    from_template(&t, delta, width, phase).expect("dq16 data is consistent")
}

/// The x-phase and y-phase cycles.
pub fn dq16_pair(delta: f64, width: f64) -> (PulseSequence, PulseSequence) {
    (dq16(delta, width, Phase::X), dq16(delta, width, Phase::Y))
}

/// Raw shipped sequence data.
pub fn dq16_data() -> &'static str {
    DQ16_DATA
}

fn from_template(
    t: &SequenceTemplate,
    delta: f64,
    width: f64,
    phase: Phase,
) -> Result<PulseSequence> {
    if t.delay_delta.len() != t.signs.len() + 1 || t.delay_width.len() != t.delay_delta.len() {
        return Err(Error::Data(
            "delay list must be one longer than the pulse list".into(),
        ));
    }
    let mut events = Vec::new();
    for (k, (&dd, &dw)) in t.delay_delta.iter().zip(&t.delay_width).enumerate() {
        let d = dd * delta + dw * width;
        if d > 0.0 {
            events.push(Event::Delay { duration: d });
        }
        if let Some(&s) = t.signs.get(k) {
            let axis = match (phase, s > 0) {
                (Phase::X, true) => PulseAxis::PlusX,
                (Phase::X, false) => PulseAxis::MinusX,
                (Phase::Y, true) => PulseAxis::PlusY,
                (Phase::Y, false) => PulseAxis::MinusY,
            };
            events.push(Event::Pulse {
                axis,
                angle: std::f64::consts::FRAC_PI_2,
                width,
            });
        }
    }
    Ok(PulseSequence { events })
}

/// Applies the same single-spin gate to every spin of a state vector.
pub fn rotate_all(v: &mut [C64], n_spins: usize, g: [[C64; 2]; 2]) {
    for site in 0..n_spins {
        rotate_site(v, site, g);
    }
}

pub fn rotate_site(v: &mut [C64], site: usize, g: [[C64; 2]; 2]) {
    let bit = 1usize << site;
    let block = bit << 1;
    let step = block.max(CHUNK);
    v.par_chunks_mut(step).for_each(|chunk| {
        for base in (0..chunk.len()).step_by(block) {
            for o in 0..bit {
                let (i0, i1) = (base + o, base + o + bit);
                let (a, b) = (chunk[i0], chunk[i1]);
                chunk[i0] = g[0][0] * a + g[0][1] * b;
                chunk[i1] = g[1][0] * a + g[1][1] * b;
            }
        }
    });
}

/// `g^{(x)n} m (g^{(x)n})^dagger` for a dense `m`.
pub fn conjugate_collective(m: &CMat, n_spins: usize, g: [[C64; 2]; 2]) -> CMat {
    let mut left = m.clone();
    rotate_rows(&mut left, n_spins, g);
    let mut right = crate::linalg::adjoint(left.as_ref());
    rotate_rows(&mut right, n_spins, g);
    crate::linalg::adjoint(right.as_ref())
}

/// Left-multiplies a dense matrix by the collective gate.
pub fn rotate_rows(m: &mut CMat, n_spins: usize, g: [[C64; 2]; 2]) {
    let dim = m.nrows();
    for site in 0..n_spins {
        let bit = 1usize << site;
        for c in 0..m.ncols() {
            for i0 in (0..dim).filter(|i| i & bit == 0) {
                let i1 = i0 | bit;
                let (a, b) = (m[(i0, c)], m[(i1, c)]);
                m[(i0, c)] = g[0][0] * a + g[0][1] * b;
                m[(i1, c)] = g[1][0] * a + g[1][1] * b;
            }
        }
    }
}

fn time_key(t: f64) -> u64 {
    t.to_bits()
}

fn pulse_generator(
    h_int: &OperatorSpec,
    axis: PulseAxis,
    angle: f64,
    width: f64,
) -> Result<OperatorSpec> {
    if width <= 0.0 {
        return Err(Error::ZeroWidthPulse);
    }
    let mut op = h_int.clone();
    let rf =
        build_collective(h_int.n_spins, axis.axis()).scaled(axis.sign() * angle / (2.0 * width));
    op.extend(&rf)?;
    Ok(op)
}

/// State-vector pulse-train evolution with Chebyshev delays.
#[derive(Clone, Debug)]
pub struct PulseEngine {
    n_spins: usize,
    mode: PulseMode,
    events: Vec<Event>,
    free: Chebyshev,
    plans: BTreeMap<u64, ChebyshevPlan>,
    driven: BTreeMap<(PulseAxis, u64, u64), (Chebyshev, ChebyshevPlan)>,
}

impl PulseEngine {
    pub fn new(
        seq: &PulseSequence,
        h_int: &OperatorSpec,
        mode: PulseMode,
        tol: f64,
    ) -> Result<Self> {
        if !h_int.is_hermitian() {
            return Err(Error::NonHermitian);
        }
        let free = Chebyshev::new(Arc::new(h_int.compile()), tol)?;
        let mut plans = BTreeMap::new();
        let mut driven = BTreeMap::new();
        for e in &seq.events {
            match *e {
                Event::Delay { duration } => {
                    if let std::collections::btree_map::Entry::Vacant(v) =
                        plans.entry(time_key(duration))
                    {
                        v.insert(free.plan(duration)?);
                    }
                }
                Event::Pulse { axis, angle, width } if mode == PulseMode::FiniteWidth => {
                    let key = (axis, angle.to_bits(), width.to_bits());
                    if let std::collections::btree_map::Entry::Vacant(v) = driven.entry(key) {
                        let op = pulse_generator(h_int, axis, angle, width)?;
                        let prop = Chebyshev::new(Arc::new(op.compile()), tol)?;
                        let plan = prop.plan(width)?;
                        v.insert((prop, plan));
                    }
                }
                Event::Pulse { .. } => {}
            }
        }
        Ok(Self {
            n_spins: h_int.n_spins,
            mode,
            events: seq.events.clone(),
            free,
            plans,
            driven,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// One pass through the sequence.
    pub fn run(&self, v: &mut [C64]) -> Result<()> {
        for e in &self.events {
            match *e {
                Event::Delay { duration } => {
                    self.free.evolve_with(&self.plans[&time_key(duration)], v)?;
                }
                Event::Pulse { axis, angle, width } => match self.mode {
                    PulseMode::Ideal => rotate_all(v, self.n_spins, axis.rotation(angle)),
                    PulseMode::FiniteWidth => {
                        let (p, plan) = &self.driven[&(axis, angle.to_bits(), width.to_bits())];
                        p.evolve_with(plan, v)?;
                    }
                },
            }
        }
        Ok(())
    }

    pub fn run_cycles(&self, v: &mut [C64], cycles: usize) -> Result<()> {
        for _ in 0..cycles {
            self.run(v)?;
        }
        Ok(())
    }
}

/// Evolves `s` through one pass of `seq`.
pub fn apply_pulse_sequence(
    seq: &PulseSequence,
    h_int: &OperatorSpec,
    s: &PureState,
    mode: PulseMode,
) -> Result<PureState> {
    if h_int.n_spins != s.n_spins {
        return Err(Error::DimensionMismatch {
            expected: h_int.n_spins,
            got: s.n_spins,
        });
    }
    let engine = PulseEngine::new(seq, h_int, mode, 1e-13)?;
    let mut out = s.clone();
    engine.run(&mut out.amps)?;
    Ok(out)
}

/// Dense one-cycle unitary.
pub fn cycle_propagator(
    seq: &PulseSequence,
    h_int: &OperatorSpec,
    mode: PulseMode,
) -> Result<CMat> {
    let n = h_int.n_spins;
    if n > CYCLE_MAX_SPINS {
        return Err(Error::SizeGuard {
            what: "cycle_propagator",
            n,
            max: CYCLE_MAX_SPINS,
        });
    }
    let free = ExactEvolver::new(h_int)?;
    let mut delays: BTreeMap<u64, CMat> = BTreeMap::new();
    let mut driven: BTreeMap<(PulseAxis, u64, u64), CMat> = BTreeMap::new();
    let mut u = identity(1 << n);
    for e in &seq.events {
        match *e {
            Event::Delay { duration } => {
                let k = time_key(duration);
                delays.entry(k).or_insert_with(|| free.unitary(duration));
                u = &delays[&k] * &u;
            }
            Event::Pulse { axis, angle, width } => match mode {
                PulseMode::Ideal => rotate_rows(&mut u, n, axis.rotation(angle)),
                PulseMode::FiniteWidth => {
                    let key = (axis, angle.to_bits(), width.to_bits());
                    if let std::collections::btree_map::Entry::Vacant(v) = driven.entry(key) {
                        let op = pulse_generator(h_int, axis, angle, width)?;
                        let e = eigh(op.compile().dense()?.as_ref())?;
                        v.insert(e.expm(width));
                    }
                    u = &driven[&key] * &u;
                }
            },
        }
    }
    Ok(u)
}

/// Principal-branch effective Hamiltonian `H_eff` with `U = exp(-i H_eff T)`.
///
/// The logarithm goes through the Cayley transform `C = i (1 + U)^{-1} (1 - U)`,
/// which is Hermitian with eigenvalues `-tan(theta/2)` for eigenphases
/// `exp(-i theta)` of `U`.
pub fn effective_hamiltonian_of(u: &CMat, t: f64) -> Result<CMat> {
    let dim = u.nrows();
    let id = identity(dim);
    let plus = &id + u;
    let minus = &id - u;
    let c = solve(plus.as_ref(), minus.as_ref());
    if (0..dim).any(|j| (0..dim).any(|i| !c[(i, j)].is_finite())) {
        return Err(Error::BranchAmbiguity(
            "propagator has eigenvalue -1".into(),
        ));
    }
    let c = Mat::from_fn(dim, dim, |i, j| {
        let a = C64::new(0.0, 1.0) * c[(i, j)];
        let b = (C64::new(0.0, 1.0) * c[(j, i)]).conj();
        (a + b) * 0.5
    });
    let e = eigh(c.as_ref())?;
    let thetas: Vec<f64> = e.values.iter().map(|&x| -2.0 * x.atan()).collect();
    let worst = thetas.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if worst >= 0.999 * std::f64::consts::PI {
        return Err(Error::BranchAmbiguity(format!(
            "eigenphase {worst:.6} too close to pi"
        )));
    }
    let q = &e.vectors;
    let rebuilt = {
        let fq = Mat::from_fn(dim, dim, |i, j| {
            q[(i, j)] * C64::from_polar(1.0, -thetas[j])
        });
        &fq * q.adjoint()
    };
    let err = max_abs_diff(rebuilt.as_ref(), u.as_ref());
    if err > 1e-8 {
        return Err(Error::BranchAmbiguity(format!(
            "logarithm reconstruction error {err:.3e}"
        )));
    }
    let scaled = Mat::from_fn(dim, dim, |i, j| q[(i, j)] * (thetas[j] / t));
    Ok(&scaled * q.adjoint())
}

pub fn effective_hamiltonian(
    seq: &PulseSequence,
    h_int: &OperatorSpec,
    mode: PulseMode,
) -> Result<CMat> {
    let u = cycle_propagator(seq, h_int, mode)?;
    effective_hamiltonian_of(&u, seq.duration(mode))
}

/// `g^dagger sigma_a g = sum_b m[a][b] sigma_b` for `a, b` in `(x, y, z)`.
fn pauli_map(g: [[C64; 2]; 2]) -> [[f64; 3]; 3] {
    let i = C64::new(0.0, 1.0);
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    let sig = [[[o, l], [l, o]], [[o, -i], [i, o]], [[l, o], [o, -l]]];
    let mul = |a: [[C64; 2]; 2], b: [[C64; 2]; 2]| {
        let mut c = [[o; 2]; 2];
        for r in 0..2 {
            for k in 0..2 {
                c[r][k] = a[r][0] * b[0][k] + a[r][1] * b[1][k];
            }
        }
        c
    };
    let gd = [
        [g[0][0].conj(), g[1][0].conj()],
        [g[0][1].conj(), g[1][1].conj()],
    ];
    let mut m = [[0.0; 3]; 3];
    for a in 0..3 {
        let t = mul(mul(gd, sig[a]), g);
        for b in 0..3 {
            let p = mul(sig[b], t);
            m[a][b] = 0.5 * (p[0][0] + p[1][1]).re;
        }
    }
    m
}

/// Zeroth-order average of `h_int` over the toggling frames of `seq`,
/// with instantaneous pulses and weights given by the delays.
pub fn average_hamiltonian(seq: &PulseSequence, h_int: &OperatorSpec) -> Result<OperatorSpec> {
    if !h_int.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    let total = seq.duration(PulseMode::Ideal);
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "sequence has no free evolution".into(),
        ));
    }
    let n = h_int.n_spins;
    let strings: Vec<((u64, u64), f64)> = h_int
        .pauli_strings()
        .into_iter()
        .map(|(k, c)| (k, c.re))
        .collect();
    let mut frame = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut acc: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    const BITS: [(bool, bool); 3] = [(true, false), (true, true), (false, true)];
    for e in &seq.events {
        match *e {
            Event::Pulse { axis, angle, .. } => {
                let m = pauli_map(axis.rotation(angle));
                let mut next = [[0.0; 3]; 3];
                for a in 0..3 {
                    for c in 0..3 {
                        next[a][c] = (0..3).map(|b| m[a][b] * frame[b][c]).sum();
                    }
                }
                frame = next;
            }
            Event::Delay { duration } => {
                let w = duration / total;
                for &((x, z), c) in &strings {
                    let mut parts: Vec<(u64, u64, f64)> = vec![(0, 0, c * w)];
                    for site in 0..n {
                        let bit = 1u64 << site;
                        let a = match (x & bit != 0, z & bit != 0) {
                            (false, false) => continue,
                            (true, false) => 0,
                            (true, true) => 1,
                            (false, true) => 2,
                        };
                        let mut grown = Vec::with_capacity(parts.len() * 3);
                        for &(px, pz, pc) in &parts {
                            for (b, &(bx, bz)) in BITS.iter().enumerate() {
                                let f = frame[a][b];
                                if f.abs() > 1e-15 {
                                    grown.push((
                                        if bx { px | bit } else { px },
                                        if bz { pz | bit } else { pz },
                                        pc * f,
                                    ));
                                }
                            }
                        }
                        parts = grown;
                    }
                    for (px, pz, pc) in parts {
                        *acc.entry((px, pz)).or_insert(0.0) += pc;
                    }
                }
            }
        }
    }
    let mut op = OperatorSpec::new(n);
    for ((x, z), c) in acc {
        if c.abs() < 1e-14 {
            continue;
        }
        let factors: Vec<(usize, Axis)> = (0..n)
            .filter_map(|s| {
                let bit = 1u64 << s;
                match (x & bit != 0, z & bit != 0) {
                    (true, false) => Some((s, Axis::X)),
                    (true, true) => Some((s, Axis::Y)),
                    (false, true) => Some((s, Axis::Z)),
                    _ => None,
                }
            })
            .collect();
        op.push(c, &factors)?;
    }
    Ok(op)
}

/// Relative Frobenius distance `|a - b| / |b|`.
pub fn relative_distance(a: &CMat, b: &CMat) -> f64 {
    let d = a - b;
    d.norm_l2() / b.norm_l2()
}

/// Dense `exp(-i op t)` for small systems.
pub fn dense_propagator(op: &PauliSum, t: f64) -> Result<CMat> {
    Ok(eigh(op.dense()?.as_ref())?.expm(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_dipolar, build_dq};
    use crate::lattice::CouplingMatrix;

    fn dq_dense(n: usize) -> CMat {
        build_dq(&CouplingMatrix::nn_chain(n))
            .compile()
            .dense()
            .unwrap()
    }

    #[test]
    fn empty_sequence_is_identity() {
        let h = build_dipolar(&CouplingMatrix::nn_chain(3));
        let u = cycle_propagator(&PulseSequence::empty(), &h, PulseMode::Ideal).unwrap();
        assert!(max_abs_diff(u.as_ref(), identity(8).as_ref()) < 1e-15);
        let s = PureState::basis(3, 5);
        assert_eq!(
            apply_pulse_sequence(&PulseSequence::empty(), &h, &s, PulseMode::Ideal).unwrap(),
            s
        );
    }

    #[test]
    fn single_pulse_superposition() {
        let n = 3;
        let h = OperatorSpec::new(n);
        let seq = PulseSequence {
            events: vec![Event::Pulse {
                axis: PulseAxis::PlusX,
                angle: std::f64::consts::FRAC_PI_2,
                width: 0.0,
            }],
        };
        let out = apply_pulse_sequence(&seq, &h, &PureState::all_up(n), PulseMode::Ideal).unwrap();
        for (i, a) in out.amps.iter().enumerate() {
            let flips = (i as u32).count_ones();
            let want = C64::new(0.0, -1.0).powu(flips) * (0.5f64).powf(n as f64 / 2.0);
            assert!((a - want).norm() < 1e-15);
        }
    }

    #[test]
    fn dq16_structure() {
        let (x, y) = dq16_pair(0.0225, 0.0075);
        assert!((x.cycle_time() - 0.72).abs() < 1e-12);
        assert!((x.duration(PulseMode::Ideal) - 0.6).abs() < 1e-12);
        assert!(x.is_time_symmetric() && y.is_time_symmetric());
        let pulses = x
            .events
            .iter()
            .filter(|e| matches!(e, Event::Pulse { .. }))
            .count();
        assert_eq!(pulses, 16);
        let back = PulseSequence::from_json(&x.to_json()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn dq16_zeroth_order() {
        let n = 4;
        let h = build_dipolar(&CouplingMatrix::nn_chain(n));
        let dq = dq_dense(n);
        let minus = Mat::from_fn(16, 16, |i, j| -dq[(i, j)]);
        let tc = 0.012;
        let (x, y) = dq16_pair(tc / 24.0, 0.0);
        let hx = effective_hamiltonian(&x, &h, PulseMode::Ideal).unwrap();
        let hy = effective_hamiltonian(&y, &h, PulseMode::Ideal).unwrap();
        assert!(relative_distance(&hx, &minus) < 1e-3);
        assert!(relative_distance(&hy, &dq) < 1e-3);
    }

    #[test]
    fn aht_error_is_second_order() {
        let n = 4;
        let h = build_dipolar(&CouplingMatrix::nn_chain(n));
        let dq = dq_dense(n);
        let minus = Mat::from_fn(16, 16, |i, j| -dq[(i, j)]);
        let err = |tc: f64| {
            let x = dq16(tc / 24.0, 0.0, Phase::X);
            relative_distance(
                &effective_hamiltonian(&x, &h, PulseMode::Ideal).unwrap(),
                &minus,
            )
        };
        let (e1, e2) = (err(0.25), err(0.5));
        assert!(e2 < 0.05);
        let ratio = e2 / e1;
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn log_of_exact_exponential() {
        let op = build_dq(&CouplingMatrix::nn_chain(4)).compile();
        let u = dense_propagator(&op, 0.7).unwrap();
        let h = effective_hamiltonian_of(&u, 0.7).unwrap();
        assert!(max_abs_diff(h.as_ref(), op.dense().unwrap().as_ref()) < 1e-10);
        let mut near_pi = identity(4);
        near_pi[(1, 1)] = C64::from_polar(1.0, -0.9995 * std::f64::consts::PI);
        assert!(matches!(
            effective_hamiltonian_of(&near_pi, 1.0),
            Err(Error::BranchAmbiguity(_))
        ));
        let minus = Mat::from_fn(4, 4, |i, j| -identity(4)[(i, j)]);
        assert!(effective_hamiltonian_of(&minus, 1.0).is_err());
    }

    #[test]
    fn time_symmetric_sequence_matches_reverse() {
        let h = build_dipolar(&CouplingMatrix::nn_chain(4));
        let x = dq16(1.0 / 24.0, 0.0, Phase::X);
        let a = effective_hamiltonian(&x, &h, PulseMode::Ideal).unwrap();
        let b = effective_hamiltonian(&x.reversed(), &h, PulseMode::Ideal).unwrap();
        assert!(max_abs_diff(a.as_ref(), b.as_ref()) < 1e-12);
    }

    #[test]
    fn y_cycle_inverts_x_cycle_at_leading_order() {
        let h = build_dipolar(&CouplingMatrix::nn_chain(4));
        let residual = |delta: f64| {
            let (x, y) = dq16_pair(delta, 0.0);
            let ux = cycle_propagator(&x, &h, PulseMode::Ideal).unwrap();
            let uy = cycle_propagator(&y, &h, PulseMode::Ideal).unwrap();
            let udag = crate::linalg::adjoint(ux.as_ref());
            assert!(max_abs_diff((&ux * &udag).as_ref(), identity(16).as_ref()) < 1e-12);
            max_abs_diff((&uy * &ux).as_ref(), identity(16).as_ref())
        };
        // leading terms cancel, the remainder is third order in the cycle time
        let ratio = residual(0.01) / residual(0.005);
        assert!((ratio - 8.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn finite_width_correction_is_small() {
        let n = 4;
        let h = build_dipolar(&CouplingMatrix::nn_chain(n));
        let w = 0.0075;
        let x_ideal = dq16(0.0225, 0.0, Phase::X);
        let x_fin = dq16(0.0225, w, Phase::X);
        let a = effective_hamiltonian(&x_ideal, &h, PulseMode::Ideal).unwrap();
        let b = effective_hamiltonian(&x_fin, &h, PulseMode::FiniteWidth).unwrap();
        let dq = dq_dense(n);
        let minus = Mat::from_fn(16, 16, |i, j| -dq[(i, j)]);
        let ea = relative_distance(&a, &minus);
        let eb = relative_distance(&b, &minus);
        assert!(ea < 0.05 && eb < 0.05, "{ea} {eb}");
        assert!(matches!(
            PulseEngine::new(&dq16(0.1, 0.0, Phase::X), &h, PulseMode::FiniteWidth, 1e-12),
            Err(Error::ZeroWidthPulse)
        ));
    }

    #[test]
    fn average_hamiltonian_of_dq16() {
        let c = CouplingMatrix::nn_chain(4);
        let h = build_dipolar(&c);
        let dq = build_dq(&c).compile().dense().unwrap();
        let minus = Mat::from_fn(16, 16, |i, j| -dq[(i, j)]);
        let (x, y) = dq16_pair(0.1, 0.0);
        let ax = average_hamiltonian(&x, &h)
            .unwrap()
            .compile()
            .dense()
            .unwrap();
        let ay = average_hamiltonian(&y, &h)
            .unwrap()
            .compile()
            .dense()
            .unwrap();
        assert!(max_abs_diff(ax.as_ref(), minus.as_ref()) < 1e-12);
        assert!(max_abs_diff(ay.as_ref(), dq.as_ref()) < 1e-12);
        // the sign pattern also cancels resonance offsets
        let hz = build_collective(4, Axis::Z);
        assert!(average_hamiltonian(&x, &hz).unwrap().terms.is_empty());
    }

    #[test]
    fn vector_path_matches_dense_cycle() {
        let n = 5;
        let h = build_dipolar(&CouplingMatrix::nn_chain(n));
        for mode in [PulseMode::Ideal, PulseMode::FiniteWidth] {
            let x = dq16(0.05, 0.01, Phase::X);
            let u = cycle_propagator(&x, &h, mode).unwrap();
            let mut s = PureState::basis(n, 0b10110);
            s.amps[1] = C64::new(0.3, -0.2);
            s.normalize();
            let out = apply_pulse_sequence(&x, &h, &s, mode).unwrap();
            for r in 0..32 {
                let e: C64 = (0..32).map(|c| u[(r, c)] * s.amps[c]).sum();
                assert!((e - out.amps[r]).norm() < 1e-11);
            }
        }
    }
}
