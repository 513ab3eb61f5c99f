use std::sync::Arc;

use rayon::prelude::*;

use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::{OperatorSpec, PauliSum, PureState};

/// Relative padding of the scaling interval beyond the spectral bounds.
pub const INTERVAL_PADDING: f64 = 0.05;
pub const DEFAULT_ORDER_CAP: usize = 200_000;
const CHUNK: usize = 1 << 12;

/// Bessel functions `J_0(x) .. J_kmax(x)` by Miller's backward recurrence,
/// normalized with `J_0 + 2 sum J_2k = 1`.
pub fn bessel_j_all(x: f64, kmax: usize) -> Vec<f64> {
    if x == 0.0 {
        let mut v = vec![0.0; kmax + 1];
        v[0] = 1.0;
        return v;
    }
    let ax = x.abs();
    let start = kmax.max(ax as usize) + 30 + (10.0 * ax.cbrt()) as usize;
    let start = start + (start & 1);
    let mut out = vec![0.0; kmax + 1];
    let (mut jp1, mut j) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    for k in (0..start).rev() {
        let jm1 = 2.0 * (k + 1) as f64 / ax * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        if k <= kmax {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
    }
    for (k, v) in out.iter_mut().enumerate() {
        *v /= norm;
        if x < 0.0 && k % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// Expansion coefficients for one time step.
#[derive(Clone, Debug)]
pub struct ChebyshevPlan {
    pub t: f64,
    /// `(2 - delta_k0) (-i)^k J_k(a t)`, with the global phase folded in.
    pub coefs: Vec<C64>,
}

/// `exp(-i H t)` on state vectors by Chebyshev expansion.
#[derive(Clone, Debug)]
pub struct Chebyshev {
    op: Arc<PauliSum>,
    center: f64,
    half_width: f64,
    tol: f64,
    order_cap: usize,
}

impl Chebyshev {
    pub fn new(op: Arc<PauliSum>, tol: f64) -> Result<Self> {
        let (lo, hi) = op.spectral_bounds();
        Self::with_bounds(op, (lo, hi), tol)
    }

    pub fn with_bounds(op: Arc<PauliSum>, (lo, hi): (f64, f64), tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {tol}"
            )));
        }
        let center = 0.5 * (hi + lo);
        let half = 0.5 * (hi - lo);
        let half_width = (half * (1.0 + INTERVAL_PADDING)).max(1e-12);
        Ok(Self {
            op,
            center,
            half_width,
            tol,
            order_cap: DEFAULT_ORDER_CAP,
        })
    }

    pub fn with_order_cap(mut self, cap: usize) -> Self {
        self.order_cap = cap;
        self
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn operator(&self) -> &PauliSum {
        &self.op
    }

    /// Coefficients up to the first order `k >= a t` whose tail bound
    /// `2 |J_k|` drops below `tol / 10`.
    pub fn plan(&self, t: f64) -> Result<ChebyshevPlan> {
        let x = self.half_width * t;
        let target = self.tol / 10.0;
        let mut kmax = (1.5 * x.abs()) as usize + 40;
        loop {
            let j = bessel_j_all(x, kmax.min(self.order_cap));
            let first = (x.abs().ceil() as usize).min(j.len() - 1);
            let cut = (first..j.len()).find(|&k| {
                2.0 * j[k].abs() < target && j.get(k + 1).is_none_or(|v| 2.0 * v.abs() < target)
            });
            if let Some(k) = cut {
                let phase = C64::from_polar(1.0, -self.center * t);
                let coefs = (0..=k)
                    .map(|n| {
                        let w = if n == 0 { 1.0 } else { 2.0 };
                        let ik = match n % 4 {
                            0 => C64::new(1.0, 0.0),
                            1 => C64::new(0.0, -1.0),
                            2 => C64::new(-1.0, 0.0),
                            _ => C64::new(0.0, 1.0),
                        };
                        phase * ik * (w * j[n])
                    })
                    .collect();
                return Ok(ChebyshevPlan { t, coefs });
            }
            if kmax >= self.order_cap {
                return Err(Error::OrderCap {
                    tol: self.tol,
                    cap: self.order_cap,
                });
            }
            kmax = (kmax * 2).min(self.order_cap);
        }
    }

    /// Evolves `v` in place by a precomputed plan.
    pub fn evolve_with(&self, plan: &ChebyshevPlan, v: &mut [C64]) -> Result<()> {
        let dim = v.len();
        if plan.t == 0.0 {
            return Ok(());
        }
        let (c, a) = (self.center, self.half_width);
        let mut prev = v.to_vec();
        let mut cur = vec![C64::new(0.0, 0.0); dim];
        let mut hv = vec![C64::new(0.0, 0.0); dim];
        let c0 = plan.coefs[0];
        // cur = H_hat prev
        self.op.apply_into(&prev, &mut hv)?;
        cur.par_chunks_mut(CHUNK)
            .zip(hv.par_chunks(CHUNK))
            .zip(prev.par_chunks(CHUNK))
            .for_each(|((o, h), p)| {
                for ((o, h), p) in o.iter_mut().zip(h).zip(p) {
                    *o = (*h - *p * c) / a;
                }
            });
        let c1 = plan.coefs.get(1).copied().unwrap_or_default();
        v.par_chunks_mut(CHUNK)
            .zip(cur.par_chunks(CHUNK))
            .for_each(|(o, q)| {
                for (o, q) in o.iter_mut().zip(q) {
                    *o = *o * c0 + *q * c1;
                }
            });
        for &ck in plan.coefs.iter().skip(2) {
            self.op.apply_into(&cur, &mut hv)?;
            // prev <- 2 H_hat cur - prev, then swap roles
            prev.par_chunks_mut(CHUNK)
                .zip(hv.par_chunks(CHUNK))
                .zip(cur.par_chunks(CHUNK))
                .zip(v.par_chunks_mut(CHUNK))
                .for_each(|(((p, h), q), o)| {
                    for (((p, h), q), o) in p.iter_mut().zip(h).zip(q).zip(o) {
                        *p = (*h - *q * c) * (2.0 / a) - *p;
                        *o += *p * ck;
                    }
                });
            std::mem::swap(&mut prev, &mut cur);
        }
        Ok(())
    }

    pub fn evolve(&self, v: &mut [C64], t: f64) -> Result<()> {
        let plan = self.plan(t)?;
        self.evolve_with(&plan, v)
    }
}

/// `exp(-i op t) s`.
pub fn evolve_chebyshev(op: &OperatorSpec, s: &PureState, t: f64, tol: f64) -> Result<PureState> {
    if !op.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    if op.n_spins != s.n_spins {
        return Err(Error::DimensionMismatch {
            expected: op.n_spins,
            got: s.n_spins,
        });
    }
    let prop = Chebyshev::new(Arc::new(op.compile()), tol)?;
    let mut out = s.clone();
    prop.evolve(&mut out.amps, t)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Axis, build_collective, build_dipolar, dense_matrix};
    use crate::lattice::{CouplingMatrix, Truncation, build_chain_geometry, coupling_matrix};
    use crate::linalg::eigh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bessel_reference_values() {
        let j = bessel_j_all(1.0, 5);
        assert!((j[0] - 0.7651976865579666).abs() < 1e-15);
        assert!((j[1] - 0.4400505857449335).abs() < 1e-15);
        let j = bessel_j_all(10.0, 5);
        assert!((j[5] + 0.2340615281867936).abs() < 1e-14);
        let j = bessel_j_all(100.0, 0);
        assert!((j[0] - 0.0199858503042231).abs() < 1e-13);
        let j = bessel_j_all(-1.0, 1);
        assert!((j[1] + 0.4400505857449335).abs() < 1e-15);
    }

    #[test]
    fn zero_time_is_identity() {
        let op = build_collective(3, Axis::X);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let amps: Vec<C64> = (0..8)
            .map(|_| C64::new(rng.random(), rng.random()))
            .collect();
        let s = PureState::from_amps(3, amps).unwrap();
        assert_eq!(evolve_chebyshev(&op, &s, 0.0, 1e-12).unwrap(), s);
    }

    #[test]
    fn eigenstate_phase() {
        let op = build_collective(4, Axis::Z);
        let k = 0b0010;
        let m = 2.0;
        let out = evolve_chebyshev(&op, &PureState::basis(4, k), 1.7, 1e-13).unwrap();
        let want = C64::from_polar(1.0, -m * 1.7);
        assert!((out.amps[k] - want).norm() < 1e-12);
        assert!(
            out.amps
                .iter()
                .enumerate()
                .all(|(i, a)| i == k || a.norm() < 1e-13)
        );
    }

    fn random_hermitian(n: usize, seed: u64) -> OperatorSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes = [Axis::X, Axis::Y, Axis::Z];
        let mut op = OperatorSpec::new(n);
        for _ in 0..3 * n {
            let j = rng.random_range(0..n);
            let l = (j + 1 + rng.random_range(0..n - 1)) % n;
            op.push(
                rng.random_range(-1.0..1.0),
                &[
                    (j, axes[rng.random_range(0..3)]),
                    (l, axes[rng.random_range(0..3)]),
                ],
            )
            .unwrap();
            op.push(
                rng.random_range(-1.0..1.0),
                &[(j, axes[rng.random_range(0..3)])],
            )
            .unwrap();
        }
        op
    }

    #[test]
    fn matches_dense_exponential_n8() {
        let op = random_hermitian(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = PureState::from_amps(
            8,
            (0..256)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        s.normalize();
        let out = evolve_chebyshev(&op, &s, 5.0, 1e-13).unwrap();
        let u = eigh(dense_matrix(&op).unwrap().as_ref()).unwrap().expm(5.0);
        let exact: Vec<C64> = (0..256)
            .map(|r| (0..256).map(|c| u[(r, c)] * s.amps[c]).sum())
            .collect();
        let overlap: C64 = exact.iter().zip(&out.amps).map(|(a, b)| a.conj() * b).sum();
        assert!(overlap.norm_sqr() > 1.0 - 1e-12);
        let err: f64 = exact
            .iter()
            .zip(&out.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(err.sqrt() < 1e-11);
    }

    #[test]
    fn composition_and_norm() {
        let c = coupling_matrix(&build_chain_geometry(9).unwrap(), Truncation::Full).unwrap();
        let op = build_dipolar(&c);
        let mut s = PureState::basis(9, 0b1_0110_1001);
        s.amps[3] = C64::new(0.0, 1.0);
        s.normalize();
        let tol = 1e-12;
        let whole = evolve_chebyshev(&op, &s, 3.1, tol).unwrap();
        let half = evolve_chebyshev(&op, &s, 1.2, tol).unwrap();
        let split = evolve_chebyshev(&op, &half, 1.9, tol).unwrap();
        let d: f64 = whole
            .amps
            .iter()
            .zip(&split.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(d.sqrt() < 2.0 * tol);
        assert!((whole.norm_sqr() - 1.0).abs() < tol);
        let nn = build_dipolar(&CouplingMatrix::nn_chain(9));
        assert!(nn.is_hermitian());
    }

    #[test]
    fn rejects_bad_input() {
        let mut op = OperatorSpec::new(1);
        op.push(1.0, &[(0, Axis::Plus)]).unwrap();
        let s = PureState::all_up(1);
        assert_eq!(
            evolve_chebyshev(&op, &s, 1.0, 1e-10),
            Err(Error::NonHermitian)
        );
        let z = build_collective(1, Axis::Z);
        assert!(evolve_chebyshev(&z, &s, 1.0, 0.0).is_err());
        let p = Chebyshev::new(Arc::new(z.compile()), 1e-14)
            .unwrap()
            .with_order_cap(5);
        assert!(matches!(p.plan(50.0), Err(Error::OrderCap { .. })));
    }
}
