use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::{OperatorSpec, PauliSum};
use crate::linalg::{BlockEigen, CMat, adjoint};

/// Largest system propagated as a dense density matrix.
pub const EXACT_MAX_SPINS: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub n_spins: usize,
    pub entries: CMat,
}

/// Serialized as row-major `(re, im)` pairs.
#[derive(Serialize, Deserialize)]
struct DensityRepr {
    n_spins: usize,
    entries: Vec<(f64, f64)>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let dim = self.dim();
        let entries = (0..dim * dim)
            .map(|k| {
                let v = self.entries[(k / dim, k % dim)];
                (v.re, v.im)
            })
            .collect();
        DensityRepr {
            n_spins: self.n_spins,
            entries,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DensityRepr::deserialize(d)?;
        let dim = 1usize << r.n_spins;
        if r.entries.len() != dim * dim {
            return Err(serde::de::Error::custom(
                "entry count does not match n_spins",
            ));
        }
        Ok(Self {
            n_spins: r.n_spins,
            entries: Mat::from_fn(dim, dim, |i, j| {
                let (re, im) = r.entries[i * dim + j];
                C64::new(re, im)
            }),
        })
    }
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    /// Dense form of an operator, used for states such as `sum_j sigma_j^z`.
    pub fn from_operator(op: &OperatorSpec) -> Result<Self> {
        guard(op.n_spins, "density matrix")?;
        Ok(Self {
            n_spins: op.n_spins,
            entries: op.compile().dense()?,
        })
    }

    pub fn diagonal(n_spins: usize, diag: &[f64]) -> Result<Self> {
        guard(n_spins, "density matrix")?;
        let dim = 1usize << n_spins;
        if diag.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: diag.len(),
            });
        }
        Ok(Self {
            n_spins,
            entries: Mat::from_fn(dim, dim, |i, j| {
                if i == j {
                    C64::new(diag[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        })
    }

    pub fn trace(&self) -> C64 {
        crate::linalg::trace(self.entries.as_ref())
    }

    /// `Tr[self other]`.
    pub fn overlap(&self, other: &DensityMatrix) -> C64 {
        crate::linalg::trace_product(self.entries.as_ref(), other.entries.as_ref())
    }

    /// `Tr[O rho]` for a compiled observable.
    pub fn expectation(&self, op: &PauliSum) -> Result<C64> {
        Ok(crate::linalg::trace_product(
            op.dense()?.as_ref(),
            self.entries.as_ref(),
        ))
    }

    pub fn hermiticity_error(&self) -> f64 {
        crate::linalg::max_abs_diff(
            self.entries.as_ref(),
            adjoint(self.entries.as_ref()).as_ref(),
        )
    }

    /// `u rho u^dagger`.
    pub fn conjugated(&self, u: &CMat) -> Self {
        Self {
            n_spins: self.n_spins,
            entries: u * &self.entries * u.adjoint(),
        }
    }
}

fn guard(n: usize, what: &'static str) -> Result<()> {
    if n > EXACT_MAX_SPINS {
        return Err(Error::SizeGuard {
            what,
            n,
            max: EXACT_MAX_SPINS,
        });
    }
    Ok(())
}

/// Cached block eigendecomposition for repeated dense evolutions.
#[derive(Clone, Debug)]
pub struct ExactEvolver {
    pub n_spins: usize,
    pub eigen: BlockEigen,
}

impl ExactEvolver {
    pub fn new(op: &OperatorSpec) -> Result<Self> {
        guard(op.n_spins, "evolve_exact")?;
        if !op.is_hermitian() {
            return Err(Error::NonHermitian);
        }
        Ok(Self {
            n_spins: op.n_spins,
            eigen: BlockEigen::new(&op.compile())?,
        })
    }

    pub fn unitary(&self, t: f64) -> CMat {
        self.eigen.unitary(t)
    }

    /// `U rho U^dagger` with `U = exp(-i H t)`.
    pub fn evolve(&self, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
        if rho.n_spins != self.n_spins {
            return Err(Error::DimensionMismatch {
                expected: self.n_spins,
                got: rho.n_spins,
            });
        }
        let left = self.eigen.apply_left(t, rho.entries.as_ref());
        let right = self.eigen.apply_left(t, adjoint(left.as_ref()).as_ref());
        Ok(DensityMatrix {
            n_spins: self.n_spins,
            entries: adjoint(right.as_ref()),
        })
    }
}

/// `exp(-i op t) rho exp(i op t)` by dense eigendecomposition.
pub fn evolve_exact(op: &OperatorSpec, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    ExactEvolver::new(op)?.evolve(rho, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Axis, build_collective, build_dq};
    use crate::lattice::CouplingMatrix;

    #[test]
    fn zero_time_and_unitarity() {
        let h = build_dq(&CouplingMatrix::nn_chain(5));
        let rho = DensityMatrix::from_operator(&build_collective(5, Axis::Z)).unwrap();
        let same = evolve_exact(&h, &rho, 0.0).unwrap();
        assert!(crate::linalg::max_abs_diff(same.entries.as_ref(), rho.entries.as_ref()) < 1e-13);
        let later = evolve_exact(&h, &rho, 2.3).unwrap();
        assert!((later.trace() - rho.trace()).norm() < 1e-12);
        assert!(later.hermiticity_error() < 1e-12);
        let p0 = rho.overlap(&rho).re;
        assert!((later.overlap(&later).re - p0).abs() < 1e-10 * p0);
    }

    #[test]
    fn two_spin_dq_coherence_frequency() {
        // On {|uu>, |dd>} the DQ form is sigma^x with unit coupling, so
        // rho = Z_0 + Z_1 -> 2 (cos 2t Z - sin 2t Y) on that pair.
        let h = build_dq(&CouplingMatrix::nn_chain(2));
        let rho = DensityMatrix::from_operator(&build_collective(2, Axis::Z)).unwrap();
        for &t in &[0.1, 0.4, 1.3] {
            let r = evolve_exact(&h, &rho, t).unwrap();
            let off = r.entries[(0, 3)];
            assert!((off - C64::new(0.0, 2.0 * (2.0 * t).sin())).norm() < 1e-12);
            assert!((r.entries[(0, 0)].re - 2.0 * (2.0 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_and_serde() {
        let h = build_dq(&CouplingMatrix::nn_chain(12));
        assert!(matches!(
            ExactEvolver::new(&h),
            Err(Error::SizeGuard { .. })
        ));
        let rho = DensityMatrix::diagonal(1, &[0.25, -0.75]).unwrap();
        let s = serde_json::to_string(&rho).unwrap();
        assert_eq!(serde_json::from_str::<DensityMatrix>(&s).unwrap(), rho);
    }
}
