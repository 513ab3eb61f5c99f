//! Dense helpers on top of faer: block structure of Pauli sums and
//! block-wise eigendecompositions.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::C64;
use crate::error::{Error, Result};
use crate::hamiltonian::PauliSum;

pub type CMat = Mat<C64>;

pub fn identity(dim: usize) -> CMat {
    Mat::from_fn(dim, dim, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn adjoint(m: MatRef<'_, C64>) -> CMat {
    m.adjoint().to_owned()
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn trace(m: MatRef<'_, C64>) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// `Tr[a b]` without forming the product.
pub fn trace_product(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// Hermitian eigendecomposition `m = Q diag(values) Q^dagger`.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn eigh(m: MatRef<'_, C64>) -> Result<Eigh> {
    let e = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Eigen)?;
    let s = e.S().column_vector();
    let values = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok(Eigh {
        values,
        vectors: e.U().to_owned(),
    })
}

impl Eigh {
    /// `Q diag(f(values)) Q^dagger`.
    pub fn function(&self, f: impl Fn(f64) -> C64) -> CMat {
        let q = &self.vectors;
        let fq = Mat::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * f(self.values[j]));
        &fq * q.adjoint()
    }

    /// `exp(-i m t)`.
    pub fn expm(&self, t: f64) -> CMat {
        self.function(|e| C64::from_polar(1.0, -e * t))
    }
}

/// `a^{-1} rhs` by partial-pivot LU.
pub fn solve(a: MatRef<'_, C64>, rhs: MatRef<'_, C64>) -> CMat {
    a.partial_piv_lu().solve(rhs)
}

/// Disjoint index sets invariant under the operator, each sorted, ordered by
/// smallest member.
pub fn invariant_blocks(op: &PauliSum) -> Vec<Vec<usize>> {
    let dim = op.dim();
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let m = op.dense_couplings();
    for (j, i) in m {
        let (a, b) = (find(&mut parent, j), find(&mut parent, i));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for i in 0..dim {
        let r = find(&mut parent, i);
        map.entry(r).or_default().push(i);
    }
    map.into_values().collect()
}

/// Eigendecomposition of each invariant block of a Hermitian Pauli sum.
#[derive(Clone, Debug)]
pub struct BlockEigen {
    pub dim: usize,
    pub blocks: Vec<(Vec<usize>, Eigh)>,
}

impl BlockEigen {
    pub fn new(op: &PauliSum) -> Result<Self> {
        let blocks = invariant_blocks(op);
        let dense = op.dense()?;
        let mut out = Vec::with_capacity(blocks.len());
        for idx in blocks {
            let sub = Mat::from_fn(idx.len(), idx.len(), |a, b| dense[(idx[a], idx[b])]);
            out.push((idx, eigh(sub.as_ref())?));
        }
        Ok(Self {
            dim: op.dim(),
            blocks: out,
        })
    }

    /// Block unitaries `exp(-i H t)`.
    pub fn block_unitaries(&self, t: f64) -> Vec<CMat> {
        self.blocks.iter().map(|(_, e)| e.expm(t)).collect()
    }

    /// Full dense `exp(-i H t)`.
    pub fn unitary(&self, t: f64) -> CMat {
        let mut u = CMat::zeros(self.dim, self.dim);
        for ((idx, _), ub) in self.blocks.iter().zip(self.block_unitaries(t)) {
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    u[(i, j)] = ub[(a, b)];
                }
            }
        }
        u
    }

    /// `exp(-i H t) m` for a dense `m`, using the block structure on the left.
    pub fn apply_left(&self, t: f64, m: MatRef<'_, C64>) -> CMat {
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        for ((idx, _), ub) in self.blocks.iter().zip(self.block_unitaries(t)) {
            let rows = Mat::from_fn(idx.len(), m.ncols(), |a, c| m[(idx[a], c)]);
            let prod = &ub * &rows;
            for (a, &i) in idx.iter().enumerate() {
                for c in 0..m.ncols() {
                    out[(i, c)] = prod[(a, c)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_dipolar, build_dq};
    use crate::lattice::CouplingMatrix;

    #[test]
    fn dq_blocks() {
        // a bipartite NN chain maps to the XY model, so sectors split further than parity
        let b = invariant_blocks(&build_dq(&CouplingMatrix::nn_chain(6)).compile());
        assert_eq!(b.len(), 7);
        let mut c = CouplingMatrix::nn_chain(3);
        c.set(0, 2, 0.3);
        let b = invariant_blocks(&build_dq(&c).compile());
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].len(), 4);
    }

    #[test]
    fn dipolar_blocks_are_magnetization_sectors() {
        let b = invariant_blocks(&build_dipolar(&CouplingMatrix::nn_chain(5)).compile());
        let mut sizes: Vec<usize> = b.iter().map(|x| x.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 5, 5, 10, 10]);
    }

    #[test]
    fn block_unitary_matches_full() {
        let op = build_dq(&CouplingMatrix::nn_chain(5)).compile();
        let be = BlockEigen::new(&op).unwrap();
        let full = eigh(op.dense().unwrap().as_ref()).unwrap();
        assert!(max_abs_diff(be.unitary(1.3).as_ref(), full.expm(1.3).as_ref()) < 1e-12);
        let m = identity(32);
        assert!(
            max_abs_diff(
                be.apply_left(0.4, m.as_ref()).as_ref(),
                be.unitary(0.4).as_ref()
            ) < 1e-13
        );
    }
}
