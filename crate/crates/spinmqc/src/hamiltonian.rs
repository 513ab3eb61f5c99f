//! Pauli-term operators and their matrix-free action on state vectors.
//!
//! Basis convention: bit `j` of a basis index is spin `j`, with bit value 0
//! meaning spin up (`sigma^z = +1`). Index 0 is the all-up state.

use std::collections::BTreeMap;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::C64;
use crate::error::{Error, Result};
use crate::lattice::{CouplingMatrix, GlassShardSpec};

/// Largest system for which a dense matrix may be built.
pub const DENSE_MAX_SPINS: usize = 14;
/// Sites are addressed by bits of a `u64` mask.
pub const MAX_SPINS: usize = 64;
/// Diagonals of at most this many entries are tabulated at compile time.
const DIAG_TABLE_MAX: usize = 1 << 22;
const CHUNK: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, Vec<(usize, Axis)>)", into = "(f64, Vec<(usize, Axis)>)")]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<(usize, Axis)>,
}

impl From<(f64, Vec<(usize, Axis)>)> for Term {
    fn from((coef, factors): (f64, Vec<(usize, Axis)>)) -> Self {
        Self { coef, factors }
    }
}

impl From<Term> for (f64, Vec<(usize, Axis)>) {
    fn from(t: Term) -> Self {
        (t.coef, t.factors)
    }
}

/// Weighted sum of products of single-site operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub n_spins: usize,
    pub terms: Vec<Term>,
}

impl OperatorSpec {
    pub fn new(n_spins: usize) -> Self {
        Self {
            n_spins,
            terms: Vec::new(),
        }
    }

    /// Appends a term after checking site bounds and site uniqueness.
    pub fn push(&mut self, coef: f64, factors: &[(usize, Axis)]) -> Result<()> {
        for (i, &(s, _)) in factors.iter().enumerate() {
            if s >= self.n_spins || s >= MAX_SPINS {
                return Err(Error::InvalidArgument(format!(
                    "site {s} out of range for {} spins",
                    self.n_spins
                )));
            }
            if factors[..i].iter().any(|&(t, _)| t == s) {
                return Err(Error::InvalidArgument(format!(
                    "site {s} repeated in one term"
                )));
            }
        }
        self.terms.push(Term {
            coef,
            factors: factors.to_vec(),
        });
        Ok(())
    }

    fn push_unchecked(&mut self, coef: f64, factors: &[(usize, Axis)]) {
        self.terms.push(Term {
            coef,
            factors: factors.to_vec(),
        });
    }

    pub fn extend(&mut self, other: &OperatorSpec) -> Result<()> {
        if other.n_spins != self.n_spins {
            return Err(Error::DimensionMismatch {
                expected: self.n_spins,
                got: other.n_spins,
            });
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(())
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            n_spins: self.n_spins,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coef: t.coef * lambda,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
    }

    /// Expansion into merged Pauli strings.
    pub fn pauli_strings(&self) -> BTreeMap<(u64, u64), C64> {
        let mut out = BTreeMap::new();
        for t in &self.terms {
            // (xmask, zmask, coefficient of the Pauli string)
            let mut acc: Vec<(u64, u64, C64)> = vec![(0, 0, C64::new(t.coef, 0.0))];
            for &(s, a) in &t.factors {
                let bit = 1u64 << s;
                let parts: &[(bool, bool, C64)] = match a {
                    Axis::X => &[(true, false, C64::new(1.0, 0.0))],
                    Axis::Y => &[(true, true, C64::new(1.0, 0.0))],
                    Axis::Z => &[(false, true, C64::new(1.0, 0.0))],
                    Axis::Plus => &[
                        (true, false, C64::new(0.5, 0.0)),
                        (true, true, C64::new(0.0, 0.5)),
                    ],
                    Axis::Minus => &[
                        (true, false, C64::new(0.5, 0.0)),
                        (true, true, C64::new(0.0, -0.5)),
                    ],
                };
                acc = acc
                    .iter()
                    .flat_map(|&(x, z, c)| {
                        parts.iter().map(move |&(px, pz, w)| {
                            (
                                if px { x | bit } else { x },
                                if pz { z | bit } else { z },
                                c * w,
                            )
                        })
                    })
                    .collect();
            }
            for (x, z, c) in acc {
                *out.entry((x, z)).or_insert(C64::new(0.0, 0.0)) += c;
            }
        }
        out.retain(|_, c| c.norm() != 0.0);
        out
    }

    /// True when every merged Pauli coefficient is real.
    pub fn is_hermitian(&self) -> bool {
        self.pauli_strings()
            .values()
            .all(|c| c.im.abs() <= 1e-14 * c.norm().max(1.0))
    }

    pub fn compile(&self) -> PauliSum {
        PauliSum::from_strings(self.n_spins, &self.pauli_strings())
    }
}

/// Operator compiled into groups of Pauli strings sharing a flip mask.
#[derive(Clone, Debug)]
pub struct PauliSum {
    n_spins: usize,
    identity: C64,
    diag_terms: Vec<(u64, C64)>,
    diag_table: Option<Vec<C64>>,
    groups: Vec<FlipGroup>,
    l1: f64,
    hs: f64,
}

#[derive(Clone, Debug)]
struct FlipGroup {
    xmask: u64,
    /// `(zmask, c * i^{n_y})`: contribution `c' (-1)^{|i & zmask|}` for source index `i`.
    terms: Vec<(u64, C64)>,
    kernel: Kernel,
}

/// Group coefficient as a lookup on the source bits under the union of the
/// z masks, when that union is small.
#[derive(Clone, Debug)]
enum Kernel {
    Pair { a: u32, b: u32, table: Coefs },
    Bits { shifts: Vec<u32>, table: Coefs },
    General,
}

#[derive(Clone, Debug)]
enum Coefs {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

const KERNEL_MAX_BITS: u32 = 8;

impl FlipGroup {
    fn new(xmask: u64, terms: Vec<(u64, C64)>) -> Self {
        let union = terms.iter().fold(0u64, |m, (z, _)| m | z);
        let kernel = if union.count_ones() > KERNEL_MAX_BITS {
            Kernel::General
        } else {
            let shifts: Vec<u32> = (0..64).filter(|b| union >> b & 1 == 1).collect();
            let table: Vec<C64> = (0..1usize << shifts.len())
                .map(|idx| {
                    let i = shifts
                        .iter()
                        .enumerate()
                        .fold(0u64, |m, (k, s)| m | (((idx >> k) & 1) as u64) << s);
                    group_coef(&terms, i)
                })
                .collect();
            let table = if table.iter().all(|c| c.im == 0.0) {
                Coefs::Real(table.iter().map(|c| c.re).collect())
            } else {
                Coefs::Complex(table)
            };
            match shifts.as_slice() {
                &[a, b] => Kernel::Pair { a, b, table },
                _ => Kernel::Bits { shifts, table },
            }
        };
        Self {
            xmask,
            terms,
            kernel,
        }
    }
}

#[inline]
fn parity_sign(i: u64, z: u64) -> f64 {
    1.0 - 2.0 * ((i & z).count_ones() & 1) as f64
}

#[inline]
fn gather_bits(i: usize, shifts: &[u32]) -> usize {
    shifts
        .iter()
        .enumerate()
        .fold(0, |m, (k, &s)| m | ((i >> s) & 1) << k)
}

#[inline]
fn group_coef(terms: &[(u64, C64)], i: u64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for &(z, c) in terms {
        acc += c * parity_sign(i, z);
    }
    acc
}

impl PauliSum {
    fn from_strings(n_spins: usize, strings: &BTreeMap<(u64, u64), C64>) -> Self {
        let mut identity = C64::new(0.0, 0.0);
        let mut diag_terms = Vec::new();
        let mut by_x: BTreeMap<u64, Vec<(u64, C64)>> = BTreeMap::new();
        let mut l1 = 0.0;
        let mut hs = 0.0;
        for (&(x, z), &c) in strings {
            hs += c.norm_sqr();
            if x == 0 && z == 0 {
                identity += c;
                continue;
            }
            l1 += c.norm();
            let ny = (x & z).count_ones();
            let phase = match ny % 4 {
                0 => C64::new(1.0, 0.0),
                1 => C64::new(0.0, 1.0),
                2 => C64::new(-1.0, 0.0),
                _ => C64::new(0.0, -1.0),
            };
            if x == 0 {
                diag_terms.push((z, c));
            } else {
                by_x.entry(x).or_default().push((z, c * phase));
            }
        }
        let dim = 1usize << n_spins;
        let diag_table = (dim <= DIAG_TABLE_MAX).then(|| {
            let mut t = vec![identity; dim];
            t.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
                for (o, v) in chunk.iter_mut().enumerate() {
                    *v += group_coef(&diag_terms, (ci * CHUNK + o) as u64);
                }
            });
            t
        });
        let groups = by_x
            .into_iter()
            .map(|(xmask, terms)| FlipGroup::new(xmask, terms))
            .collect();
        Self {
            n_spins,
            identity,
            diag_terms,
            diag_table,
            groups,
            l1,
            hs,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn is_diagonal(&self) -> bool {
        self.groups.is_empty()
    }

    /// Diagonal matrix element `<i|H|i>`.
    #[inline]
    pub fn diagonal(&self, i: usize) -> C64 {
        match &self.diag_table {
            Some(t) => t[i],
            None => self.identity + group_coef(&self.diag_terms, i as u64),
        }
    }

    /// `out = H * input`.
    pub fn apply_into(&self, input: &[C64], out: &mut [C64]) -> Result<()> {
        let dim = self.dim();
        if input.len() != dim || out.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: input.len().min(out.len()),
            });
        }
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| {
                let base = ci * CHUNK;
                match &self.diag_table {
                    Some(t) => {
                        for (o, v) in chunk.iter_mut().enumerate() {
                            *v = t[base + o] * input[base + o];
                        }
                    }
                    None => {
                        for (o, v) in chunk.iter_mut().enumerate() {
                            *v = self.diagonal(base + o) * input[base + o];
                        }
                    }
                }
                for g in &self.groups {
                    let x = g.xmask as usize;
                    let src = |o: usize| (base + o) ^ x;
                    match &g.kernel {
                        Kernel::Pair {
                            a,
                            b,
                            table: Coefs::Real(t),
                        } => {
                            let (a, b) = (*a as usize, *b as usize);
                            for (o, v) in chunk.iter_mut().enumerate() {
                                let i = src(o);
                                *v += input[i] * t[((i >> a) & 1) | ((i >> b) & 1) << 1];
                            }
                        }
                        Kernel::Pair {
                            a,
                            b,
                            table: Coefs::Complex(t),
                        } => {
                            let (a, b) = (*a as usize, *b as usize);
                            for (o, v) in chunk.iter_mut().enumerate() {
                                let i = src(o);
                                *v += input[i] * t[((i >> a) & 1) | ((i >> b) & 1) << 1];
                            }
                        }
                        Kernel::Bits {
                            shifts,
                            table: Coefs::Real(t),
                        } => {
                            for (o, v) in chunk.iter_mut().enumerate() {
                                let i = src(o);
                                *v += input[i] * t[gather_bits(i, shifts)];
                            }
                        }
                        Kernel::Bits {
                            shifts,
                            table: Coefs::Complex(t),
                        } => {
                            for (o, v) in chunk.iter_mut().enumerate() {
                                let i = src(o);
                                *v += input[i] * t[gather_bits(i, shifts)];
                            }
                        }
                        Kernel::General => {
                            for (o, v) in chunk.iter_mut().enumerate() {
                                let i = src(o);
                                *v += group_coef(&g.terms, i as u64) * input[i];
                            }
                        }
                    }
                }
            });
        Ok(())
    }

    pub fn apply(&self, s: &PureState) -> Result<PureState> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply_into(&s.amps, &mut out)?;
        Ok(PureState {
            n_spins: s.n_spins,
            amps: out,
        })
    }

    /// `<a| H |b>`.
    pub fn matrix_element(&self, a: &[C64], b: &[C64]) -> Result<C64> {
        if self.is_diagonal() {
            if a.len() != self.dim() || b.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: a.len().min(b.len()),
                });
            }
            let acc = a
                .par_chunks(CHUNK)
                .zip(b.par_chunks(CHUNK))
                .enumerate()
                .map(|(ci, (ca, cb))| {
                    let mut s = C64::new(0.0, 0.0);
                    for (o, (x, y)) in ca.iter().zip(cb).enumerate() {
                        s += x.conj() * self.diagonal(ci * CHUNK + o) * y;
                    }
                    s
                })
                .collect::<Vec<_>>();
            return Ok(acc.into_iter().sum());
        }
        let mut hb = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply_into(b, &mut hb)?;
        Ok(inner(a, &hb))
    }

    /// Dense matrix, guarded at [`DENSE_MAX_SPINS`].
    pub fn dense(&self) -> Result<Mat<C64>> {
        if self.n_spins > DENSE_MAX_SPINS {
            return Err(Error::SizeGuard {
                what: "dense_matrix",
                n: self.n_spins,
                max: DENSE_MAX_SPINS,
            });
        }
        let dim = self.dim();
        let mut m = Mat::<C64>::zeros(dim, dim);
        for j in 0..dim {
            m[(j, j)] = self.diagonal(j);
        }
        for g in &self.groups {
            for j in 0..dim {
                let i = j ^ g.xmask as usize;
                m[(j, i)] += group_coef(&g.terms, i as u64);
            }
        }
        Ok(m)
    }

    /// Eigenvalue enclosure: the coefficient-sum envelope intersected with
    /// Gershgorin discs from an exact scan of all rows.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let c = self.identity.re;
        let (env_lo, env_hi) = (c - self.l1, c + self.l1);
        let (lo, hi) = (0..self.dim())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|j| {
                let d = self.diagonal(j).re;
                let r: f64 = self
                    .groups
                    .iter()
                    .map(|g| group_coef(&g.terms, (j ^ g.xmask as usize) as u64).norm())
                    .sum();
                (d - r, d + r)
            })
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.max(b.1)),
            );
        (lo.max(env_lo), hi.min(env_hi))
    }

    /// `Tr[H^2] / Tr[1]`.
    pub fn hilbert_schmidt_norm(&self) -> f64 {
        self.hs
    }

    /// Index pairs `(row, column)` of nonzero off-diagonal entries.
    pub fn dense_couplings(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for j in 0..self.dim() {
                let i = j ^ g.xmask as usize;
                if group_coef(&g.terms, i as u64).norm() > 0.0 {
                    out.push((j, i));
                }
            }
        }
        out
    }

    /// Bit masks of the sites each nontrivial flip group touches.
    pub fn flip_masks(&self) -> Vec<u64> {
        self.groups.iter().map(|g| g.xmask).collect()
    }
}

/// Normalized (or explicitly unnormalized) amplitudes over the z-basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    pub n_spins: usize,
    pub amps: Vec<C64>,
}

impl PureState {
    pub fn basis(n_spins: usize, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_spins];
        amps[index] = C64::new(1.0, 0.0);
        Self { n_spins, amps }
    }

    pub fn all_up(n_spins: usize) -> Self {
        Self::basis(n_spins, 0)
    }

    pub fn from_amps(n_spins: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n_spins {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_spins,
                got: amps.len(),
            });
        }
        Ok(Self { n_spins, amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.amps.par_iter_mut().for_each(|a| *a /= n);
        }
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        inner(&self.amps, &other.amps)
    }
}

/// `<a|b>` with a fixed chunked reduction order.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.conj() * q).sum::<C64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.par_chunks(CHUNK)
        .map(|x| x.iter().map(|p| p.norm_sqr()).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Compiles and applies in one step.
pub fn apply(op: &OperatorSpec, s: &PureState) -> Result<PureState> {
    if op.n_spins != s.n_spins {
        return Err(Error::DimensionMismatch {
            expected: op.n_spins,
            got: s.n_spins,
        });
    }
    op.compile().apply(s)
}

pub fn dense_matrix(op: &OperatorSpec) -> Result<Mat<C64>> {
    if op.n_spins > DENSE_MAX_SPINS {
        return Err(Error::SizeGuard {
            what: "dense_matrix",
            n: op.n_spins,
            max: DENSE_MAX_SPINS,
        });
    }
    op.compile().dense()
}

pub fn spectral_bounds(op: &OperatorSpec) -> (f64, f64) {
    op.compile().spectral_bounds()
}

pub fn hilbert_schmidt_norm(op: &OperatorSpec) -> f64 {
    op.pauli_strings().values().map(|c| c.norm_sqr()).sum()
}

/// `sum_{j<l} b_jl [Z_j Z_l - (X_j X_l + Y_j Y_l)/2]`.
pub fn build_dipolar(c: &CouplingMatrix) -> OperatorSpec {
    let mut op = OperatorSpec::new(c.n_spins);
    for (j, l, b) in c.pairs() {
        op.push_unchecked(b, &[(j, Axis::Z), (l, Axis::Z)]);
        op.push_unchecked(-0.5 * b, &[(j, Axis::X), (l, Axis::X)]);
        op.push_unchecked(-0.5 * b, &[(j, Axis::Y), (l, Axis::Y)]);
    }
    op
}

/// `sum_{j<l} (b_jl/2)(X_j X_l - Y_j Y_l)`.
pub fn build_dq(c: &CouplingMatrix) -> OperatorSpec {
    let mut op = OperatorSpec::new(c.n_spins);
    for (j, l, b) in c.pairs() {
        op.push_unchecked(0.5 * b, &[(j, Axis::X), (l, Axis::X)]);
        op.push_unchecked(-0.5 * b, &[(j, Axis::Y), (l, Axis::Y)]);
    }
    op
}

/// `sum_j sigma_j^axis`.
pub fn build_collective(n_spins: usize, axis: Axis) -> OperatorSpec {
    build_site_sum(n_spins, axis, &vec![1.0; n_spins])
}

/// `sum_j w_j sigma_j^axis`, skipping zero weights.
pub fn build_site_sum(n_spins: usize, axis: Axis, weights: &[f64]) -> OperatorSpec {
    let mut op = OperatorSpec::new(n_spins);
    for (j, &w) in weights.iter().enumerate().take(n_spins) {
        if w != 0.0 {
            op.push_unchecked(w, &[(j, axis)]);
        }
    }
    op
}

/// Glass-shard bath plus its chain coupling on `n_chain + n_bath` spins,
/// bath site `k` at index `n_chain + k`. Spin operators `S = sigma/2` are
/// converted to Pauli form here.
pub fn build_glass_shard(n_chain: usize, g: &GlassShardSpec) -> OperatorSpec {
    let n = n_chain + g.n_bath();
    let mut op = OperatorSpec::new(n);
    for &(k, l, gamma) in &g.gamma {
        op.push_unchecked(
            gamma / 4.0,
            &[(n_chain + k, Axis::X), (n_chain + l, Axis::X)],
        );
    }
    for (k, (&hz, &hx)) in g.hz.iter().zip(&g.hx).enumerate() {
        op.push_unchecked(hz / 2.0, &[(n_chain + k, Axis::Z)]);
        op.push_unchecked(hx / 2.0, &[(n_chain + k, Axis::X)]);
    }
    for &(j, k, b) in &g.chain_bath {
        let l = n_chain + k;
        op.push_unchecked(b, &[(j, Axis::Z), (l, Axis::Z)]);
        op.push_unchecked(-0.5 * b, &[(j, Axis::X), (l, Axis::X)]);
        op.push_unchecked(-0.5 * b, &[(j, Axis::Y), (l, Axis::Y)]);
    }
    op
}

/// Bath-only part of [`build_glass_shard`] on the bath's own spins.
pub fn build_glass_bath(g: &GlassShardSpec) -> OperatorSpec {
    let mut s = g.clone();
    s.chain_bath.clear();
    build_glass_shard(0, &s)
}

/// Total magnetization `sum_j sigma_j^z` of basis index `i` over the sites in `mask`.
#[inline]
pub fn magnetization(i: usize, mask: u64) -> i32 {
    let m = mask.count_ones() as i32;
    m - 2 * ((i as u64) & mask).count_ones() as i32
}
