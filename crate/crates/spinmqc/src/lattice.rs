//! Spin geometries and coupling matrices in normalized units.
//!
//! Lengths are in units of the intra-chain spacing `d`, couplings in units of
//! the nearest-neighbour intra-chain coupling `b`, so that two spins one unit
//! apart along the chain axis couple with strength exactly `+1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intra-chain nearest-neighbour distance of fluorapatite, in ångström.
pub const INTRA_CHAIN_DISTANCE: f64 = 3.442;
/// Distance between neighbouring chains, in ångström.
pub const CROSS_CHAIN_DISTANCE: f64 = 9.367;
/// Default minimum pairwise separation for sampled geometries.
pub const MIN_SEPARATION: f64 = 0.1;
/// Target rms of a single chain-bath pair coupling.
pub const CHAIN_BATH_RMS: f64 = 0.025;
/// Rejection budget for random bath sampling.
pub const MAX_SAMPLING_ATTEMPTS: usize = 100_000;
/// Target `Tr[H_B^2] / (n_bath Tr 1)` for the glass-shard bath.
pub const GLASS_ENERGY_PER_SPIN: f64 = 6.0 / 16.0;

/// Default cross-chain to intra-chain distance ratio `D/d`.
pub fn default_cross_ratio() -> f64 {
    CROSS_CHAIN_DISTANCE / INTRA_CHAIN_DISTANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinGeometry {
    pub positions: Vec<[f64; 3]>,
    pub chain_label: Vec<usize>,
}

impl SpinGeometry {
    /// Validates label contiguity and matching lengths.
    pub fn new(positions: Vec<[f64; 3]>, chain_label: Vec<usize>) -> Result<Self> {
        if positions.len() != chain_label.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: chain_label.len(),
            });
        }
        let max = chain_label.iter().copied().max().unwrap_or(0);
        for l in 0..=max {
            if !positions.is_empty() && !chain_label.contains(&l) {
                return Err(Error::InvalidArgument(format!(
                    "chain labels must be contiguous from 0, missing {l}"
                )));
            }
        }
        Ok(Self {
            positions,
            chain_label,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.positions.len()
    }

    pub fn n_labels(&self) -> usize {
        self.chain_label.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Sites carrying `label`, in index order.
    pub fn sites_with_label(&self, label: usize) -> Vec<usize> {
        (0..self.n_spins())
            .filter(|&j| self.chain_label[j] == label)
            .collect()
    }

    /// Position of each site within its own label group.
    pub fn rank_in_label(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_labels()];
        self.chain_label
            .iter()
            .map(|&l| {
                let r = counts[l];
                counts[l] += 1;
                r
            })
            .collect()
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for j in 0..self.n_spins() {
            for l in j + 1..self.n_spins() {
                best = best.min(norm(sub(self.positions[l], self.positions[j])));
            }
        }
        best
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(r: [f64; 3]) -> f64 {
    (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
}

/// Range of same-label couplings kept in a coupling matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Nn,
    Nnn,
    Full,
    Range(usize),
}

impl Truncation {
    /// Largest index distance kept, `None` for no limit.
    pub fn max_distance(self) -> Option<usize> {
        match self {
            Truncation::Nn => Some(1),
            Truncation::Nnn => Some(2),
            Truncation::Full => None,
            Truncation::Range(k) => Some(k),
        }
    }

    fn keeps(self, distance: usize) -> bool {
        self.max_distance().is_none_or(|k| distance <= k)
    }
}

/// Which pairs across different labels are coupled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossCoupling {
    None,
    All,
    /// Only pairs with equal rank inside their label groups.
    Registered,
}

/// Truncation policy for a labelled geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingRule {
    pub central: Truncation,
    pub environment: Truncation,
    pub cross: CrossCoupling,
}

impl CouplingRule {
    pub fn uniform(t: Truncation) -> Self {
        let cross = if t == Truncation::Full {
            CrossCoupling::All
        } else {
            CrossCoupling::None
        };
        Self {
            central: t,
            environment: t,
            cross,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub n_spins: usize,
    /// Row-major symmetric matrix with zero diagonal.
    pub b: Vec<f64>,
    pub truncation: Truncation,
}

impl CouplingMatrix {
    pub fn zeros(n_spins: usize, truncation: Truncation) -> Self {
        Self {
            n_spins,
            b: vec![0.0; n_spins * n_spins],
            truncation,
        }
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.b[j * self.n_spins + l]
    }

    pub fn set(&mut self, j: usize, l: usize, v: f64) {
        self.b[j * self.n_spins + l] = v;
        self.b[l * self.n_spins + j] = v;
    }

    /// Nonzero pairs `(j, l, b_jl)` with `j < l`, row-major.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n_spins {
            for l in j + 1..self.n_spins {
                let v = self.get(j, l);
                if v != 0.0 {
                    out.push((j, l, v));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_spins).all(|j| {
            self.get(j, j) == 0.0 && (0..self.n_spins).all(|l| self.get(j, l) == self.get(l, j))
        })
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            n_spins: self.n_spins,
            b: self.b.iter().map(|v| v * lambda).collect(),
            truncation: self.truncation,
        }
    }

    /// Nearest-neighbour chain with unit couplings, a shortcut for
    /// `coupling_matrix(&build_chain_geometry(n)?, Truncation::Nn)`.
    pub fn nn_chain(n: usize) -> Self {
        let mut c = Self::zeros(n, Truncation::Nn);
        for j in 1..n {
            c.set(j - 1, j, 1.0);
        }
        c
    }

    /// Little-endian bytes of the matrix entries, for digests.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.b.len());
        out.extend_from_slice(&(self.n_spins as u64).to_le_bytes());
        for v in &self.b {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// `n` collinear spins on the z-axis at unit spacing.
pub fn build_chain_geometry(n: usize) -> Result<SpinGeometry> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "chain needs at least one spin".into(),
        ));
    }
    let positions = (0..n).map(|j| [0.0, 0.0, j as f64]).collect();
    SpinGeometry::new(positions, vec![0; n])
}

/// Two parallel chains along z, separated by `cross_ratio` along x.
pub fn build_two_chain_geometry(n_per_chain: usize, cross_ratio: f64) -> Result<SpinGeometry> {
    if n_per_chain == 0 {
        return Err(Error::InvalidArgument(
            "chain needs at least one spin".into(),
        ));
    }
    if !(cross_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cross_ratio must be positive, got {cross_ratio}"
        )));
    }
    let mut positions = Vec::with_capacity(2 * n_per_chain);
    let mut labels = Vec::with_capacity(2 * n_per_chain);
    for (label, x) in [(0, 0.0), (1, cross_ratio)] {
        for j in 0..n_per_chain {
            positions.push([x, 0.0, j as f64]);
            labels.push(label);
        }
    }
    SpinGeometry::new(positions, labels)
}

/// Secular dipolar coupling `-(1 - 3 cos^2 theta) / (2 |r|^3)` relative to the z-axis.
pub fn dipolar_coupling(r: [f64; 3]) -> Result<f64> {
    let d = norm(r);
    if d == 0.0 {
        return Err(Error::Singularity(0, 0));
    }
    let cos2 = r[2] * r[2] / (d * d);
    Ok(-(1.0 - 3.0 * cos2) / (2.0 * d * d * d))
}

/// Lumped coupling of the six surrounding chains, `-3 (d/D)^3`.
pub fn effective_cross_chain_coupling() -> f64 {
    effective_cross_chain_coupling_for(INTRA_CHAIN_DISTANCE / CROSS_CHAIN_DISTANCE)
}

pub fn effective_cross_chain_coupling_for(d_over_cross: f64) -> f64 {
    -3.0 * d_over_cross.powi(3)
}

/// Transverse offset at which one neighbouring chain reproduces the lumped
/// coupling as its nearest cross pair.
pub fn lumped_cross_ratio() -> f64 {
    (-1.0 / (2.0 * effective_cross_chain_coupling())).cbrt()
}

/// All-pairs dipolar couplings with the same truncation for every label and
/// cross-label pairs kept only under [`Truncation::Full`].
pub fn coupling_matrix(g: &SpinGeometry, truncation: Truncation) -> Result<CouplingMatrix> {
    coupling_matrix_with(g, &CouplingRule::uniform(truncation))
}

pub fn coupling_matrix_with(g: &SpinGeometry, rule: &CouplingRule) -> Result<CouplingMatrix> {
    let n = g.n_spins();
    let rank = g.rank_in_label();
    let mut c = CouplingMatrix::zeros(n, rule.central);
    for j in 0..n {
        for l in j + 1..n {
            let (lj, ll) = (g.chain_label[j], g.chain_label[l]);
            let keep = if lj == ll {
                let t = if lj == 0 {
                    rule.central
                } else {
                    rule.environment
                };
                t.keeps(rank[j].abs_diff(rank[l]))
            } else {
                match rule.cross {
                    CrossCoupling::None => false,
                    CrossCoupling::All => true,
                    CrossCoupling::Registered => rank[j] == rank[l],
                }
            };
            if keep {
                let v = dipolar_coupling(sub(g.positions[l], g.positions[j]))
                    .map_err(|_| Error::Singularity(j, l))?;
                c.set(j, l, v);
            }
        }
    }
    Ok(c)
}

/// Chain of `n_chain` spins on the z-axis in `[-1, 1]` plus `n_bath` spins
/// uniform in the cube `[-1, 1]^3`, all pairwise farther apart than
/// [`MIN_SEPARATION`]. Chain spins carry label 0 and bath spins label 1.
pub fn sample_random_bath_geometry(
    n_chain: usize,
    n_bath: usize,
    seed: u64,
) -> Result<SpinGeometry> {
    if n_chain == 0 {
        return Err(Error::InvalidArgument(
            "chain needs at least one spin".into(),
        ));
    }
    let mut positions: Vec<[f64; 3]> = (0..n_chain)
        .map(|j| {
            let z = if n_chain == 1 {
                0.0
            } else {
                -1.0 + 2.0 * j as f64 / (n_chain - 1) as f64
            };
            [0.0, 0.0, z]
        })
        .collect();
    if n_chain > 1 && 2.0 / (n_chain - 1) as f64 <= MIN_SEPARATION {
        return Err(Error::SamplingFailure {
            what: format!("{n_chain} chain spins do not fit in [-1, 1]"),
            attempts: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0;
    while positions.len() < n_chain + n_bath {
        if attempts == MAX_SAMPLING_ATTEMPTS {
            return Err(Error::SamplingFailure {
                what: format!("{n_bath} bath spins with separation > {MIN_SEPARATION}"),
                attempts,
            });
        }
        attempts += 1;
        let p = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        if positions.iter().all(|&q| norm(sub(p, q)) > MIN_SEPARATION) {
            positions.push(p);
        }
    }
    let mut labels = vec![0; n_chain];
    labels.resize(n_chain + n_bath, 1);
    SpinGeometry::new(positions, labels)
}

/// Random-bath coupling matrix: chain block normalized to unit nearest
/// neighbour and truncated, bath blocks full dipolar, then rescaled with
/// [`rescale_couplings`].
pub fn random_bath_couplings(
    g: &SpinGeometry,
    chain_truncation: Truncation,
) -> Result<CouplingMatrix> {
    let rule = CouplingRule {
        central: chain_truncation,
        environment: Truncation::Full,
        cross: CrossCoupling::All,
    };
    let mut c = coupling_matrix_with(g, &rule)?;
    let chain = g.sites_with_label(0);
    if chain.len() > 1 {
        let nn = c.get(chain[0], chain[1]);
        for (a, &j) in chain.iter().enumerate() {
            for &l in &chain[a + 1..] {
                let v = c.get(j, l) / nn;
                c.set(j, l, v);
            }
        }
    }
    rescale_couplings(&c, &g.chain_label)
}

/// Scales the chain-bath block to rms [`CHAIN_BATH_RMS`] per pair and the
/// bath-bath block so that its squared coupling norm per spin equals the
/// chain's. Label 0 is the chain, every other label is bath.
pub fn rescale_couplings(c: &CouplingMatrix, labels: &[usize]) -> Result<CouplingMatrix> {
    if labels.len() != c.n_spins {
        return Err(Error::DimensionMismatch {
            expected: c.n_spins,
            got: labels.len(),
        });
    }
    let n_chain = labels.iter().filter(|&&l| l == 0).count();
    let n_bath = c.n_spins - n_chain;
    if n_chain == 0 || n_bath == 0 {
        return Err(Error::CannotRescale(
            "need both chain and bath spins".into(),
        ));
    }
    let (mut cc, mut cb, mut bb) = (0.0, 0.0, 0.0);
    for (j, l, v) in c.pairs() {
        match (labels[j] == 0, labels[l] == 0) {
            (true, true) => cc += v * v,
            (false, false) => bb += v * v,
            _ => cb += v * v,
        }
    }
    if cb == 0.0 {
        return Err(Error::CannotRescale("chain-bath block is zero".into()));
    }
    let cross_scale = CHAIN_BATH_RMS / (cb / (n_chain * n_bath) as f64).sqrt();
    let bath_scale = if n_bath > 1 {
        if bb == 0.0 {
            return Err(Error::CannotRescale("bath-bath block is zero".into()));
        }
        ((cc / n_chain as f64) / (bb / n_bath as f64)).sqrt()
    } else {
        1.0
    };
    let mut out = c.clone();
    for (j, l, v) in c.pairs() {
        match (labels[j] == 0, labels[l] == 0) {
            (true, true) => {}
            (false, false) => out.set(j, l, v * bath_scale),
            _ => out.set(j, l, v * cross_scale),
        }
    }
    Ok(out)
}

/// Glass-shard bath on a square lattice with chain-bath dipolar-form constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlassShardSpec {
    pub side: usize,
    pub gamma0: f64,
    pub h0: f64,
    /// Nearest-neighbour lattice pairs `(k, l, Gamma_kl)` in bath indices.
    pub gamma: Vec<(usize, usize, f64)>,
    pub hz: Vec<f64>,
    pub hx: Vec<f64>,
    /// `(chain site, bath site, b)` constants.
    pub chain_bath: Vec<(usize, usize, f64)>,
}

impl GlassShardSpec {
    pub fn n_bath(&self) -> usize {
        self.side * self.side
    }
}

/// Nearest-neighbour bond list of a `side x side` square lattice, row-major sites.
pub fn square_lattice_bonds(side: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let k = r * side + c;
            if c + 1 < side {
                out.push((k, k + 1));
            }
            if r + 1 < side {
                out.push((k, k + side));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Six lattice sites nearest to each chain spin when the chain is laid along
/// the middle row of the lattice. Ties are broken by site index.
pub fn glass_shard_neighbors(n_chain: usize, side: usize, per_spin: usize) -> Vec<Vec<usize>> {
    let span = (side - 1) as f64;
    (0..n_chain)
        .map(|j| {
            let x = if n_chain == 1 {
                span / 2.0
            } else {
                span * j as f64 / (n_chain - 1) as f64
            };
            let y = span / 2.0;
            let mut sites: Vec<(f64, usize)> = (0..side * side)
                .map(|k| {
                    let (r, c) = ((k / side) as f64, (k % side) as f64);
                    ((c - x).powi(2) + (r - y).powi(2), k)
                })
                .collect();
            sites.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut pick: Vec<usize> = sites.iter().take(per_spin).map(|s| s.1).collect();
            pick.sort_unstable();
            pick
        })
        .collect()
}

/// Scale factors `(Gamma_0, h_0)` splitting the glass-shard energy budget
/// equally between the exchange term and the two field terms.
///
/// With couplings and fields uniform on symmetric intervals the expected
/// trace per spin (Pauli convention, spin operators `S = sigma/2`) is
/// `(bonds/n) Gamma_0^2/48 + 2 h_0^2/12`.
pub fn calibrate_glass_scales() -> (f64, f64) {
    calibrate_glass_scales_for(3, GLASS_ENERGY_PER_SPIN)
}

pub fn calibrate_glass_scales_for(side: usize, target: f64) -> (f64, f64) {
    let n = (side * side) as f64;
    let bonds = square_lattice_bonds(side).len() as f64;
    let half = target / 2.0;
    let gamma0 = (half * 48.0 * n / bonds).sqrt();
    let h0 = (half * 6.0).sqrt();
    (gamma0, h0)
}

/// Samples a glass shard on a 3x3 lattice coupled to a chain of `n_chain` spins.
pub fn sample_glass_shard(n_chain: usize, n_bath: usize, seed: u64) -> Result<GlassShardSpec> {
    let side = (n_bath as f64).sqrt().round() as usize;
    if side * side != n_bath || side < 2 {
        return Err(Error::InvalidArgument(format!(
            "glass shard needs a square lattice, got {n_bath} spins"
        )));
    }
    let (gamma0, h0) = calibrate_glass_scales_for(side, GLASS_ENERGY_PER_SPIN);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = square_lattice_bonds(side)
        .into_iter()
        .map(|(k, l)| (k, l, rng.random_range(-gamma0..=gamma0)))
        .collect();
    let hz = (0..n_bath).map(|_| rng.random_range(-h0..=h0)).collect();
    let hx = (0..n_bath).map(|_| rng.random_range(-h0..=h0)).collect();
    let bmax = 3f64.sqrt() * CHAIN_BATH_RMS;
    let mut chain_bath = Vec::new();
    for (j, sites) in glass_shard_neighbors(n_chain, side, 6.min(n_bath))
        .iter()
        .enumerate()
    {
        for &k in sites {
            chain_bath.push((j, k, rng.random_range(-bmax..=bmax)));
        }
    }
    Ok(GlassShardSpec {
        side,
        gamma0,
        h0,
        gamma,
        hz,
        hx,
        chain_bath,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_positions() {
        let g = build_chain_geometry(2).unwrap();
        assert_eq!(g.positions, vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(build_chain_geometry(1).unwrap().n_spins(), 1);
        let g = build_chain_geometry(19).unwrap();
        assert_eq!(g.positions[18][2], 18.0);
        assert!(build_chain_geometry(0).is_err());
    }

    #[test]
    fn dipolar_anchors() {
        assert_eq!(dipolar_coupling([0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert!((dipolar_coupling([0.0, 0.0, 2.0]).unwrap() - 0.125).abs() < 1e-15);
        let r = default_cross_ratio();
        let v = dipolar_coupling([r, 0.0, 0.0]).unwrap();
        assert!((v - effective_cross_chain_coupling() / 6.0).abs() < 1e-12);
        assert!((v + 0.02481).abs() < 5e-6);
        assert!(dipolar_coupling([0.0; 3]).is_err());
    }

    #[test]
    fn two_chain_geometry() {
        let g = build_two_chain_geometry(11, default_cross_ratio()).unwrap();
        assert_eq!(g.n_spins(), 22);
        assert!((g.positions[11][0] - 2.7213).abs() < 1e-4);
        let g = build_two_chain_geometry(1, 1.0).unwrap();
        let c = coupling_matrix(&g, Truncation::Full).unwrap();
        assert!((c.get(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncations() {
        let g = build_chain_geometry(3).unwrap();
        let c = coupling_matrix(&g, Truncation::Nn).unwrap();
        assert_eq!((c.get(0, 1), c.get(1, 2), c.get(0, 2)), (1.0, 1.0, 0.0));
        let c = coupling_matrix(&g, Truncation::Nnn).unwrap();
        assert_eq!(c.get(0, 2), 0.125);
        let c = coupling_matrix(&build_chain_geometry(4).unwrap(), Truncation::Full).unwrap();
        assert!((c.get(0, 3) - 1.0 / 27.0).abs() < 1e-15);
        assert_eq!(
            coupling_matrix(&g, Truncation::Nn).unwrap(),
            CouplingMatrix::nn_chain(3)
        );
    }

    #[test]
    fn cross_constants() {
        assert!((effective_cross_chain_coupling() + 0.1488).abs() < 1e-4);
        assert_eq!(effective_cross_chain_coupling_for(1.0), -3.0);
        assert_eq!(effective_cross_chain_coupling_for(0.0), 0.0);
        let g = build_two_chain_geometry(3, lumped_cross_ratio()).unwrap();
        let c = coupling_matrix_with(
            &g,
            &CouplingRule {
                central: Truncation::Nn,
                environment: Truncation::Nn,
                cross: CrossCoupling::Registered,
            },
        )
        .unwrap();
        assert!((c.get(0, 3) - effective_cross_chain_coupling()).abs() < 1e-12);
        assert_eq!(c.get(0, 4), 0.0);
    }

    #[test]
    fn random_bath_sampling() {
        let g = sample_random_bath_geometry(11, 9, 7).unwrap();
        assert_eq!(g.n_spins(), 20);
        assert!(g.min_separation() > MIN_SEPARATION);
        assert_eq!(g, sample_random_bath_geometry(11, 9, 7).unwrap());
        let g0 = sample_random_bath_geometry(5, 0, 1).unwrap();
        assert_eq!(g0.positions[4], [0.0, 0.0, 1.0]);
        assert!(matches!(
            sample_random_bath_geometry(3, 5000, 1),
            Err(Error::SamplingFailure { .. })
        ));
    }

    #[test]
    fn rescale_targets() {
        let g = sample_random_bath_geometry(11, 9, 3).unwrap();
        let c = random_bath_couplings(&g, Truncation::Nnn).unwrap();
        let (mut cc, mut cb, mut bb) = (0.0, 0.0, 0.0);
        for (j, l, v) in c.pairs() {
            match (j < 11, l < 11) {
                (true, true) => cc += v * v,
                (false, false) => bb += v * v,
                _ => cb += v * v,
            }
        }
        assert!(((cb / 99.0).sqrt() - CHAIN_BATH_RMS).abs() < 1e-12);
        assert!((bb / 9.0 - cc / 11.0).abs() < 1e-12);
        assert_eq!(c.get(0, 1), 1.0);
        assert!((c.get(0, 2) - 0.125).abs() < 1e-12);
        let again = rescale_couplings(&c, &g.chain_label).unwrap();
        for (a, b) in again.b.iter().zip(&c.b) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn glass_shard_shape() {
        assert_eq!(square_lattice_bonds(3).len(), 12);
        let s = sample_glass_shard(11, 9, 5).unwrap();
        assert_eq!(s, sample_glass_shard(11, 9, 5).unwrap());
        assert_eq!(s.chain_bath.len(), 66);
        let bmax = 3f64.sqrt() * CHAIN_BATH_RMS;
        assert!(s.chain_bath.iter().all(|c| c.2.abs() <= bmax));
        assert!(s.gamma.iter().all(|g| g.2.abs() <= s.gamma0));
        assert!(s.hz.iter().chain(&s.hx).all(|h| h.abs() <= s.h0));
        let (g0, h0) = calibrate_glass_scales();
        assert!((g0 - 6.75f64.sqrt()).abs() < 1e-12);
        assert!((h0 - 1.125f64.sqrt()).abs() < 1e-12);
        assert!(sample_glass_shard(11, 8, 5).is_err());
    }

    #[test]
    fn glass_shard_map_matches_data() {
        let data: serde_json::Value =
            serde_json::from_str(include_str!("../data/glass_shard_map.json")).unwrap();
        let side = data["side"].as_u64().unwrap() as usize;
        let per = data["bath_spins_per_chain_spin"].as_u64().unwrap() as usize;
        for (n, map) in data["maps"].as_object().unwrap() {
            let n: usize = n.parse().unwrap();
            let expect: Vec<Vec<usize>> = serde_json::from_value(map.clone()).unwrap();
            assert_eq!(glass_shard_neighbors(n, side, per), expect, "n_chain={n}");
        }
    }
}
