//! Environment studies: two coupled chains, a random dipolar bath and a
//! chaotic glass-shard bath, each run through the MQC experiment.

use serde::{Deserialize, Serialize};

use crate::C64;
use crate::analytic::ensemble_average;
use crate::error::{Error, Result};
use crate::hamiltonian::{OperatorSpec, build_dipolar, build_glass_shard, magnetization, norm_sqr};
use crate::lattice::{
    CouplingMatrix, CouplingRule, CrossCoupling, GlassShardSpec, Truncation, build_chain_geometry,
    build_two_chain_geometry, coupling_matrix, coupling_matrix_with, lumped_cross_ratio,
    random_bath_couplings, sample_glass_shard, sample_random_bath_geometry,
};
use crate::mqc::{
    Backend, Evolution, ExperimentProtocol, MQCSpectrum, SplitSpectrum, normalize_spectrum,
    realization_seed, split_signal,
};
use crate::propagator::pulse::{Phase, PulseMode, average_hamiltonian, dq16};
use crate::states::{
    Amplitudes, MixedStateSpec, StateKind, end_polarized_spec, random_state, thermal_state_spec,
};

/// Largest chain plus environment size a scenario may request.
pub const SCENARIO_MAX_SPINS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathKind {
    TwoChain,
    RandomDipolar,
    GlassShard,
}

/// How the DQ-16 control acts on chain and environment alike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BathModel {
    /// Forward and backward evolution under the zeroth-order average
    /// Hamiltonians of the x- and y-phase cycles.
    #[default]
    Average,
    /// Explicit DQ-16 cycles, delay scanned per time point.
    Pulsed {
        mode: PulseMode,
        width: f64,
        cycles: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathScenario {
    pub kind: BathKind,
    pub chain_n: usize,
    /// Spins in the environment; ignored for two chains.
    #[serde(default)]
    pub bath_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_truncation")]
    pub truncation: Truncation,
    pub initial: StateKind,
    pub times: Vec<f64>,
    /// Highest encoded order; the initial-state default when absent.
    #[serde(default)]
    pub k: Option<usize>,
    pub backend: Backend,
    #[serde(default)]
    pub model: BathModel,
    /// Cross pairs kept between the two chains.
    #[serde(default = "default_cross")]
    pub cross: CrossCoupling,
    /// Transverse chain offset in units of the intra-chain spacing.
    #[serde(default = "lumped_cross_ratio")]
    pub cross_ratio: f64,
    /// Multiplier on every chain-environment coupling.
    #[serde(default = "one")]
    pub coupling_scale: f64,
}

fn default_truncation() -> Truncation {
    Truncation::Nn
}

fn default_cross() -> CrossCoupling {
    CrossCoupling::All
}

fn one() -> f64 {
    1.0
}

impl BathScenario {
    pub fn new(
        kind: BathKind,
        chain_n: usize,
        bath_n: usize,
        initial: StateKind,
        times: Vec<f64>,
        backend: Backend,
    ) -> Self {
        Self {
            kind,
            chain_n,
            bath_n,
            seed: 0,
            truncation: default_truncation(),
            initial,
            times,
            k: None,
            backend,
            model: BathModel::default(),
            cross: default_cross(),
            cross_ratio: lumped_cross_ratio(),
            coupling_scale: 1.0,
        }
    }

    /// Chain plus environment spins.
    pub fn n_spins(&self) -> usize {
        match self.kind {
            BathKind::TwoChain => 2 * self.chain_n,
            _ => self.chain_n + self.bath_n,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_spins();
        if n > SCENARIO_MAX_SPINS {
            return Err(Error::SizeGuard {
                what: "bath scenario",
                n,
                max: SCENARIO_MAX_SPINS,
            });
        }
        if self.chain_n < 2 {
            return Err(Error::InvalidArgument(
                "chain needs at least two spins".into(),
            ));
        }
        if self.kind != BathKind::TwoChain && self.bath_n == 0 {
            return Err(Error::InvalidArgument(
                "bath scenario needs bath spins".into(),
            ));
        }
        if !self.coupling_scale.is_finite() {
            return Err(Error::InvalidArgument(
                "coupling_scale must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Bytes held by one pure state of `n_spins`; typicality runs keep a handful.
pub fn state_bytes(n_spins: usize) -> usize {
    std::mem::size_of::<C64>() << n_spins
}

/// Outcome of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathRun {
    /// Normalized spectrum of the total magnetization.
    pub spectrum: MQCSpectrum,
    /// Normalized spectrum of the chain-only readout.
    pub chain_only: MQCSpectrum,
    /// Raw chain and environment readouts.
    pub split: SplitSpectrum,
    /// `rms_k S_leak / rms_k S_total` per time.
    pub leakage: Vec<f64>,
    /// `max_n |J_n(total) - J_n(chain only)|` per time.
    pub readout_deviation: Vec<f64>,
    /// Secular interaction on all spins, chain first.
    pub hamiltonian: OperatorSpec,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<CouplingMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glass: Option<GlassShardSpec>,
    pub seed: u64,
}

/// Chain initial state of `kind` embedded on the first `chain_n` of `n_spins`.
pub fn embedded_initial(kind: StateKind, chain_n: usize, n_spins: usize) -> Result<MixedStateSpec> {
    let mut s = match kind {
        StateKind::Thermal => thermal_state_spec(chain_n),
        StateKind::EndPolarized => end_polarized_spec(chain_n)?,
        StateKind::Custom => {
            return Err(Error::InvalidArgument(
                "bath scenarios take thermal or end_polarized states".into(),
            ));
        }
    };
    s.n_spins = n_spins;
    Ok(s)
}

/// Forward and backward generators for `h_int` under `model`.
pub fn bath_evolution(h_int: &OperatorSpec, model: BathModel) -> Result<Evolution> {
    match model {
        BathModel::Average => Ok(Evolution::Pair {
            forward: average_hamiltonian(&dq16(1.0, 0.0, Phase::X), h_int)?,
            backward: average_hamiltonian(&dq16(1.0, 0.0, Phase::Y), h_int)?,
        }),
        BathModel::Pulsed {
            mode,
            width,
            cycles,
        } => Ok(Evolution::PulsedScan {
            h_int: h_int.clone(),
            mode,
            width,
            cycles,
        }),
    }
}

fn scale_cross(c: &CouplingMatrix, labels: &[usize], lambda: f64) -> CouplingMatrix {
    let mut out = c.clone();
    for (j, l, v) in c.pairs() {
        if labels[j] != labels[l] {
            out.set(j, l, v * lambda);
        }
    }
    out
}

fn run_split(s: &BathScenario, h_int: OperatorSpec, labels: Vec<usize>) -> Result<BathRun> {
    let n = labels.len();
    let initial = embedded_initial(s.initial, s.chain_n, n)?;
    let mut p = ExperimentProtocol::new(
        bath_evolution(&h_int, s.model)?,
        initial,
        s.times.clone(),
        s.backend,
    );
    if let Some(k) = s.k {
        p = p.with_k(k);
    }
    let split = split_signal(&p, &labels, 0)?;
    Ok(BathRun {
        spectrum: split.total()?,
        chain_only: normalize_spectrum(&split.intra)?,
        leakage: split.leakage_fraction(),
        readout_deviation: split.readout_deviation()?,
        split,
        hamiltonian: h_int,
        labels,
        couplings: None,
        glass: None,
        seed: s.seed,
    })
}

/// Central chain plus one lumped neighbouring chain of equal length. Both
/// chains start in the initial state; by the exchange symmetry of the pair
/// the total signal equals twice the signal of chain 0 alone, so the run
/// starts on chain 0 and reads out both.
pub fn run_two_chain(s: &BathScenario) -> Result<BathRun> {
    if s.kind != BathKind::TwoChain {
        return Err(Error::InvalidArgument("scenario is not two_chain".into()));
    }
    s.validate()?;
    let g = build_two_chain_geometry(s.chain_n, s.cross_ratio)?;
    let rule = CouplingRule {
        central: s.truncation,
        environment: s.truncation,
        cross: s.cross,
    };
    let c = scale_cross(
        &coupling_matrix_with(&g, &rule)?,
        &g.chain_label,
        s.coupling_scale,
    );
    let mut run = run_split(s, build_dipolar(&c), g.chain_label.clone())?;
    run.couplings = Some(c);
    Ok(run)
}

/// Chain truncated at `s.truncation` inside a random dipolar bath.
pub fn run_random_bath(s: &BathScenario) -> Result<BathRun> {
    if s.kind != BathKind::RandomDipolar {
        return Err(Error::InvalidArgument(
            "scenario is not random_dipolar".into(),
        ));
    }
    s.validate()?;
    let g = sample_random_bath_geometry(s.chain_n, s.bath_n, s.seed)?;
    let c = scale_cross(
        &random_bath_couplings(&g, s.truncation)?,
        &g.chain_label,
        s.coupling_scale,
    );
    let mut run = run_split(s, build_dipolar(&c), g.chain_label.clone())?;
    run.couplings = Some(c);
    Ok(run)
}

/// Chain coupled to a glass-shard bath on a square lattice.
pub fn run_glass_shard(s: &BathScenario) -> Result<BathRun> {
    if s.kind != BathKind::GlassShard {
        return Err(Error::InvalidArgument("scenario is not glass_shard".into()));
    }
    s.validate()?;
    let mut shard = sample_glass_shard(s.chain_n, s.bath_n, s.seed)?;
    for t in &mut shard.chain_bath {
        t.2 *= s.coupling_scale;
    }
    let n = s.n_spins();
    let chain = coupling_matrix(&build_chain_geometry(s.chain_n)?, s.truncation)?;
    let mut c = CouplingMatrix::zeros(n, s.truncation);
    for (j, l, v) in chain.pairs() {
        c.set(j, l, v);
    }
    let mut h = build_dipolar(&c);
    h.extend(&build_glass_shard(s.chain_n, &shard))?;
    let mut labels = vec![0; s.chain_n];
    labels.resize(n, 1);
    let mut run = run_split(s, h, labels)?;
    run.couplings = Some(c);
    run.glass = Some(shard);
    Ok(run)
}

pub fn run_scenario(s: &BathScenario) -> Result<BathRun> {
    match s.kind {
        BathKind::TwoChain => run_two_chain(s),
        BathKind::RandomDipolar => run_random_bath(s),
        BathKind::GlassShard => run_glass_shard(s),
    }
}

/// Runs `count` environment samples with seeds derived from `s.seed` and
/// averages the normalized total spectra with equal weights.
pub fn run_scenario_seeds(s: &BathScenario, count: usize) -> Result<(MQCSpectrum, Vec<BathRun>)> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let runs = (0..count)
        .map(|r| {
            let mut one = s.clone();
            one.seed = realization_seed(s.seed, r);
            run_scenario(&one)
        })
        .collect::<Result<Vec<_>>>()?;
    let spectra: Vec<MQCSpectrum> = runs.iter().map(|r| r.spectrum.clone()).collect();
    let avg = ensemble_average(&spectra, &vec![1.0 / count as f64; count])?;
    Ok((avg, runs))
}

/// `|[H, sum_j sigma^z_j] psi| / |psi|` for a random `psi`; zero exactly when
/// `H` conserves the total magnetization.
pub fn magnetization_commutator(h: &OperatorSpec, seed: u64) -> Result<f64> {
    let n = h.n_spins;
    let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let op = h.compile();
    let psi = random_state(n, seed, Amplitudes::Gaussian).amps;
    let z = |v: &[C64]| -> Vec<C64> {
        v.iter()
            .enumerate()
            .map(|(i, a)| a * magnetization(i, mask) as f64)
            .collect()
    };
    let mut hz = vec![C64::new(0.0, 0.0); psi.len()];
    op.apply_into(&z(&psi), &mut hz)?;
    let mut h_psi = vec![C64::new(0.0, 0.0); psi.len()];
    op.apply_into(&psi, &mut h_psi)?;
    let zh = z(&h_psi);
    let diff: Vec<C64> = hz.iter().zip(&zh).map(|(a, b)| a - b).collect();
    Ok((norm_sqr(&diff) / norm_sqr(&psi)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mqc::run_mqc;

    fn close(a: &MQCSpectrum, b: &MQCSpectrum, tol: f64) {
        assert_eq!(a.j.len(), b.j.len());
        for (x, y) in a.j.iter().flatten().zip(b.j.iter().flatten()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    fn times() -> Vec<f64> {
        vec![0.0, 0.5, 1.2, 2.0]
    }

    #[test]
    fn decoupled_chains_match_single_chain() {
        let mut s = BathScenario::new(
            BathKind::TwoChain,
            4,
            0,
            StateKind::Thermal,
            times(),
            Backend::ExactDensity,
        );
        s.coupling_scale = 0.0;
        let run = run_two_chain(&s).unwrap();
        let c = CouplingMatrix::nn_chain(4);
        let single = run_mqc(&ExperimentProtocol::new(
            Evolution::ideal_dq(&c),
            thermal_state_spec(4),
            times(),
            Backend::ExactDensity,
        ))
        .unwrap();
        close(&run.spectrum, &single, 1e-10);
        assert!(run.leakage.iter().all(|&f| f < 1e-12));
    }

    #[test]
    fn two_chain_total_uses_exchange_symmetry() {
        let s = BathScenario::new(
            BathKind::TwoChain,
            3,
            0,
            StateKind::EndPolarized,
            times(),
            Backend::ExactDensity,
        );
        let run = run_two_chain(&s).unwrap();
        let mut both = end_polarized_spec(3).unwrap();
        both.n_spins = 6;
        both.terms.extend_from_slice(&[(3, 1.0), (5, 1.0)]);
        let p = ExperimentProtocol::new(
            bath_evolution(&run.hamiltonian, s.model).unwrap(),
            both,
            times(),
            Backend::ExactDensity,
        )
        .with_k(16);
        close(&run.spectrum, &run_mqc(&p).unwrap(), 1e-10);
        assert!(run.leakage[0] < 1e-12);
        assert!(run.leakage[3] > 1e-4);
    }

    #[test]
    fn average_model_tracks_pulsed_model() {
        let mut s = BathScenario::new(
            BathKind::RandomDipolar,
            3,
            3,
            StateKind::Thermal,
            vec![0.0, 0.6, 1.2],
            Backend::ExactDensity,
        );
        s.seed = 4;
        s.coupling_scale = 4.0;
        let avg = run_random_bath(&s).unwrap();
        s.model = BathModel::Pulsed {
            mode: PulseMode::Ideal,
            width: 0.0,
            cycles: 20,
        };
        let pulsed = run_random_bath(&s).unwrap();
        close(&avg.spectrum, &pulsed.spectrum, 5e-3);
        close(&avg.chain_only, &pulsed.chain_only, 5e-3);
    }

    #[test]
    fn glass_shard_without_coupling_is_isolated() {
        let mut s = BathScenario::new(
            BathKind::GlassShard,
            3,
            4,
            StateKind::Thermal,
            times(),
            Backend::ExactDensity,
        );
        s.coupling_scale = 0.0;
        let run = run_glass_shard(&s).unwrap();
        let single = run_mqc(&ExperimentProtocol::new(
            Evolution::ideal_dq(&CouplingMatrix::nn_chain(3)),
            thermal_state_spec(3),
            times(),
            Backend::ExactDensity,
        ))
        .unwrap();
        close(&run.chain_only, &single, 1e-10);
    }

    #[test]
    fn magnetization_conservation() {
        let d = BathScenario::new(
            BathKind::RandomDipolar,
            4,
            3,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        let run = run_random_bath(&d).unwrap();
        assert!(magnetization_commutator(&run.hamiltonian, 1).unwrap() < 1e-12);
        let two = BathScenario::new(
            BathKind::TwoChain,
            3,
            0,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        let run = run_two_chain(&two).unwrap();
        assert!(magnetization_commutator(&run.hamiltonian, 1).unwrap() < 1e-12);
        let g = BathScenario::new(
            BathKind::GlassShard,
            3,
            4,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        let run = run_glass_shard(&g).unwrap();
        assert!(magnetization_commutator(&run.hamiltonian, 1).unwrap() > 0.1);
    }

    #[test]
    fn size_guard_and_kinds() {
        let s = BathScenario::new(
            BathKind::RandomDipolar,
            17,
            9,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        assert!(matches!(run_scenario(&s), Err(Error::SizeGuard { .. })));
        let s = BathScenario::new(
            BathKind::TwoChain,
            13,
            0,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        assert!(matches!(run_scenario(&s), Err(Error::SizeGuard { .. })));
        let s = BathScenario::new(
            BathKind::GlassShard,
            4,
            5,
            StateKind::Thermal,
            vec![0.0],
            Backend::ExactDensity,
        );
        assert!(run_scenario(&s).is_err());
        let s = BathScenario::new(
            BathKind::TwoChain,
            3,
            0,
            StateKind::Custom,
            vec![0.0],
            Backend::ExactDensity,
        );
        assert!(run_scenario(&s).is_err());
        assert_eq!(state_bytes(20), 16 << 20);
    }

    #[test]
    fn seeds_average_and_serde() {
        let s = BathScenario::new(
            BathKind::RandomDipolar,
            3,
            2,
            StateKind::Thermal,
            vec![0.0, 1.0],
            Backend::ExactDensity,
        );
        let (avg, runs) = run_scenario_seeds(&s, 2).unwrap();
        assert_eq!(runs.len(), 2);
        assert_ne!(runs[0].couplings, runs[1].couplings);
        for ti in 0..2 {
            assert!((avg.total(ti) - 1.0).abs() < 1e-9);
        }
        let j = serde_json::to_string(&s).unwrap();
        let back: BathScenario = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let t: std::result::Result<BathScenario, _> = serde_json::from_str(
            r#"{"kind":"two_chain","chain_n":3,"initial":"thermal","times":[0],"backend":{"type":"exact_density"},"bogus":1}"#,
        );
        assert!(t.is_err());
    }
}
