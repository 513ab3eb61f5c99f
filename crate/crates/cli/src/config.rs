//! Run configuration. Every time-like key carries its unit in the name;
//! `inv_b` is the inverse nearest-neighbour coupling.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spinmqc::analytic::EnsembleSpec;
use spinmqc::bathlab::{BathKind, BathModel, BathScenario};
use spinmqc::lattice::{CrossCoupling, Truncation, lumped_cross_ratio};
use spinmqc::mqc::{Backend, default_realizations};
use spinmqc::propagator::PulseMode;
use spinmqc::states::{Amplitudes, StateKind};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Analytic,
    Mqc,
    Overlap,
    PrepScan,
    Ensemble,
    Bath,
    AhtVerify,
    Fit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Analytic => "analytic",
            ExperimentKind::Mqc => "mqc",
            ExperimentKind::Overlap => "overlap",
            ExperimentKind::PrepScan => "prep_scan",
            ExperimentKind::Ensemble => "ensemble",
            ExperimentKind::Bath => "bath",
            ExperimentKind::AhtVerify => "aht_verify",
            ExperimentKind::Fit => "fit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Thermal,
    EndPolarized,
}

impl InitialKind {
    pub fn state_kind(self) -> StateKind {
        match self {
            InitialKind::Thermal => StateKind::Thermal,
            InitialKind::EndPolarized => StateKind::EndPolarized,
        }
    }
}

/// Either an explicit list or `count` evenly spaced points in `[start, stop]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_inv_b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_inv_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_inv_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl Grid {
    pub fn linspace(start: f64, stop: f64, count: usize) -> Self {
        Self {
            values_inv_b: None,
            start_inv_b: Some(start),
            stop_inv_b: Some(stop),
            count: Some(count),
        }
    }

    pub fn points(&self, what: &str) -> Result<Vec<f64>, CliError> {
        let v = match (
            &self.values_inv_b,
            self.start_inv_b,
            self.stop_inv_b,
            self.count,
        ) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n)
                    .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
            _ => {
                return Err(CliError::Validation(format!(
                    "{what}: give either values_inv_b or start_inv_b, stop_inv_b and count"
                )));
            }
        };
        if v.is_empty() {
            return Err(CliError::Validation(format!("{what}: grid is empty")));
        }
        if v.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(CliError::Validation(format!(
                "{what}: values must be finite and non-negative"
            )));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ExactDensity,
    Typicality,
    PerSite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Amplitudes>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::ExactDensity,
            realizations: None,
            amplitudes: None,
        }
    }
}

impl BackendConfig {
    pub fn resolve(&self, n_spins: usize, seed: u64) -> Backend {
        let realizations = self
            .realizations
            .unwrap_or_else(|| default_realizations(n_spins));
        let amplitudes = self.amplitudes.unwrap_or_default();
        match self.kind {
            BackendKind::ExactDensity => Backend::ExactDensity,
            BackendKind::Typicality => Backend::Typicality {
                realizations,
                seed,
                amplitudes,
            },
            BackendKind::PerSite => Backend::PerSite {
                realizations,
                seed,
                amplitudes,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionKind {
    IdealDq,
    Pulsed,
}

/// DQ-16 schedule with the delay scanned so that `cycles` cycles last `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub mode: PulseMode,
    #[serde(default)]
    pub width_inv_b: f64,
    pub cycles: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConfig {
    pub n_spins: usize,
    pub initial: InitialKind,
    pub times: Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqcConfig {
    pub n_spins: usize,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    pub initial: InitialKind,
    pub times: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "ideal")]
    pub evolution: EvolutionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseConfig>,
    /// Emit the unnormalized spectrum instead of the unit-sum one.
    #[serde(default)]
    pub raw: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub n_spins: usize,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    #[serde(default = "end_polarized")]
    pub initial: InitialKind,
    pub delta_inv_b: f64,
    #[serde(default)]
    pub width_inv_b: f64,
    pub mode: PulseMode,
    pub cycles: Vec<usize>,
    /// `exact_density` or `typicality`.
    #[serde(default)]
    pub backend: BackendConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepScanConfig {
    pub n_spins: usize,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    pub t1: Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSource {
    Analytic,
    Mqc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub ensemble: EnsembleSpec,
    #[serde(default = "analytic_source")]
    pub source: EnsembleSource,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    pub initial: InitialKind,
    pub times: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub backend: BackendConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    pub kind: BathKind,
    pub chain_n: usize,
    #[serde(default)]
    pub bath_n: usize,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    pub initial: InitialKind,
    pub times: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseConfig>,
    #[serde(default = "all_cross")]
    pub cross: CrossCoupling,
    #[serde(default = "lumped_cross_ratio")]
    pub cross_ratio: f64,
    #[serde(default = "one")]
    pub coupling_scale: f64,
    /// Environment samples averaged; seeds derive from the run seed.
    #[serde(default = "one_usize")]
    pub samples: usize,
}

impl BathConfig {
    pub fn scenario(&self, seed: u64) -> Result<BathScenario, CliError> {
        let times = self.times.points("bath.times")?;
        let n = match self.kind {
            BathKind::TwoChain => 2 * self.chain_n,
            _ => self.chain_n + self.bath_n,
        };
        let mut s = BathScenario::new(
            self.kind,
            self.chain_n,
            self.bath_n,
            self.initial.state_kind(),
            times,
            self.backend.resolve(n, seed),
        );
        s.seed = seed;
        s.truncation = self.truncation;
        s.k = self.k;
        s.cross = self.cross;
        s.cross_ratio = self.cross_ratio;
        s.coupling_scale = self.coupling_scale;
        s.model = match &self.pulse {
            None => BathModel::Average,
            Some(p) => BathModel::Pulsed {
                mode: p.mode,
                width: p.width_inv_b,
                cycles: p.cycles,
            },
        };
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhtVerifyConfig {
    pub n_spins: usize,
    #[serde(default = "nn")]
    pub truncation: Truncation,
    pub tc_inv_b: Vec<f64>,
    #[serde(default)]
    pub width_inv_b: f64,
    #[serde(default = "ideal_mode")]
    pub mode: PulseMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// CSV with a header and columns `time_us,J0`.
    pub data_csv: PathBuf,
    pub n_spins: usize,
    pub initial: InitialKind,
    pub inv_b_guess_us: f64,
}

/// Dotted config paths mapped to the values they take; the sweep runs the
/// Cartesian product in key order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default = "default_budget")]
    pub memory_budget_gib: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mqc: Option<MqcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep_scan: Option<PrepScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aht_verify: Option<AhtVerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn nn() -> Truncation {
    Truncation::Nn
}

fn ideal() -> EvolutionKind {
    EvolutionKind::IdealDq
}

fn ideal_mode() -> PulseMode {
    PulseMode::Ideal
}

fn end_polarized() -> InitialKind {
    InitialKind::EndPolarized
}

fn analytic_source() -> EnsembleSource {
    EnsembleSource::Analytic
}

fn all_cross() -> CrossCoupling {
    CrossCoupling::All
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_budget() -> f64 {
    8.0
}

impl RunConfig {
    /// Parses TOML, rejecting every unknown key at once.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, CliError> {
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(value, |path| {
            unknown.push(path.to_string().replace(".?", ""))
        })
        .map_err(|e| CliError::Validation(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(CliError::Validation(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn sections(&self) -> [(ExperimentKind, bool); 8] {
        [
            (ExperimentKind::Analytic, self.analytic.is_some()),
            (ExperimentKind::Mqc, self.mqc.is_some()),
            (ExperimentKind::Overlap, self.overlap.is_some()),
            (ExperimentKind::PrepScan, self.prep_scan.is_some()),
            (ExperimentKind::Ensemble, self.ensemble.is_some()),
            (ExperimentKind::Bath, self.bath.is_some()),
            (ExperimentKind::AhtVerify, self.aht_verify.is_some()),
            (ExperimentKind::Fit, self.fit.is_some()),
        ]
    }

    /// Structural checks that need no physics.
    pub fn validate(&self) -> Result<(), CliError> {
        let present: Vec<&str> = self
            .sections()
            .iter()
            .filter(|s| s.1)
            .map(|s| s.0.name())
            .collect();
        if present != [self.experiment.name()] {
            return Err(CliError::Validation(format!(
                "experiment = \"{}\" needs exactly the [{}] section, found [{}]",
                self.experiment.name(),
                self.experiment.name(),
                present.join(", ")
            )));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        if !(self.memory_budget_gib > 0.0) {
            return Err(CliError::Validation(
                "memory_budget_gib must be positive".into(),
            ));
        }
        if let Some(m) = &self.mqc {
            if m.evolution == EvolutionKind::Pulsed && m.pulse.is_none() {
                return Err(CliError::Validation(
                    "mqc: evolution = \"pulsed\" needs [mqc.pulse]".into(),
                ));
            }
            if m.evolution == EvolutionKind::IdealDq && m.pulse.is_some() {
                return Err(CliError::Validation(
                    "mqc: [mqc.pulse] given with evolution = \"ideal_dq\"".into(),
                ));
            }
        }
        if let Some(b) = &self.bath {
            if b.samples == 0 {
                return Err(CliError::Validation(
                    "bath.samples must be at least 1".into(),
                ));
            }
        }
        if let Some(o) = &self.overlap {
            if o.backend.kind == BackendKind::PerSite {
                return Err(CliError::Validation(
                    "overlap supports exact_density and typicality".into(),
                ));
            }
        }
        Ok(())
    }

    /// Spins of the largest system the run touches, for the memory budget.
    pub fn n_spins(&self) -> usize {
        if let Some(c) = &self.mqc {
            return c.n_spins;
        }
        if let Some(c) = &self.overlap {
            return c.n_spins;
        }
        if let Some(c) = &self.prep_scan {
            return c.n_spins;
        }
        if let Some(c) = &self.ensemble {
            if c.source == EnsembleSource::Analytic {
                return 1;
            }
            return match &c.ensemble {
                EnsembleSpec::UniformRange { n_max, .. }
                | EnsembleSpec::RandomCluster { n_max, .. } => *n_max,
                EnsembleSpec::Explicit { members } => {
                    members.iter().map(|m| m.0).max().unwrap_or(1)
                }
            };
        }
        if let Some(c) = &self.bath {
            return match c.kind {
                BathKind::TwoChain => 2 * c.chain_n,
                _ => c.chain_n + c.bath_n,
            };
        }
        if let Some(c) = &self.aht_verify {
            return c.n_spins;
        }
        1
    }

    /// Whether the largest system runs on dense matrices.
    pub fn dense(&self) -> bool {
        let kind = |b: &BackendConfig| b.kind == BackendKind::ExactDensity;
        match self.experiment {
            ExperimentKind::Mqc => self.mqc.as_ref().is_some_and(|c| kind(&c.backend)),
            ExperimentKind::Overlap => self.overlap.as_ref().is_some_and(|c| kind(&c.backend)),
            ExperimentKind::Ensemble => self
                .ensemble
                .as_ref()
                .is_some_and(|c| c.source == EnsembleSource::Mqc && kind(&c.backend)),
            ExperimentKind::Bath => self.bath.as_ref().is_some_and(|c| kind(&c.backend)),
            ExperimentKind::PrepScan | ExperimentKind::AhtVerify => true,
            ExperimentKind::Analytic | ExperimentKind::Fit => false,
        }
    }

    /// Declared peak memory of one job in bytes.
    pub fn memory_estimate(&self) -> f64 {
        let n = self.n_spins() as i32;
        let dim = 2f64.powi(n);
        if self.dense() {
            // a few dense complex matrices
            8.0 * 16.0 * dim * dim
        } else {
            // bras per magnetization sector plus work vectors
            (n as f64 + 8.0) * 16.0 * dim
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
experiment = "analytic"
seed = 3

[analytic]
n_spins = 18
initial = "thermal"
times = { start_inv_b = 0.0, stop_inv_b = 8.0, count = 5 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Analytic);
        let a = c.analytic.as_ref().unwrap();
        assert_eq!(a.times.points("t").unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&j).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = BASIC
            .replace("seed = 3", "seed = 3\nbogus = 1")
            .replace("n_spins = 18", "n_spins = 18\nspins = 4");
        let e = RunConfig::from_toml(&text).unwrap_err();
        let msg = e.to_string();
        assert!(
            msg.contains("bogus") && msg.contains("analytic.spins"),
            "{msg}"
        );
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn section_must_match_experiment() {
        let text = BASIC.replace("experiment = \"analytic\"", "experiment = \"mqc\"");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn grid_forms() {
        let g = Grid {
            values_inv_b: Some(vec![0.5, 1.0]),
            ..Grid::default()
        };
        assert_eq!(g.points("t").unwrap(), vec![0.5, 1.0]);
        assert!(Grid::default().points("t").is_err());
        assert!(Grid::linspace(0.0, 1.0, 0).points("t").is_err());
        assert_eq!(Grid::linspace(2.0, 3.0, 1).points("t").unwrap(), vec![2.0]);
    }
}
