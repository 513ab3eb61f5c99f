//! Experiment dispatch. Each experiment produces in-memory artifacts first so
//! that nothing is written when a run fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{Value, json};
use spinmqc::analytic::{
    analytic_spectrum, ensemble_average, fit_time_axis, j_end_nn, j_thermal_nn, mirror_time,
};
use spinmqc::bathlab::run_scenario;
use spinmqc::hamiltonian::{build_dipolar, build_dq, dense_matrix};
use spinmqc::lattice::{CouplingMatrix, build_chain_geometry, coupling_matrix};
use spinmqc::mqc::{
    Backend, Evolution, ExperimentProtocol, MQCSpectrum, run_mqc, run_mqc_raw, run_overlap,
    run_overlap_typical, scan_delta,
};
use spinmqc::propagator::pulse::relative_distance;
use spinmqc::propagator::{Phase, dq16, dq16_pair, effective_hamiltonian};
use spinmqc::states::{
    central_zero_crossing, end_polarized_spec, fidelity_peak, prep_scan, thermal_state_spec,
};

use crate::CliError;
use crate::config::{EnsembleSource, EvolutionKind, ExperimentKind, InitialKind, RunConfig};
use crate::manifest::{OutputFile, RunManifest, sha256_hex};

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Files and metadata of a finished run, not yet on disk.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub seeds: Vec<u64>,
    pub digests: BTreeMap<String, String>,
    pub summary: Value,
}

impl Artifacts {
    fn file(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn couplings(&mut self, name: &str, c: &CouplingMatrix) {
        self.digests
            .insert(name.to_string(), sha256_hex(&c.to_bytes()));
    }
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn chain_couplings(n: usize, t: spinmqc::lattice::Truncation) -> Result<CouplingMatrix, CliError> {
    let g = build_chain_geometry(n).map_err(|e| CliError::Validation(e.to_string()))?;
    coupling_matrix(&g, t).map_err(rt)
}

fn initial_spec(kind: InitialKind, n: usize) -> Result<spinmqc::states::MixedStateSpec, CliError> {
    match kind {
        InitialKind::Thermal => Ok(thermal_state_spec(n)),
        InitialKind::EndPolarized => {
            end_polarized_spec(n).map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

/// Executes `cfg` and returns its artifacts.
pub fn execute(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let mut a = Artifacts {
        seeds: vec![cfg.seed],
        ..Artifacts::default()
    };
    match cfg.experiment {
        ExperimentKind::Analytic => analytic(cfg, &mut a)?,
        ExperimentKind::Mqc => mqc(cfg, &mut a)?,
        ExperimentKind::Overlap => overlap(cfg, &mut a)?,
        ExperimentKind::PrepScan => prep(cfg, &mut a)?,
        ExperimentKind::Ensemble => ensemble(cfg, &mut a)?,
        ExperimentKind::Bath => bath(cfg, &mut a)?,
        ExperimentKind::AhtVerify => aht(cfg, &mut a)?,
        ExperimentKind::Fit => fit(cfg, &mut a)?,
    }
    Ok(a)
}

fn analytic(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.analytic.as_ref().expect("validated");
    let times = c.times.points("analytic.times")?;
    let s = analytic_spectrum(c.n_spins, c.initial.state_kind(), &times)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    a.file("analytic.csv", s.to_csv());
    a.summary = json!({ "mirror_time": mirror_time(c.n_spins).ok() });
    Ok(())
}

fn mqc(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.mqc.as_ref().expect("validated");
    let times = c.times.points("mqc.times")?;
    let couplings = chain_couplings(c.n_spins, c.truncation)?;
    a.couplings("couplings", &couplings);
    let evolution = match c.evolution {
        EvolutionKind::IdealDq => Evolution::ideal_dq(&couplings),
        EvolutionKind::Pulsed => {
            let p = c.pulse.as_ref().expect("validated");
            Evolution::PulsedScan {
                h_int: build_dipolar(&couplings),
                mode: p.mode,
                width: p.width_inv_b,
                cycles: p.cycles,
            }
        }
    };
    let mut p = ExperimentProtocol::new(
        evolution,
        initial_spec(c.initial, c.n_spins)?,
        times,
        c.backend.resolve(c.n_spins, cfg.seed),
    );
    if let Some(k) = c.k {
        p = p.with_k(k);
    }
    let s = if c.raw { run_mqc_raw(&p) } else { run_mqc(&p) }.map_err(rt)?;
    a.file("mqc.csv", s.to_csv());
    a.summary = json!({ "warnings": s.warnings, "k": s.k() });
    Ok(())
}

fn overlap(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.overlap.as_ref().expect("validated");
    if c.cycles.is_empty() {
        return Err(CliError::Validation("overlap.cycles is empty".into()));
    }
    let couplings = chain_couplings(c.n_spins, c.truncation)?;
    a.couplings("couplings", &couplings);
    let h = build_dipolar(&couplings);
    let (x, y) = dq16_pair(c.delta_inv_b, c.width_inv_b);
    let init = initial_spec(c.initial, c.n_spins)?;
    let series = match c.backend.resolve(c.n_spins, cfg.seed) {
        Backend::Typicality { seed, .. } => {
            run_overlap_typical(&x, &y, &h, &init, &c.cycles, c.mode, seed, 1e-12)
        }
        _ => run_overlap(&x, &y, &h, &init, &c.cycles, c.mode),
    }
    .map_err(rt)?;
    let mut out = String::from("cycles,time,lambda\n");
    for (m, (t, l)) in c.cycles.iter().zip(&series) {
        writeln!(out, "{m},{},{}", num(*t), num(*l)).unwrap();
    }
    a.file("overlap.csv", out);
    a.summary = json!({ "cycle_time": x.duration(c.mode) });
    Ok(())
}

fn prep(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.prep_scan.as_ref().expect("validated");
    let t1 = c.t1.points("prep_scan.t1")?;
    let couplings = chain_couplings(c.n_spins, c.truncation)?;
    a.couplings("couplings", &couplings);
    let scan = prep_scan(&couplings, &t1, &spinmqc::states::DEFAULT_PREP_AXES).map_err(rt)?;
    let mut out = String::from("t1,fidelity,end_polarization,central_polarization\n");
    for p in &scan {
        writeln!(
            out,
            "{},{},{},{}",
            num(p.t1),
            num(p.fidelity),
            num(p.end_polarization),
            num(p.central_polarization)
        )
        .unwrap();
    }
    a.file("prep_scan.csv", out);
    let (lo, hi) = (t1[0], t1[t1.len() - 1]);
    a.summary = json!({
        "fidelity_peak": fidelity_peak(&couplings, lo, hi, t1.len()).ok(),
        "central_zero_crossing": central_zero_crossing(&couplings, lo, hi, t1.len()).ok(),
    });
    Ok(())
}

fn ensemble(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.ensemble.as_ref().expect("validated");
    let times = c.times.points("ensemble.times")?;
    let members = c
        .ensemble
        .weights()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let spectra = members
        .par_iter()
        .map(|&(n, _)| -> Result<MQCSpectrum, CliError> {
            match c.source {
                EnsembleSource::Analytic => {
                    analytic_spectrum(n, c.initial.state_kind(), &times).map_err(rt)
                }
                EnsembleSource::Mqc => {
                    let couplings = chain_couplings(n, c.truncation)?;
                    let mut p = ExperimentProtocol::new(
                        Evolution::ideal_dq(&couplings),
                        initial_spec(c.initial, n)?,
                        times.clone(),
                        c.backend.resolve(n, cfg.seed),
                    );
                    if let Some(k) = c.k {
                        p = p.with_k(k);
                    }
                    run_mqc(&p).map_err(rt)
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let width = spectra.iter().map(|s| s.orders.len()).max().unwrap_or(0);
    let padded: Vec<MQCSpectrum> = spectra.into_iter().map(|s| pad_orders(s, width)).collect();
    let weights: Vec<f64> = members.iter().map(|m| m.1).collect();
    let avg = ensemble_average(&padded, &weights).map_err(rt)?;
    a.file("ensemble.csv", avg.to_csv());
    let mut idx = String::from("n_spins,weight\n");
    for (n, w) in &members {
        writeln!(idx, "{n},{}", num(*w)).unwrap();
    }
    a.file("members.csv", idx);
    Ok(())
}

/// Extends a spectrum with zero orders up to `width` columns.
fn pad_orders(mut s: MQCSpectrum, width: usize) -> MQCSpectrum {
    while s.orders.len() < width {
        let next = s.orders.last().map_or(0, |o| o + 1);
        s.orders.push(next);
        for row in &mut s.j {
            row.push(0.0);
        }
    }
    s
}

fn bath(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.bath.as_ref().expect("validated");
    let base = c.scenario(cfg.seed)?;
    let seeds: Vec<u64> = (0..c.samples)
        .map(|r| spinmqc::mqc::realization_seed(cfg.seed, r))
        .collect();
    let seeds = if c.samples == 1 {
        vec![cfg.seed]
    } else {
        seeds
    };
    let runs = seeds
        .iter()
        .map(|&seed| {
            let mut s = base.clone();
            s.seed = seed;
            if let Backend::Typicality {
                seed: ref mut bs, ..
            }
            | Backend::PerSite {
                seed: ref mut bs, ..
            } = s.backend
            {
                *bs = seed;
            }
            run_scenario(&s).map_err(|e| match e {
                spinmqc::Error::SizeGuard { .. } | spinmqc::Error::InvalidArgument(_) => {
                    CliError::Validation(e.to_string())
                }
                _ => rt(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let w = vec![1.0 / runs.len() as f64; runs.len()];
    let total: Vec<MQCSpectrum> = runs.iter().map(|r| r.spectrum.clone()).collect();
    let chain: Vec<MQCSpectrum> = runs.iter().map(|r| r.chain_only.clone()).collect();
    a.file(
        "spectrum.csv",
        ensemble_average(&total, &w).map_err(rt)?.to_csv(),
    );
    a.file(
        "chain_only.csv",
        ensemble_average(&chain, &w).map_err(rt)?.to_csv(),
    );
    let mut leak = String::from("time,leakage_fraction,readout_deviation\n");
    for (i, t) in base.times.iter().enumerate() {
        let f = runs.iter().map(|r| r.leakage[i]).sum::<f64>() / runs.len() as f64;
        let d = runs.iter().map(|r| r.readout_deviation[i]).sum::<f64>() / runs.len() as f64;
        writeln!(leak, "{},{},{}", num(*t), num(f), num(d)).unwrap();
    }
    a.file("leakage.csv", leak);
    let mut sampled = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        if let Some(c) = &run.couplings {
            a.couplings(&format!("couplings_{r}"), c);
        }
        if let Some(g) = &run.glass {
            let bytes = serde_json::to_vec(g).map_err(rt)?;
            a.digests.insert(format!("glass_{r}"), sha256_hex(&bytes));
        }
        sampled.push(json!({ "seed": run.seed, "couplings": run.couplings, "glass": run.glass }));
    }
    a.file(
        "couplings.json",
        serde_json::to_string(&sampled).map_err(rt)?,
    );
    a.seeds = seeds;
    Ok(())
}

fn aht(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.aht_verify.as_ref().expect("validated");
    if c.tc_inv_b.is_empty() {
        return Err(CliError::Validation("aht_verify.tc_inv_b is empty".into()));
    }
    let couplings = chain_couplings(c.n_spins, c.truncation)?;
    a.couplings("couplings", &couplings);
    let h = build_dipolar(&couplings);
    let target = dense_matrix(&build_dq(&couplings).scaled(-1.0)).map_err(rt)?;
    let init = thermal_state_spec(c.n_spins);
    let reference = run_mqc(&ExperimentProtocol::new(
        Evolution::ideal_dq(&couplings),
        init.clone(),
        c.tc_inv_b.clone(),
        Backend::ExactDensity,
    ))
    .map_err(rt)?;
    let pulsed = run_mqc(&ExperimentProtocol::new(
        Evolution::PulsedScan {
            h_int: h.clone(),
            mode: c.mode,
            width: c.width_inv_b,
            cycles: 1,
        },
        init,
        c.tc_inv_b.clone(),
        Backend::ExactDensity,
    ))
    .map_err(rt)?;
    let mut out = String::from("tc,relative_error,j0_deviation\n");
    for (i, &tc) in c.tc_inv_b.iter().enumerate() {
        let seq = dq16(scan_delta(tc, c.width_inv_b), c.width_inv_b, Phase::X);
        let err = match effective_hamiltonian(&seq, &h, c.mode) {
            Ok(heff) => relative_distance(&heff, &target),
            Err(_) => f64::NAN,
        };
        let dj = (pulsed.j[i][0] - reference.j[i][0]).abs();
        writeln!(out, "{},{},{}", num(tc), num(err), num(dj)).unwrap();
    }
    a.file("aht.csv", out);
    Ok(())
}

fn fit(cfg: &RunConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let c = cfg.fit.as_ref().expect("validated");
    let text = std::fs::read_to_string(&c.data_csv)
        .map_err(|e| CliError::Validation(format!("{}: {e}", c.data_csv.display())))?;
    a.digests.insert("data".into(), sha256_hex(text.as_bytes()));
    let data = parse_two_columns(&text)?;
    let n = c.n_spins;
    let model = |t: f64| match c.initial {
        InitialKind::Thermal => j_thermal_nn(n, t).0,
        InitialKind::EndPolarized => j_end_nn(n, t).map_or(f64::NAN, |j| j.0),
    };
    if c.initial == InitialKind::EndPolarized && n < 2 {
        return Err(CliError::Validation(
            "end-polarized model needs n_spins >= 2".into(),
        ));
    }
    let r = fit_time_axis(&data, model, c.inv_b_guess_us)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    a.file(
        "fit.csv",
        format!(
            "t0_us,inv_b_us,residual\n{},{},{}\n",
            num(r.t0),
            num(r.inv_b),
            num(r.residual)
        ),
    );
    a.summary = json!({ "t0_us": r.t0, "inv_b_us": r.inv_b, "residual": r.residual });
    Ok(())
}

/// Reads `x,y` rows after a header line.
pub fn parse_two_columns(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| s.and_then(|v| v.parse::<f64>().ok());
        match (parse(it.next()), parse(it.next())) {
            (Some(x), Some(y)) => rows.push((x, y)),
            _ => {
                return Err(CliError::Validation(format!(
                    "data line {}: expected two numbers",
                    i + 1
                )));
            }
        }
    }
    Ok(rows)
}

/// Runs `cfg` and writes its outputs plus `manifest.json` into `out`.
/// Returns the manifest.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let art = execute(cfg)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &art.files {
        let path = out.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        outputs.push(OutputFile {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds: art.seeds,
        digests: art.digests,
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        summary: art.summary,
    };
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
