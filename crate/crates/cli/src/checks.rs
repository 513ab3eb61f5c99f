//! Acceptance checks, one per criterion, with tolerances pinned here.
//! `mqc verify` and the `acceptance` test both run them.

use std::time::Instant;

use serde::Serialize;
use spinmqc::analytic::{
    envelope_decay_rate, j_end_nn, j_thermal_nn, linear_regression, mirror_time,
};
use spinmqc::bathlab::{
    BathKind, BathScenario, magnetization_commutator, run_glass_shard, run_random_bath,
    run_two_chain,
};
use spinmqc::hamiltonian::{PureState, build_dipolar, norm_sqr};
use spinmqc::lattice::{
    CouplingMatrix, Truncation, build_chain_geometry, coupling_matrix,
    effective_cross_chain_coupling,
};
use spinmqc::mqc::{Backend, Evolution, ExperimentProtocol, MQCSpectrum, run_mqc, run_overlap};
use spinmqc::propagator::{Chebyshev, PulseMode, dq16_pair};
use spinmqc::states::{
    Amplitudes, StateKind, central_zero_crossing, end_polarized_spec, fidelity_peak, random_state,
    thermal_state_spec,
};

use crate::config::RunConfig;
use crate::run::run_to_dir;

/// Environment variable enabling the long-running variants.
pub const FULL_ENV: &str = "MQC_ACCEPTANCE_FULL";

pub fn full_requested() -> bool {
    std::env::var(FULL_ENV).is_ok_and(|v| v == "1")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: &'static str,
    pub name: &'static str,
    pub outcome: Outcome,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
        };
        format!(
            "{tag} criterion {}: {} ({}) [{:.1} s]",
            self.id, self.name, self.detail, self.seconds
        )
    }
}

fn timed(
    id: &'static str,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String), String>,
) -> Check {
    let start = Instant::now();
    let (outcome, detail) = match f() {
        Ok((true, d)) => (Outcome::Pass, d),
        Ok((false, d)) => (Outcome::Fail, d),
        Err(e) => (Outcome::Fail, format!("error: {e}")),
    };
    Check {
        id,
        name,
        outcome,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn skipped(id: &'static str, name: &'static str) -> Check {
    Check {
        id,
        name,
        outcome: Outcome::Skip,
        detail: format!("set {FULL_ENV}=1 to run"),
        seconds: 0.0,
    }
}

/// Skip record for one of the long variants.
pub fn skipped_check(id: &'static str) -> Check {
    match id {
        "7-full" => skipped(id, "cross-chain leakage at 11 + 11 and 11 + 9"),
        _ => skipped(id, "bath phenomenology of J0 and J2 decay"),
    }
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn chain(n: usize, t: Truncation) -> Result<CouplingMatrix, String> {
    coupling_matrix(&build_chain_geometry(n).map_err(e)?, t).map_err(e)
}

fn max_order(s: &MQCSpectrum, pick: impl Fn(i32) -> bool) -> f64 {
    s.j.iter()
        .flat_map(|row| {
            row.iter()
                .zip(&s.orders)
                .filter(|(_, o)| pick(**o))
                .map(|(v, _)| v.abs())
        })
        .fold(0.0, f64::max)
}

pub const C1_TOL: f64 = 1e-9;

pub fn criterion_1() -> Check {
    timed(
        "1",
        "analytic and exact backends agree on NN chains",
        || {
            let times = linspace(0.0, 8.0, 50);
            let mut worst: f64 = 0.0;
            for n in 2..=10 {
                let c = CouplingMatrix::nn_chain(n);
                for kind in [StateKind::Thermal, StateKind::EndPolarized] {
                    let init = if kind == StateKind::Thermal {
                        thermal_state_spec(n)
                    } else {
                        end_polarized_spec(n).map_err(e)?
                    };
                    let s = run_mqc(&ExperimentProtocol::new(
                        Evolution::ideal_dq(&c),
                        init,
                        times.clone(),
                        Backend::ExactDensity,
                    ))
                    .map_err(e)?;
                    for (i, &t) in times.iter().enumerate() {
                        let (j0, j2) = if kind == StateKind::Thermal {
                            j_thermal_nn(n, t)
                        } else {
                            j_end_nn(n, t).map_err(e)?
                        };
                        for (q, v) in s.j[i].iter().enumerate() {
                            let r = match q {
                                0 => j0,
                                2 => j2,
                                _ => 0.0,
                            };
                            worst = worst.max((v - r).abs());
                        }
                    }
                }
            }
            Ok((
                worst < C1_TOL,
                format!("max |dJ| = {worst:.2e}, tol {C1_TOL:.0e}, n = 2..10, 50 times"),
            ))
        },
    )
}

pub const C2_TOL: f64 = 0.01;
pub const C2_REALIZATIONS: usize = 40;

pub fn criterion_2() -> Check {
    timed("2", "typicality matches exact at n = 10", || {
        let n = 10;
        let c = CouplingMatrix::nn_chain(n);
        let times = linspace(0.0, 8.0, 17);
        let ex = run_mqc(&ExperimentProtocol::new(
            Evolution::ideal_dq(&c),
            thermal_state_spec(n),
            times.clone(),
            Backend::ExactDensity,
        ))
        .map_err(e)?;
        let ty = run_mqc(&ExperimentProtocol::new(
            Evolution::ideal_dq(&c),
            thermal_state_spec(n),
            times,
            Backend::Typicality {
                realizations: C2_REALIZATIONS,
                seed: 2024,
                amplitudes: Amplitudes::RandomPhase,
            },
        ))
        .map_err(e)?;
        let d =
            ex.j.iter()
                .flatten()
                .zip(ty.j.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        Ok((
            d < C2_TOL,
            format!("max |dJ| = {d:.4}, tol {C2_TOL}, {C2_REALIZATIONS} realizations"),
        ))
    })
}

pub const C3_ZERO_TOL: f64 = 1e-10;
pub const C3_J4_MIN: f64 = 0.01;

pub fn criterion_3() -> Check {
    timed("3", "selection rules and NNN four-quantum growth", || {
        let n = 10;
        let times = linspace(0.0, 8.0, 17);
        let nnn = chain(n, Truncation::Nnn)?;
        let nn = CouplingMatrix::nn_chain(n);
        let mut odd: f64 = 0.0;
        for c in [&nn, &nnn] {
            for init in [thermal_state_spec(n), end_polarized_spec(n).map_err(e)?] {
                let s = run_mqc(&ExperimentProtocol::new(
                    Evolution::ideal_dq(c),
                    init,
                    times.clone(),
                    Backend::ExactDensity,
                ))
                .map_err(e)?;
                odd = odd.max(max_order(&s, |o| o % 2 != 0));
            }
        }
        let s = run_mqc(&ExperimentProtocol::new(
            Evolution::ideal_dq(&nn),
            end_polarized_spec(n).map_err(e)?,
            times,
            Backend::ExactDensity,
        ))
        .map_err(e)?;
        let j4_nn = max_order(&s, |o| o >= 4);
        let m = 19;
        let c = chain(m, Truncation::Nnn)?;
        let p = ExperimentProtocol::new(
            Evolution::ideal_dq(&c),
            end_polarized_spec(m).map_err(e)?,
            vec![5.0],
            Backend::typicality(m, 19),
        );
        let j4 = run_mqc(&p).map_err(e)?.j[0][4];
        let pass = odd < C3_ZERO_TOL && j4_nn < C3_ZERO_TOL && j4 > C3_J4_MIN;
        Ok((
            pass,
            format!("max odd = {odd:.1e}, NN max J>=4 = {j4_nn:.1e}, NNN n=19 J4(5) = {j4:.4}"),
        ))
    })
}

pub const C4_TC_LIMIT: f64 = 4.0;
pub const C4_TOL: f64 = 0.05;

/// `|J0(pulsed, one cycle) - J0(analytic)|` on the cycle-time grid.
pub fn aht_deviation(n: usize, tcs: &[f64]) -> Result<Vec<f64>, String> {
    let c = CouplingMatrix::nn_chain(n);
    let ev = Evolution::PulsedScan {
        h_int: build_dipolar(&c),
        mode: PulseMode::Ideal,
        width: 0.0,
        cycles: 1,
    };
    let s = run_mqc(&ExperimentProtocol::new(
        ev,
        thermal_state_spec(n),
        tcs.to_vec(),
        Backend::ExactDensity,
    ))
    .map_err(e)?;
    Ok(tcs
        .iter()
        .enumerate()
        .map(|(i, &t)| (s.j[i][0] - j_thermal_nn(n, t).0).abs())
        .collect())
}

pub fn criterion_4() -> Check {
    timed(
        "4",
        "single-cycle AHT error small for T_c <= 4, growing beyond",
        || {
            let tcs = linspace(0.5, 8.0, 16);
            let mut pass = true;
            let mut parts = Vec::new();
            for n in [4, 6, 8] {
                let d = aht_deviation(n, &tcs)?;
                let inside = tcs
                    .iter()
                    .zip(&d)
                    .filter(|(t, _)| **t <= C4_TC_LIMIT)
                    .map(|(_, v)| *v)
                    .fold(0.0, f64::max);
                let beyond: Vec<f64> = tcs
                    .iter()
                    .zip(&d)
                    .filter(|(t, _)| **t >= C4_TC_LIMIT)
                    .map(|(_, v)| *v)
                    .collect();
                let monotone = beyond.windows(2).all(|w| w[1] >= w[0]);
                pass &= inside < C4_TOL && monotone;
                parts.push(format!(
                    "n={n}: max {inside:.3} for T_c<=4, monotone beyond: {monotone}"
                ));
            }
            Ok((pass, parts.join("; ")))
        },
    )
}

pub const C5_TOL: f64 = 0.02;
/// End of the time window of the MQC data.
pub const C5_WINDOW: f64 = 5.0;

pub fn criterion_5() -> Check {
    timed("5", "finite-width overlap stays flat", || {
        let n = 9;
        let c = CouplingMatrix::nn_chain(n);
        let (x, y) = dq16_pair(0.0225, 0.0075);
        let tc = x.duration(PulseMode::FiniteWidth);
        let cycles: Vec<usize> = (0..=(C5_WINDOW / tc).floor() as usize).collect();
        let l = run_overlap(
            &x,
            &y,
            &build_dipolar(&c),
            &end_polarized_spec(n).map_err(e)?,
            &cycles,
            PulseMode::FiniteWidth,
        )
        .map_err(e)?;
        let d = l
            .iter()
            .map(|(_, v)| (v - l[0].1).abs() / l[0].1)
            .fold(0.0, f64::max);
        Ok((
            d < C5_TOL,
            format!("max relative change {d:.2e} over t <= {C5_WINDOW}, T_c = {tc:.3}"),
        ))
    })
}

pub const C6_PEAK: f64 = 0.25;
pub const C6_CROSS: f64 = 0.42;
pub const C6_TOL: f64 = 0.02;

pub fn criterion_6() -> Check {
    timed("6", "end-state preparation times", || {
        let mut pass = true;
        let mut parts = Vec::new();
        for n in 5..=11 {
            let c = CouplingMatrix::nn_chain(n);
            let peak = fidelity_peak(&c, 0.15, 0.35, 21).map_err(e)?;
            let cross = central_zero_crossing(&c, 0.3, 0.55, 11).map_err(e)?;
            pass &= (peak - C6_PEAK).abs() <= C6_TOL && (cross - C6_CROSS).abs() <= C6_TOL;
            parts.push(format!("n={n}: {peak:.3}/{cross:.3}"));
        }
        Ok((pass, format!("t1/t1' {}", parts.join(", "))))
    })
}

pub const C7_COUPLING: f64 = -0.1488;
pub const C7_COUPLING_TOL: f64 = 1e-4;
pub const C7_TWO_CHAIN_MAX: f64 = 0.05;
/// Band accepted as "on the order of 1%" for the rms over `t > 0`.
pub const C7_BATH_BAND: (f64, f64) = (0.002, 0.05);

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn leakage_checks(
    chain_per: usize,
    chain_n: usize,
    bath_n: usize,
    realizations: usize,
) -> Result<(bool, String), String> {
    let j = effective_cross_chain_coupling();
    let times = linspace(0.0, 5.0, 6);
    let two = BathScenario::new(
        BathKind::TwoChain,
        chain_per,
        0,
        StateKind::Thermal,
        times.clone(),
        Backend::typicality(2 * chain_per, 7),
    );
    let two = run_two_chain(&two).map_err(e)?;
    let two_max = two.readout_deviation.iter().cloned().fold(0.0, f64::max);
    let two_rms_max = two.leakage.iter().cloned().fold(0.0, f64::max);
    let backend = Backend::Typicality {
        realizations,
        seed: 11,
        amplitudes: Amplitudes::RandomPhase,
    };
    let mut bath = BathScenario::new(
        BathKind::RandomDipolar,
        chain_n,
        bath_n,
        StateKind::Thermal,
        times,
        backend,
    );
    bath.seed = 5;
    let bath = run_random_bath(&bath).map_err(e)?;
    let bath_rms = rms(&bath.readout_deviation[1..]);
    let pass = (j - C7_COUPLING).abs() <= C7_COUPLING_TOL
        && two_max < C7_TWO_CHAIN_MAX
        && (C7_BATH_BAND.0..=C7_BATH_BAND.1).contains(&bath_rms);
    Ok((
        pass,
        format!(
            "J_eff = {j:.5}; two-chain {chain_per}+{chain_per} max |dJ| total vs chain-only {two_max:.4} (t <= 5, signal-rms ratio {two_rms_max:.4}); random bath {chain_n}+{bath_n} rms |dJ| {bath_rms:.4}"
        ),
    ))
}

pub fn criterion_7() -> Check {
    timed(
        "7",
        "cross-chain constant and leakage (reduced sizes)",
        || leakage_checks(8, 8, 6, 4),
    )
}

pub fn criterion_7_full() -> Check {
    timed(
        "7-full",
        "cross-chain leakage at 11 + 11 and 11 + 9",
        || leakage_checks(11, 11, 9, 1),
    )
}

pub const C8_TM: f64 = 5.0;
pub const C8_TOL: f64 = 0.5;
pub const C8_R2: f64 = 0.99;

pub fn criterion_8() -> Check {
    timed("8", "mirror time and its linear growth", || {
        let t18 = mirror_time(18).map_err(e)?;
        let t19 = mirror_time(19).map_err(e)?;
        let ns: Vec<f64> = (9..=21).map(|n| n as f64).collect();
        let tm: Vec<f64> = (9..=21)
            .map(mirror_time)
            .collect::<Result<_, _>>()
            .map_err(e)?;
        let (_, slope, r2) = linear_regression(&ns, &tm);
        let pass = (t18 - C8_TM).abs() <= C8_TOL && (t19 - C8_TM).abs() <= C8_TOL && r2 > C8_R2;
        Ok((
            pass,
            format!("t_m(18) = {t18:.3}, t_m(19) = {t19:.3}, slope {slope:.4}, R^2 = {r2:.5}"),
        ))
    })
}

pub const C9_RATIO: (f64, f64) = (1.5, 2.5);
pub const C9_GLASS_TOL: f64 = 0.3;

pub fn criterion_9() -> Check {
    timed("9", "bath phenomenology of J0 and J2 decay", || {
        let times = linspace(0.0, 18.75, 76);
        let iso = |q: usize| -> Vec<f64> {
            times
                .iter()
                .map(|&t| {
                    let (j0, j2) = j_thermal_nn(11, t);
                    if q == 0 { j0 } else { j2 }
                })
                .collect()
        };
        let rates = |s: &MQCSpectrum| -> Result<(f64, f64), String> {
            let g0 = envelope_decay_rate(&times, &s.order(0), &iso(0)).map_err(e)?;
            let g2 = envelope_decay_rate(&times, &s.order(2), &iso(2)).map_err(e)?;
            Ok((g0, g2))
        };
        let mut d = BathScenario::new(
            BathKind::RandomDipolar,
            11,
            9,
            StateKind::Thermal,
            times.clone(),
            Backend::typicality(20, 9),
        );
        d.seed = 1;
        let (d0, d2) = rates(&run_random_bath(&d).map_err(e)?.spectrum)?;
        let mut g = BathScenario::new(
            BathKind::GlassShard,
            11,
            9,
            StateKind::Thermal,
            times.clone(),
            Backend::typicality(20, 9),
        );
        g.seed = 1;
        let (g0, g2) = rates(&run_glass_shard(&g).map_err(e)?.spectrum)?;
        let ratio = d0 / d2;
        let glass = (g2 - g0).abs() / g0.abs();
        let pass = (C9_RATIO.0..=C9_RATIO.1).contains(&ratio) && glass < C9_GLASS_TOL;
        Ok((
            pass,
            format!(
                "dipolar gamma0/gamma2 = {ratio:.3}; glass |gamma2-gamma0|/gamma0 = {glass:.3}"
            ),
        ))
    })
}

pub const C10_NORM_TOL: f64 = 1e-10;
pub const C10_COMMUTATOR_TOL: f64 = 1e-10;

const REPLAY_CONFIG: &str = r#"
experiment = "mqc"
seed = 42

[mqc]
n_spins = 8
truncation = "nnn"
initial = "end_polarized"
times = { start_inv_b = 0.0, stop_inv_b = 3.0, count = 4 }
backend = { kind = "typicality", realizations = 2 }
"#;

fn replay_identical() -> Result<bool, String> {
    let dir = std::env::temp_dir().join(format!("mqc-replay-{}", std::process::id()));
    let cfg = RunConfig::from_toml(REPLAY_CONFIG).map_err(e)?;
    let first = run_to_dir(&cfg, &dir.join("a")).map_err(e)?;
    let again = crate::RunManifest::read(&dir.join("a").join("manifest.json")).map_err(e)?;
    let second = run_to_dir(&again.config, &dir.join("b")).map_err(e)?;
    let same = first
        .outputs
        .iter()
        .zip(&second.outputs)
        .all(|(x, y)| x.sha256 == y.sha256)
        && first.outputs.len() == second.outputs.len()
        && second.mismatches(&dir.join("a")).is_empty();
    let _ = std::fs::remove_dir_all(&dir);
    Ok(same)
}

pub fn criterion_10() -> Check {
    timed(
        "10",
        "norm, magnetization conservation and manifest replay",
        || {
            let n = 10;
            let c = chain(n, Truncation::Nnn)?;
            let ch = Chebyshev::new(std::sync::Arc::new(build_dipolar(&c).compile()), 1e-14)
                .map_err(e)?;
            let plan = ch.plan(0.01).map_err(e)?;
            let PureState { amps, .. } = random_state(n, 3, Amplitudes::Gaussian);
            let mut v = amps;
            let start = norm_sqr(&v);
            for _ in 0..1000 {
                ch.evolve_with(&plan, &mut v).map_err(e)?;
            }
            let drift = ((norm_sqr(&v) / start).sqrt() - 1.0).abs();
            let two = run_two_chain(&BathScenario::new(
                BathKind::TwoChain,
                5,
                0,
                StateKind::Thermal,
                vec![0.0],
                Backend::ExactDensity,
            ))
            .map_err(e)?;
            let bath = run_random_bath(&BathScenario::new(
                BathKind::RandomDipolar,
                6,
                4,
                StateKind::Thermal,
                vec![0.0],
                Backend::ExactDensity,
            ))
            .map_err(e)?;
            let comm = magnetization_commutator(&two.hamiltonian, 1)
                .map_err(e)?
                .max(magnetization_commutator(&bath.hamiltonian, 1).map_err(e)?);
            let replay = replay_identical()?;
            let pass = drift < C10_NORM_TOL && comm < C10_COMMUTATOR_TOL && replay;
            Ok((
                pass,
                format!(
                    "norm drift {drift:.1e} over 1000 steps, max |[H, Sz]| {comm:.1e}, replay identical: {replay}"
                ),
            ))
        },
    )
}

/// Every criterion; the long variants run only when `full` is set.
pub fn run_all(full: bool) -> Vec<Check> {
    let mut out = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
    ];
    out.push(if full {
        criterion_7_full()
    } else {
        skipped_check("7-full")
    });
    out.push(criterion_8());
    out.push(if full {
        criterion_9()
    } else {
        skipped_check("9")
    });
    out.push(criterion_10());
    out
}
