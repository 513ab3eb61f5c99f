//! Closed-form nearest-neighbour double-quantum intensities, mirror times,
//! chain-length ensembles and time-axis fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mqc::{MQCSpectrum, Normalization};
use crate::states::StateKind;

fn modes(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| k as f64 * std::f64::consts::PI / (n + 1) as f64)
}

/// `(J_0, J_2)` for the thermal state of an `n`-spin NN chain.
pub fn j_thermal_nn(n: usize, t: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let j0 = modes(n)
        .map(|psi| (4.0 * t * psi.cos()).cos().powi(2))
        .sum::<f64>()
        / n as f64;
    let j2 = modes(n)
        .map(|psi| (4.0 * t * psi.cos()).sin().powi(2))
        .sum::<f64>()
        / (2 * n) as f64;
    (j0, j2)
}

/// `(J_0, J_2)` for the end-polarized state.
pub fn j_end_nn(n: usize, t: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "end-polarized curves need n >= 2".into(),
        ));
    }
    let np1 = (n + 1) as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for psi in modes(n) {
        let s2 = psi.sin().powi(2);
        let x = 4.0 * t * psi.cos();
        a += s2 * x.cos().powi(2);
        b += s2 * x.sin().powi(2);
    }
    Ok((2.0 * a / np1, b / np1))
}

/// Closed-form curves on a time grid as a normalized spectrum with `K = 2`.
pub fn analytic_spectrum(n: usize, kind: StateKind, times: &[f64]) -> Result<MQCSpectrum> {
    let rows = times
        .iter()
        .map(|&t| {
            let (j0, j2) = match kind {
                StateKind::EndPolarized => j_end_nn(n, t)?,
                StateKind::Thermal => j_thermal_nn(n, t),
                StateKind::Custom => {
                    return Err(Error::InvalidArgument(
                        "closed forms exist for thermal and end-polarized states".into(),
                    ));
                }
            };
            Ok(vec![j0, 0.0, j2])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MQCSpectrum {
        times: times.to_vec(),
        orders: vec![0, 1, 2],
        signals: vec![Vec::new(); times.len()],
        imag_residue: vec![0.0; times.len()],
        j: rows,
        normalization: Normalization::UnitSum,
        warnings: Vec::new(),
    })
}

/// Default search window `[0.6, 2.5] n / 4`.
pub fn mirror_window(n: usize) -> (f64, f64) {
    (0.6 * n as f64 / 4.0, 2.5 * n as f64 / 4.0)
}

const MIRROR_SAMPLES: usize = 20_001;

/// Largest value for odd `n`, smallest for even `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Max,
    Min,
}

impl Extremum {
    pub fn for_length(n: usize) -> Self {
        if n % 2 == 1 {
            Extremum::Max
        } else {
            Extremum::Min
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Extremum::Max => a > b,
            Extremum::Min => a < b,
        }
    }
}

/// Dense scan of `f` on `[lo, hi]` followed by golden-section refinement.
pub fn locate_extremum(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    samples: usize,
    ext: Extremum,
) -> Result<f64> {
    if !(hi > lo) || samples < 3 {
        return Err(Error::InvalidArgument("empty scan window".into()));
    }
    let h = (hi - lo) / (samples - 1) as f64;
    let mut best = (0usize, f(lo));
    for i in 1..samples {
        let v = f(lo + h * i as f64);
        if ext.better(v, best.1) {
            best = (i, v);
        }
    }
    if best.0 == 0 || best.0 == samples - 1 {
        return Err(Error::NotFound("extremum sits on the window edge".into()));
    }
    let t = lo + h * best.0 as f64;
    let g = match ext {
        Extremum::Max => golden_min(|x| -f(x), t - h, t + h, 1e-12),
        Extremum::Min => golden_min(&f, t - h, t + h, 1e-12),
    };
    Ok(g)
}

/// Golden-section minimizer on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Mirror time from the end-polarized closed form in the default window.
pub fn mirror_time(n: usize) -> Result<f64> {
    let (lo, hi) = mirror_window(n);
    mirror_time_in(n, StateKind::EndPolarized, lo, hi)
}

/// Mirror time of either closed form inside `[lo, hi]`.
pub fn mirror_time_in(n: usize, kind: StateKind, lo: f64, hi: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument("mirror time needs n >= 3".into()));
    }
    let j0 = |t: f64| match kind {
        StateKind::EndPolarized => j_end_nn(n, t).map(|v| v.0).unwrap_or(f64::NAN),
        _ => j_thermal_nn(n, t).0,
    };
    locate_extremum(j0, lo, hi, MIRROR_SAMPLES, Extremum::for_length(n))
}

/// Mirror time from the `J_2` curve, whose extremum is opposite to that of `J_0`.
pub fn mirror_time_j2(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument("mirror time needs n >= 3".into()));
    }
    let (lo, hi) = mirror_window(n);
    let ext = match Extremum::for_length(n) {
        Extremum::Max => Extremum::Min,
        Extremum::Min => Extremum::Max,
    };
    locate_extremum(
        |t| j_end_nn(n, t).map(|v| v.1).unwrap_or(f64::NAN),
        lo,
        hi,
        MIRROR_SAMPLES,
        ext,
    )
}

/// Extremum of a sampled series inside `[lo, hi]`, refined by a parabola.
pub fn mirror_time_sampled(
    times: &[f64],
    series: &[f64],
    n: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let ext = Extremum::for_length(n);
    let idx: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= lo && times[i] <= hi)
        .collect();
    let best = idx
        .iter()
        .copied()
        .reduce(|a, b| {
            if ext.better(series[b], series[a]) {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| Error::NotFound("no samples inside the window".into()))?;
    if best == 0 || best + 1 >= times.len() || best == idx[0] || best == *idx.last().unwrap_or(&0) {
        return Err(Error::NotFound("extremum sits on the window edge".into()));
    }
    let (t0, t1, t2) = (times[best - 1], times[best], times[best + 1]);
    let (y0, y1, y2) = (series[best - 1], series[best], series[best + 1]);
    let denom = (t0 - t1) * (t0 - t2) * (t1 - t2);
    let a = (t2 * (y1 - y0) + t1 * (y0 - y2) + t0 * (y2 - y1)) / denom;
    let b = (t2 * t2 * (y0 - y1) + t1 * t1 * (y2 - y0) + t0 * t0 * (y1 - y2)) / denom;
    if a == 0.0 {
        return Ok(t1);
    }
    Ok((-b / (2.0 * a)).clamp(t0, t2))
}

/// Least-squares line `y = a + b x` and its `R^2`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (my - slope * mx, slope, r2)
}

/// `(mean length, relative spread)` of random clusters with survival
/// probability `p`.
pub fn cluster_stats(p: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "survival probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(((1.0 + p) / (1.0 - p), (2.0 * p).sqrt() / (1.0 + p)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleSpec {
    UniformRange {
        n_min: usize,
        n_max: usize,
    },
    /// Spin-weighted lengths `N (1-p)^2 p^{N-1}`, truncated at `n_max`.
    RandomCluster {
        p: f64,
        n_max: usize,
    },
    Explicit {
        members: Vec<(usize, f64)>,
    },
}

impl EnsembleSpec {
    /// `(length, weight)` pairs with weights summing to one.
    pub fn weights(&self) -> Result<Vec<(usize, f64)>> {
        let raw: Vec<(usize, f64)> = match self {
            EnsembleSpec::UniformRange { n_min, n_max } => {
                if n_min > n_max || *n_min == 0 {
                    return Err(Error::InvalidArgument("empty length range".into()));
                }
                (*n_min..=*n_max).map(|n| (n, 1.0)).collect()
            }
            EnsembleSpec::RandomCluster { p, n_max } => {
                cluster_stats(*p)?;
                (1..=*n_max)
                    .map(|n| (n, n as f64 * (1.0 - p).powi(2) * p.powi(n as i32 - 1)))
                    .collect()
            }
            EnsembleSpec::Explicit { members } => members.clone(),
        };
        if raw.iter().any(|&(_, w)| !(w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "ensemble weights must be non-negative".into(),
            ));
        }
        let total: f64 = raw.iter().map(|&(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("ensemble weights sum to zero".into()));
        }
        Ok(raw.into_iter().map(|(n, w)| (n, w / total)).collect())
    }
}

/// Weighted average of spectra sharing a time grid and order set.
pub fn ensemble_average(spectra: &[MQCSpectrum], weights: &[f64]) -> Result<MQCSpectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::InvalidArgument("no spectra".into()))?;
    if spectra.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: spectra.len(),
            got: weights.len(),
        });
    }
    if spectra
        .iter()
        .any(|s| s.times != first.times || s.orders != first.orders)
    {
        return Err(Error::InvalidArgument("spectra use different grids".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut out = first.clone();
    for (ti, row) in out.j.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            *v = spectra
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.j[ti][n])
                .sum::<f64>()
                / total;
        }
    }
    for (ti, r) in out.imag_residue.iter_mut().enumerate() {
        *r = spectra
            .iter()
            .map(|s| s.imag_residue[ti])
            .fold(0.0, f64::max);
    }
    out.signals = vec![Vec::new(); out.times.len()];
    out.warnings = spectra.iter().flat_map(|s| s.warnings.clone()).collect();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub t0: f64,
    pub inv_b: f64,
    pub residual: f64,
}

pub const FIT_GRID: usize = 201;

/// Fits `J0_meas(t_i) ~ model((t_i - t0) / inv_b)`.
///
/// The grid spans `t0` over two sample spacings either side of zero and
/// `inv_b` over half the initial guess either side; the best cell is then
/// refined by alternating golden-section searches.
pub fn fit_time_axis(
    measured: &[(f64, f64)],
    model: impl Fn(f64) -> f64,
    inv_b_guess: f64,
) -> Result<FitResult> {
    if measured.len() < 3 {
        return Err(Error::InvalidArgument("fit needs at least 3 points".into()));
    }
    if !(inv_b_guess > 0.0) {
        return Err(Error::InvalidArgument(
            "initial time scale must be positive".into(),
        ));
    }
    let first = measured[0].1;
    if measured.iter().all(|&(_, y)| (y - first).abs() < 1e-14) {
        return Err(Error::Degenerate("measured J0 is constant".into()));
    }
    let mut ts: Vec<f64> = measured.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let spacing = gaps[gaps.len() / 2];
    let cost = |t0: f64, ib: f64| -> f64 {
        measured
            .iter()
            .map(|&(t, y)| (y - model((t - t0) / ib)).powi(2))
            .sum()
    };
    let (t_lo, t_hi) = (-2.0 * spacing, 2.0 * spacing);
    let (b_lo, b_hi) = (0.5 * inv_b_guess, 1.5 * inv_b_guess);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (FIT_GRID - 1) as f64;
    let mut best = (0usize, 0usize, f64::INFINITY);
    for i in 0..FIT_GRID {
        for j in 0..FIT_GRID {
            let c = cost(step(t_lo, t_hi, i), step(b_lo, b_hi, j));
            if c < best.2 {
                best = (i, j, c);
            }
        }
    }
    let (ht, hb) = (
        (t_hi - t_lo) / (FIT_GRID - 1) as f64,
        (b_hi - b_lo) / (FIT_GRID - 1) as f64,
    );
    let (mut t0, mut ib) = (step(t_lo, t_hi, best.0), step(b_lo, b_hi, best.1));
    for _ in 0..20 {
        let nt = golden_min(
            |x| cost(x, ib),
            (t0 - ht).max(t_lo),
            (t0 + ht).min(t_hi),
            1e-13 * spacing.max(1.0),
        );
        let nb = golden_min(
            |x| cost(nt, x),
            (ib - hb).max(b_lo),
            (ib + hb).min(b_hi),
            1e-13 * inv_b_guess,
        );
        let done =
            (nt - t0).abs() < 1e-12 * spacing.max(1.0) && (nb - ib).abs() < 1e-12 * inv_b_guess;
        t0 = nt;
        ib = nb;
        if done {
            break;
        }
    }
    Ok(FitResult {
        t0,
        inv_b: ib,
        residual: cost(t0, ib),
    })
}

/// Decay rate `gamma` of the oscillations of `series` relative to those of
/// `reference` on the same grid. At each pronounced extremum `t_k` of the
/// reference deviation from its mean, the amplitude ratio of the two
/// deviations is fitted to `exp(a - gamma t_k)` by least squares.
pub fn envelope_decay_rate(times: &[f64], series: &[f64], reference: &[f64]) -> Result<f64> {
    if times.len() != series.len() || times.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: series.len().min(reference.len()),
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ms, mr) = (mean(series), mean(reference));
    let r: Vec<f64> = reference.iter().map(|x| (x - mr).abs()).collect();
    let peak = r.iter().cloned().fold(0.0, f64::max);
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for k in 1..r.len().saturating_sub(1) {
        if r[k] >= r[k - 1] && r[k] > r[k + 1] && r[k] > 0.1 * peak {
            let d = (series[k] - ms).abs().max(1e-300);
            ts.push(times[k]);
            logs.push((d / r[k]).ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::NotFound("fewer than two reference extrema".into()));
    }
    let (_, slope, _) = linear_regression(&ts, &logs);
    Ok(-slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_limits() {
        assert_eq!(j_thermal_nn(1, 3.7).0, 1.0);
        assert!(j_thermal_nn(1, 3.7).1.abs() < 1e-30);
        assert_eq!(j_thermal_nn(9, 0.0), (1.0, 0.0));
        let (j0, j2) = j_thermal_nn(2, std::f64::consts::FRAC_PI_4);
        assert!(j0.abs() < 1e-15 && (j2 - 0.5).abs() < 1e-15);
        assert_eq!(j_end_nn(5, 0.0).unwrap().0, 1.0);
        assert!(j_end_nn(1, 0.0).is_err());
        let w: f64 = modes(13).map(|p| 2.0 * p.sin().powi(2) / 14.0).sum();
        assert!((w - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_spin_oracle() {
        // two spins: H_DQ = (XX - YY)/2 acts as sigma^x on {|uu>, |dd>}, so
        // J_0 = cos^2(2t) directly
        for &t in &[0.1, 0.5, 1.7] {
            assert!((j_thermal_nn(2, t).0 - (2.0 * t).cos().powi(2)).abs() < 1e-14);
            assert!((j_end_nn(2, t).unwrap().0 - (2.0 * t).cos().powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn mirror_times() {
        for n in [18, 19] {
            let t = mirror_time(n).unwrap();
            assert!((t - 5.0).abs() < 0.5, "{n} {t}");
        }
        let a = mirror_time(11).unwrap();
        let b = mirror_time_j2(11).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(mirror_time(2).is_err());
    }

    #[test]
    fn sampled_mirror_time() {
        let n = 15;
        let times: Vec<f64> = (0..2000).map(|i| i as f64 * 0.005).collect();
        let j0: Vec<f64> = times.iter().map(|&t| j_end_nn(n, t).unwrap().0).collect();
        let (lo, hi) = mirror_window(n);
        let s = mirror_time_sampled(&times, &j0, n, lo, hi).unwrap();
        assert!((s - mirror_time(n).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn cluster_closed_forms() {
        assert_eq!(cluster_stats(0.0).unwrap(), (1.0, 0.0));
        let (m, r) = cluster_stats(1.0 / 3.0).unwrap();
        assert!((m - 2.0).abs() < 1e-14 && (r - 0.6124).abs() < 1e-4);
        assert!(cluster_stats(1.0).is_err());
        assert!(cluster_stats(0.999).unwrap().0 > 1000.0);
        // the spin-weighted distribution reproduces the closed-form moments
        let p = 0.6;
        let w = EnsembleSpec::RandomCluster { p, n_max: 400 }
            .weights()
            .unwrap();
        let mean: f64 = w.iter().map(|&(n, x)| n as f64 * x).sum();
        let var: f64 = w.iter().map(|&(n, x)| (n as f64 - mean).powi(2) * x).sum();
        let (m, r) = cluster_stats(p).unwrap();
        assert!((mean - m).abs() < 1e-9 && (var.sqrt() / mean - r).abs() < 1e-9);
    }

    #[test]
    fn ensembles() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let a = analytic_spectrum(9, StateKind::Thermal, &times).unwrap();
        let b = analytic_spectrum(10, StateKind::Thermal, &times).unwrap();
        assert_eq!(
            ensemble_average(std::slice::from_ref(&a), &[1.0])
                .unwrap()
                .j,
            a.j
        );
        assert_eq!(
            ensemble_average(&[a.clone(), b.clone()], &[1.0, 0.0])
                .unwrap()
                .j,
            a.j
        );
        let w = EnsembleSpec::UniformRange {
            n_min: 17,
            n_max: 21,
        }
        .weights()
        .unwrap();
        assert_eq!(w.len(), 5);
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
        let short = analytic_spectrum(3, StateKind::Thermal, &times[..5]).unwrap();
        assert!(ensemble_average(&[a, short], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn fit_round_trip() {
        let n = 12;
        let model = |x: f64| j_thermal_nn(n, x).0;
        let (t0, ib) = (3.0, 101.8);
        let data: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = 5.0 + i as f64 * 20.0;
                (t, model((t - t0) / ib))
            })
            .collect();
        let fit = fit_time_axis(&data, model, 90.0).unwrap();
        assert!((fit.inv_b - ib).abs() < 0.01 * ib, "{fit:?}");
        assert!((fit.t0 - t0).abs() < 0.4, "{fit:?}");
        let shifted: Vec<(f64, f64)> = data.iter().map(|&(t, y)| (t + 10.0, y)).collect();
        let fit2 = fit_time_axis(&shifted, model, 90.0).unwrap();
        assert!((fit2.t0 - fit.t0 - 10.0).abs() < 0.4, "{fit2:?}");
        let flat: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.3)).collect();
        assert!(fit_time_axis(&flat, model, 1.0).is_err());
        assert!(fit_time_axis(&data[..2], model, 1.0).is_err());
    }

    #[test]
    fn envelope_rate_recovers_damping() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let reference: Vec<f64> = times.iter().map(|t| 0.5 + 0.3 * (2.0 * t).cos()).collect();
        let damped: Vec<f64> = times
            .iter()
            .map(|t| 0.2 + 0.3 * (-0.15 * t).exp() * (2.0 * t).cos())
            .collect();
        let g = envelope_decay_rate(&times, &damped, &reference).unwrap();
        assert!((g - 0.15).abs() < 0.02, "{g}");
        assert!(
            envelope_decay_rate(&times, &reference, &reference)
                .unwrap()
                .abs()
                < 1e-9
        );
        assert!(envelope_decay_rate(&times[..3], &damped[..3], &reference[..3]).is_err());
    }
}
