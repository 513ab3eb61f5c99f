//! Parameter sweeps: one sub-run per point of a Cartesian grid over dotted
//! config keys, with an index CSV updated as points finish.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::CliError;
use crate::config::{RunConfig, SweepConfig};
use crate::run::run_to_dir;

/// A validated grid point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub values: Vec<toml::Value>,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointStatus {
    Pending,
    Ok,
    Failed(String),
}

impl PointStatus {
    fn label(&self) -> String {
        match self {
            PointStatus::Pending => "pending".into(),
            PointStatus::Ok => "ok".into(),
            PointStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
        }
    }
}

fn set_path(root: &mut toml::Value, path: &str, v: toml::Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| {
            CliError::Validation(format!("sweep key {path}: {p} is not inside a table"))
        })?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), v);
            return Ok(());
        }
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    Err(CliError::Validation("empty sweep key".into()))
}

/// Expands the `[sweep]` table of `text` into validated configs.
pub fn expand(text: &str) -> Result<(Vec<String>, Vec<SweepPoint>), CliError> {
    let mut root: toml::Value =
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    let table = root
        .as_table_mut()
        .ok_or_else(|| CliError::Validation("config is not a table".into()))?;
    let sweep = table
        .remove("sweep")
        .ok_or_else(|| CliError::Validation("sweep needs a [sweep] table".into()))?;
    let mut unknown = Vec::new();
    let grid = serde_ignored::deserialize(sweep, |p| unknown.push(format!("sweep.{p}")))
        .map(|s: SweepConfig| s.grid)
        .map_err(|e| CliError::Validation(format!("[sweep]: {e}")))?;
    if !unknown.is_empty() {
        return Err(CliError::Validation(format!(
            "unknown keys: {}",
            unknown.join(", ")
        )));
    }
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(CliError::Validation("sweep grid is empty".into()));
    }
    let keys: Vec<String> = grid.keys().cloned().collect();
    let axes: Vec<&Vec<toml::Value>> = grid.values().collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut points = Vec::with_capacity(total);
    let mut errors = Vec::new();
    for index in 0..total {
        let mut rest = index;
        let mut values = Vec::with_capacity(keys.len());
        for a in axes.iter().rev() {
            values.push(a[rest % a.len()].clone());
            rest /= a.len();
        }
        values.reverse();
        let mut v = root.clone();
        for (k, x) in keys.iter().zip(&values) {
            set_path(&mut v, k, x.clone())?;
        }
        match RunConfig::from_value(v) {
            Ok(config) => points.push(SweepPoint {
                index,
                values,
                config,
            }),
            Err(e) => errors.push(format!("point {index}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Validation(errors.join("; ")));
    }
    Ok((keys, points))
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string().replace(',', ";"),
    }
}

fn write_index(
    path: &Path,
    keys: &[String],
    points: &[SweepPoint],
    status: &[PointStatus],
) -> Result<(), CliError> {
    let mut out = String::from("point");
    for k in keys {
        write!(out, ",{k}").unwrap();
    }
    out.push_str(",status,dir\n");
    for (p, s) in points.iter().zip(status) {
        write!(out, "{}", p.index).unwrap();
        for v in &p.values {
            write!(out, ",{}", value_text(v)).unwrap();
        }
        writeln!(out, ",{},{}", s.label(), point_dir(p.index)).unwrap();
    }
    std::fs::write(path, out).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn point_dir(index: usize) -> String {
    format!("point_{index:04}")
}

/// Summary of a finished sweep.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub index: PathBuf,
    pub status: Vec<PointStatus>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.status
            .iter()
            .filter(|s| matches!(s, PointStatus::Failed(_)))
            .count()
    }
}

/// Runs every point with at most `jobs` points in flight, fewer when the
/// declared per-job memory would exceed the budget.
pub fn run_sweep(
    keys: &[String],
    points: Vec<SweepPoint>,
    out: &Path,
    jobs: usize,
) -> Result<SweepReport, CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let index = out.join("index.csv");
    let status = Mutex::new(vec![PointStatus::Pending; points.len()]);
    write_index(&index, keys, &points, &status.lock().unwrap())?;
    let peak = points
        .iter()
        .map(|p| p.config.memory_estimate())
        .fold(0.0, f64::max);
    let budget = points.first().map_or(8.0, |p| p.config.memory_budget_gib) * f64::from(1u32 << 30);
    let by_memory = ((budget / peak.max(1.0)).floor() as usize).max(1);
    let workers = jobs.min(by_memory).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| {
        points.par_iter().for_each(|p| {
            let r = run_to_dir(&p.config, &out.join(point_dir(p.index)));
            let mut s = status.lock().unwrap();
            let i = points
                .iter()
                .position(|q| q.index == p.index)
                .expect("point exists");
            s[i] = match r {
                Ok(_) => PointStatus::Ok,
                Err(e) => PointStatus::Failed(e.to_string()),
            };
            // single writer: the index is rewritten under the lock
            let _ = write_index(&index, keys, &points, &s);
        })
    });
    let status = status.into_inner().unwrap();
    write_index(&index, keys, &points, &status)?;
    Ok(SweepReport { index, status })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "analytic"

[analytic]
n_spins = 4
initial = "thermal"
times = { values_inv_b = [0.0, 1.0] }

[sweep]
grid = { "analytic.n_spins" = [3, 5], "analytic.initial" = ["thermal", "end_polarized"] }
"#;

    #[test]
    fn expands_product() {
        let (keys, points) = expand(BASE).unwrap();
        assert_eq!(keys, vec!["analytic.initial", "analytic.n_spins"]);
        assert_eq!(points.len(), 4);
        assert_eq!(points[1].config.analytic.as_ref().unwrap().n_spins, 5);
        assert!(points.iter().all(|p| p.config.sweep.is_none()));
    }

    #[test]
    fn empty_and_bad_grids() {
        let empty = BASE.replace(r#"grid = { "analytic.n_spins" = [3, 5], "analytic.initial" = ["thermal", "end_polarized"] }"#, "grid = {}");
        assert_eq!(expand(&empty).unwrap_err().exit_code(), 2);
        let bad = BASE.replace("\"analytic.n_spins\"", "\"analytic.spins\"");
        assert_eq!(expand(&bad).unwrap_err().exit_code(), 2);
        let none = BASE.split("[sweep]").next().unwrap().to_string();
        assert!(expand(&none).is_err());
    }
}
