use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinmqc_cli::checks::{self, Outcome};
use spinmqc_cli::config::{ExperimentKind, FitConfig, InitialKind};
use spinmqc_cli::sweep::{expand, run_sweep};
use spinmqc_cli::{CliError, RunConfig, RunManifest, resolve_out, run_to_dir};

#[derive(Parser)]
#[command(
    name = "mqc",
    version,
    about = "Multiple-quantum coherence simulations of dipolar spin chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config or replay a manifest.
    Run(RunArgs),
    /// Run every point of the config's [sweep] grid.
    Sweep(SweepArgs),
    /// Run the acceptance checks and print one JSON line per criterion.
    Verify(VerifyArgs),
    /// Fit t0 and 1/b to a measured J0 curve.
    Fit(FitArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "replay", required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Manifest of an earlier run to reproduce.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Include the long-running variants.
    #[arg(long)]
    full: bool,
    /// Exit 1 when any criterion fails.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with a header and columns time_us,J0.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    n_spins: usize,
    #[arg(long, value_enum, default_value = "thermal")]
    initial: InitialArg,
    #[arg(long)]
    inv_b_guess: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InitialArg {
    Thermal,
    EndPolarized,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn set_threads(jobs: Option<usize>) -> Result<(), CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        b = b.num_threads(j);
    }
    b.build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn report(out: &Path, m: &RunManifest) {
    for o in &m.outputs {
        println!("{}", out.join(&o.path).display());
    }
    println!("{}", out.join("manifest.json").display());
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let (mut cfg, name, expected) = match (&a.config, &a.replay) {
        (Some(p), _) => (RunConfig::from_toml(&read_text(p)?)?, stem(p), None),
        (None, Some(p)) => {
            let m = RunManifest::read(p)?;
            (
                m.config.clone(),
                format!("{}-replay", stem(p.parent().unwrap_or(p))),
                Some(m),
            )
        }
        (None, None) => return Err(CliError::Validation("need --config or --replay".into())),
    };
    if cfg.sweep.is_some() {
        return Err(CliError::Validation(
            "config has a [sweep] table; use `mqc sweep`".into(),
        ));
    }
    if let Some(s) = a.seed_override {
        cfg.seed = s;
    }
    set_threads(a.jobs.or(cfg.jobs))?;
    let out = resolve_out(a.out.as_deref(), cfg.out_dir.as_deref(), &name);
    let m = run_to_dir(&cfg, &out)?;
    report(&out, &m);
    if let Some(old) = expected {
        let bad = old.mismatches(&out);
        if !bad.is_empty() {
            return Err(CliError::Runtime(format!(
                "replay differs from manifest: {}",
                bad.join(", ")
            )));
        }
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let text = read_text(&a.config)?;
    let (keys, mut points) = expand(&text)?;
    if let Some(s) = a.seed_override {
        for p in &mut points {
            p.config.seed = s;
        }
    }
    let jobs = a
        .jobs
        .or(points.first().and_then(|p| p.config.jobs))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let cfg_out = points.first().and_then(|p| p.config.out_dir.clone());
    let out = resolve_out(a.out.as_deref(), cfg_out.as_deref(), &stem(&a.config));
    let r = run_sweep(&keys, points, &out, jobs)?;
    println!("{}", r.index.display());
    match r.failures() {
        0 => Ok(()),
        k => Err(CliError::Runtime(format!(
            "{k} of {} sweep points failed",
            r.status.len()
        ))),
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<bool, CliError> {
    set_threads(a.jobs)?;
    let all = checks::run_all(a.full || checks::full_requested());
    for c in &all {
        println!(
            "{}",
            serde_json::to_string(c).map_err(|e| CliError::Runtime(e.to_string()))?
        );
    }
    Ok(!all.iter().any(|c| c.outcome == Outcome::Fail))
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let initial = match a.initial {
        InitialArg::Thermal => InitialKind::Thermal,
        InitialArg::EndPolarized => InitialKind::EndPolarized,
    };
    let fit = FitConfig {
        data_csv: a.data.clone(),
        n_spins: a.n_spins,
        initial,
        inv_b_guess_us: a.inv_b_guess,
    };
    let mut table = toml::map::Map::new();
    table.insert("experiment".into(), ExperimentKind::Fit.name().into());
    table.insert(
        "fit".into(),
        toml::Value::try_from(&fit).map_err(|e| CliError::Validation(e.to_string()))?,
    );
    let cfg = RunConfig::from_value(toml::Value::Table(table))?;
    let out = resolve_out(a.out.as_deref(), None, &stem(&a.data));
    let m = run_to_dir(&cfg, &out)?;
    report(&out, &m);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Verify(a) => {
            let strict = a.strict;
            cmd_verify(a).map(|ok| ok || !strict)
        }
        Command::Fit(a) => cmd_fit(a).map(|_| true),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mqc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
