use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ris_sensing::config::parse_assignment;
use ris_sensing::harness::{
    complexity_estimate, default_snr_grid, measure_complexity, run_sweep, run_trial, write_results, ExperimentSpec,
    NSweepMode, RunManifest, SweepVariable, TrialSeeds,
};
use ris_sensing::selftest::{run_selftest, Fault};
use ris_sensing::{check_identifiability, EstimatorSettings, ScenarioConfig};

/// Simulate and evaluate RIS-assisted target sensing with tensor ALS and ESPRIT.
#[derive(Debug, Parser)]
#[command(name = "ris-sense", version)]
struct Cli {
    /// More log output (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only print errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one seeded trial and print truth against estimate.
    Simulate(SimulateArgs),
    /// Monte-Carlo RMSE sweep over one dimension and an SNR grid.
    Sweep(SweepArgs),
    /// Closed-form operation counts over a dimension grid, as CSV.
    Complexity(ComplexityArgs),
    /// Run the embedded invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` file applied on top of the built-in preset.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key; applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_set)]
    overrides: Vec<(String, String)>,

    /// Start from the full-scale preset instead of the small default.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr_db: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Swept dimension: Q, K, N or none.
    #[arg(long = "var", default_value = "none")]
    var: SweepVariable,

    /// Comma-separated values of the swept dimension.
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,

    /// How K follows N in an N sweep: pinned-k or k-equals-n-squared.
    #[arg(long, default_value = "pinned-k", value_parser = parse_n_mode)]
    n_mode: NSweepMode,

    /// SNR grid in dB as `start:step:stop`, or a comma-separated list.
    #[arg(long, value_parser = parse_snr_grid, allow_hyphen_values = true)]
    snr: Option<SnrGrid>,

    /// Monte-Carlo trials per cell.
    #[arg(long, default_value_t = 200)]
    trials: usize,

    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV; the run manifest is written next to it as JSON.
    #[arg(long, default_value = "rmse.csv")]
    output: PathBuf,

    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    jobs: Option<usize>,

    /// Rerun the experiment recorded in a manifest instead.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["config", "overrides", "full_scale", "var", "values", "snr", "trials", "seed", "n_mode"])]
    replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ComplexityArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Dimension grid `KEY=v1,v2,...` with KEY one of L, N, M, Q, K. For N,
    /// the RIS is the most nearly square array and K = N².
    #[arg(long, default_value = "N=4,8,16", value_parser = parse_grid)]
    grid: Grid,

    /// Iterations of stage 1 to charge.
    #[arg(long, default_value_t = 1)]
    iters1: usize,

    /// Iterations of stage 2 to charge.
    #[arg(long, default_value_t = 1)]
    iters2: usize,

    /// Run a noiseless estimate at each point and report its measured
    /// iterations and wall time.
    #[arg(long)]
    measure: bool,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
}

#[derive(Debug, Clone)]
struct SnrGrid(Vec<f64>);

#[derive(Debug, Clone)]
struct Grid {
    key: String,
    values: Vec<usize>,
}

fn parse_set(s: &str) -> Result<(String, String), String> {
    parse_assignment(s).ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn parse_n_mode(s: &str) -> Result<NSweepMode, String> {
    match s {
        "pinned-k" => Ok(NSweepMode::PinnedK),
        "k-equals-n-squared" => Ok(NSweepMode::KEqualsNSquared),
        _ => Err(format!("expected pinned-k or k-equals-n-squared, got `{s}`")),
    }
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    match s {
        "unfold" => Ok(Fault::CorruptUnfold),
        _ => Err(format!("unknown fault `{s}`")),
    }
}

fn parse_snr_grid(s: &str) -> Result<SnrGrid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if [start, step, stop].iter().any(|x| !x.is_finite()) || step <= 0.0 || stop < start {
                return Err(format!("`{s}` needs a positive step and stop ≥ start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| start + step * i as f64).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("expected start:step:stop or a list, got `{s}`")),
    };
    Ok(SnrGrid(grid))
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let (key, values) = parse_assignment(s).ok_or_else(|| format!("expected KEY=v1,v2,..., got `{s}`"))?;
    if !["L", "N", "M", "Q", "K"].contains(&key.as_str()) {
        return Err(format!("grid key must be one of L, N, M, Q, K, got `{key}`"));
    }
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("`{v}` is not a positive integer"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Grid { key, values })
}

impl ConfigArgs {
    fn resolve(&self) -> ris_sensing::Result<ScenarioConfig> {
        let mut cfg = if self.full_scale {
            ScenarioConfig::full_scale()
        } else {
            ScenarioConfig::desk()
        };
        if let Some(path) = &self.config {
            cfg = cfg.with_file(path)?;
        }
        cfg.with_overrides(&self.overrides)
    }
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    check_identifiability(cfg.l, cfg.n(), cfg.mq(), cfg.k)?;
    let settings = EstimatorSettings::default();
    let o = run_trial(&cfg, &settings, args.snr_db, TrialSeeds::from_single(args.seed))?;
    let t = &o.scenario.target;
    let e = &o.estimate;

    println!(
        "config: L={} N={}x{} Q={} M={} K={} codebook={}",
        cfg.l, cfg.n_y, cfg.n_z, cfg.q, cfg.m, cfg.k, cfg.codebook
    );
    println!(
        "seed {}, SNR {} dB (realized {:.2} dB)",
        args.seed, args.snr_db, o.realized_snr_db
    );
    println!(
        "{:<10}{:>16}{:>16}{:>14}",
        "parameter", "truth", "estimate", "rel_error"
    );
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.9e}"));
    let err_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    let rows = [
        ("tau", t.tau, Some(e.tau), Some(o.errors.tau)),
        ("nu", t.nu, Some(e.nu), Some(o.errors.nu)),
        ("mu_D", t.mu_d, e.mu_d, o.errors.mu_d),
        ("psi_D", t.psi_d, e.psi_d, o.errors.psi_d),
    ];
    for (name, truth, est, err) in rows {
        println!(
            "{name:<10}{:>16}{:>16}{:>14}",
            format!("{truth:.9e}"),
            fmt_opt(est),
            err_opt(err)
        );
    }
    let status = |c: bool| if c { "converged" } else { "iteration cap" };
    println!(
        "stage 1: {} iterations ({})",
        o.stage1_iters,
        status(o.stage1_converged)
    );
    println!(
        "stage 2: {} iterations ({})",
        o.stage2_iters,
        status(o.stage2_converged)
    );
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("json")
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(ris_sensing::Error::Config("--jobs must be at least 1".into()).into());
    }

    let (spec, overrides, config_file) = match &args.replay {
        Some(path) => {
            let m = RunManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
            (m.spec, m.overrides, m.config_file)
        }
        None => {
            if args.var == SweepVariable::None && !args.values.is_empty() {
                return Err(ris_sensing::Error::Config("--values needs --var Q, K or N".into()).into());
            }
            let spec = ExperimentSpec {
                base: args.config.resolve()?,
                sweep_variable: args.var,
                sweep_values: args.values.clone(),
                n_mode: args.n_mode,
                snr_grid_db: args.snr.clone().map_or_else(default_snr_grid, |g| g.0),
                trials: args.trials,
                master_seed: args.seed,
                estimator: EstimatorSettings::default(),
            };
            let file = args.config.config.as_ref().map(|p| p.display().to_string());
            (spec, args.config.overrides.clone(), file)
        }
    };
    spec.validate()?;
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            bail!("output directory {} does not exist", dir.display());
        }
    }

    let result = run_sweep(&spec, jobs)?;
    let failed: usize = result.failures.iter().map(|f| f.failed).sum();
    if failed > 0 {
        warn!("{failed} trial(s) failed numerically and were left out of the RMSE");
    }
    write_results(&result.records, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    let mut manifest = RunManifest::new(&spec, result.failures);
    manifest.overrides = overrides;
    manifest.config_file = config_file;
    let mpath = manifest_path(&args.output);
    manifest
        .write(&mpath)
        .with_context(|| format!("writing {}", mpath.display()))?;
    info!("{} rows written", result.records.len());
    println!("{}", args.output.display());
    println!("{}", mpath.display());
    Ok(())
}

fn complexity(args: &ComplexityArgs) -> anyhow::Result<()> {
    let base = args.config.resolve()?;
    let settings = EstimatorSettings::default();
    println!(
        "L,N,M,Q,K,iters1,iters2,stage1_ops,stage2_ops,total_ops{}",
        if args.measure { ",wall_time_s" } else { "" }
    );
    for &v in &args.grid.values {
        let mut cfg = base.clone();
        match args.grid.key.as_str() {
            "L" => cfg.l = v,
            "M" => cfg.m = v,
            "Q" => cfg.q = v,
            "K" => cfg.k = v,
            "N" => {
                (cfg.n_y, cfg.n_z) = ris_sensing::harness::ris_shape(v);
                cfg.k = v * v;
            }
            other => bail!("unsupported grid key {other}"),
        }
        cfg.validate()?;
        let r = if args.measure {
            check_identifiability(cfg.l, cfg.n(), cfg.mq(), cfg.k)?;
            measure_complexity(&cfg, &settings, args.seed)?
        } else {
            complexity_estimate(&cfg, args.iters1, args.iters2)
        };
        let wall = r.wall_time_s.map_or(String::new(), |w| format!(",{w:.6}"));
        println!(
            "{},{},{},{},{},{},{},{},{},{}{wall}",
            r.l,
            r.n,
            r.m,
            r.q,
            r.k,
            r.iters1,
            r.iters2,
            r.stage1_ops,
            r.stage2_ops,
            r.total_ops()
        );
    }
    Ok(())
}

fn selftest(args: &SelftestArgs) -> anyhow::Result<bool> {
    let results = run_selftest(args.inject_fault);
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} invariants hold", results.len());
        Ok(true)
    } else {
        eprintln!("failing invariant(s): {}", failed.join("; "));
        Ok(false)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ris_sensing::Error>() {
        Some(e) if e.is_precondition() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|()| true),
        Command::Sweep(a) => sweep(a).map(|()| true),
        Command::Complexity(a) => complexity(a).map(|()| true),
        Command::Selftest(a) => selftest(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
