//! Monte-Carlo RMSE experiments, the operation-count model and result
//! persistence.
//!
//! Every trial's seeds are fixed from the master seed before any work is
//! scheduled, and results are reduced in a fixed order, so a sweep's output
//! does not depend on the number of worker threads.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::esprit::{ParameterErrors, SensingEstimate};
use crate::estimation::{check_identifiability, EstimatorSettings};
use crate::pipeline::{run_pipeline, Scenario};
use crate::signal::add_noise_at_snr;

/// Counter-based seed derivation (SplitMix64 finalizer chained over the
/// parts), so every trial's seed is fixed before any scheduling happens.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SCENARIO_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    /// Target, gain and pilots.
    pub scenario: u64,
    /// Noise and ALS initialization.
    pub noise: u64,
}

impl TrialSeeds {
    pub fn from_single(seed: u64) -> Self {
        Self {
            scenario: mix_seed(&[seed, SCENARIO_STREAM]),
            noise: mix_seed(&[seed, NOISE_STREAM]),
        }
    }

    /// Seeds of trial `v` in cell `(sweep_idx, snr_idx)`. The scenario
    /// stream ignores the cell, so every cell sees the same targets.
    pub fn for_trial(master: u64, sweep_idx: usize, snr_idx: usize, trial: usize) -> Self {
        Self {
            scenario: mix_seed(&[master, SCENARIO_STREAM, trial as u64]),
            noise: mix_seed(&[master, NOISE_STREAM, sweep_idx as u64, snr_idx as u64, trial as u64]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub scenario: Scenario,
    pub estimate: SensingEstimate,
    pub errors: ParameterErrors,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage1_converged: bool,
    pub stage2_converged: bool,
    pub realized_snr_db: f64,
}

/// One Monte-Carlo trial: draw a scenario, add noise, estimate.
pub fn run_trial(
    cfg: &ScenarioConfig,
    settings: &EstimatorSettings,
    snr_db: f64,
    seeds: TrialSeeds,
) -> Result<TrialOutcome> {
    let scenario = Scenario::draw(cfg, seeds.scenario)?;
    let echo = add_noise_at_snr(&scenario.clean, snr_db, seeds.noise)?;
    let mut s = *settings;
    s.stage1.seed = mix_seed(&[seeds.noise, 11]);
    s.stage2.seed = mix_seed(&[seeds.noise, 12]);
    let out = run_pipeline(&echo.noisy, &scenario, &s)?;
    let errors = out.estimate.errors.expect("pipeline compares against the truth");
    Ok(TrialOutcome {
        estimate: out.estimate,
        errors,
        stage1_iters: out.stage1.iterations,
        stage2_iters: out.stage2.iterations,
        stage1_converged: out.stage1.converged,
        stage2_converged: out.stage2.converged,
        realized_snr_db: 10.0 * echo.realized_snr.log10(),
        scenario,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "none")]
    None,
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Q" | "q" => Ok(Self::Q),
            "K" | "k" => Ok(Self::K),
            "N" | "n" => Ok(Self::N),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown sweep variable `{other}` (expected Q, K, N or none)"
            ))),
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Q => "Q",
            Self::K => "K",
            Self::N => "N",
            Self::None => "none",
        })
    }
}

/// How `K` follows `N` in an `N` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NSweepMode {
    /// `K = max(N)²` for every point, so only `N` changes.
    PinnedK,
    /// `K = N²` at every point.
    KEqualsNSquared,
}

/// Most nearly square `N_y × N_z = N` with `N_y ≤ N_z`.
pub fn ris_shape(n: usize) -> (usize, usize) {
    let mut n_y = (n as f64).sqrt().floor() as usize;
    while n_y > 1 && n % n_y != 0 {
        n_y -= 1;
    }
    let n_y = n_y.max(1);
    (n_y, n / n_y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    pub sweep_variable: SweepVariable,
    /// Ignored for [`SweepVariable::None`].
    pub sweep_values: Vec<usize>,
    pub n_mode: NSweepMode,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub estimator: EstimatorSettings,
}

impl ExperimentSpec {
    pub fn new(base: ScenarioConfig) -> Self {
        Self {
            base,
            sweep_variable: SweepVariable::None,
            sweep_values: Vec::new(),
            n_mode: NSweepMode::PinnedK,
            snr_grid_db: default_snr_grid(),
            trials: 200,
            master_seed: 0,
            estimator: EstimatorSettings::default(),
        }
    }

    /// Sweep points as (recorded value, configuration).
    pub fn cells(&self) -> Result<Vec<(f64, ScenarioConfig)>> {
        if self.sweep_variable == SweepVariable::None {
            return Ok(vec![(0.0, self.base.clone())]);
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config(format!(
                "sweep over {} needs at least one value",
                self.sweep_variable
            )));
        }
        let max_n = self.sweep_values.iter().copied().max().unwrap_or(0);
        self.sweep_values
            .iter()
            .map(|&v| {
                let mut cfg = self.base.clone();
                match self.sweep_variable {
                    SweepVariable::Q => cfg.q = v,
                    SweepVariable::K => cfg.k = v,
                    SweepVariable::N => {
                        (cfg.n_y, cfg.n_z) = ris_shape(v);
                        cfg.k = match self.n_mode {
                            NSweepMode::PinnedK => max_n * max_n,
                            NSweepMode::KEqualsNSquared => v * v,
                        };
                    }
                    SweepVariable::None => unreachable!(),
                }
                cfg.validate()?;
                Ok((v as f64, cfg))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("the SNR grid is empty".into()));
        }
        if let Some(bad) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("SNR {bad} dB is not finite")));
        }
        self.estimator.validate()?;
        for (_, cfg) in self.cells()? {
            check_identifiability(cfg.l, cfg.n(), cfg.mq(), cfg.k)?;
        }
        Ok(())
    }
}

/// `−10, −5, …, 30` dB.
pub fn default_snr_grid() -> Vec<f64> {
    (0..9).map(|i| -10.0 + 5.0 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parameter {
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "nu")]
    Nu,
    #[serde(rename = "mu_D")]
    MuD,
    #[serde(rename = "psi_D")]
    PsiD,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [Parameter::Tau, Parameter::Nu, Parameter::MuD, Parameter::PsiD];

    pub fn of(self, e: &ParameterErrors) -> Option<f64> {
        match self {
            Parameter::Tau => Some(e.tau),
            Parameter::Nu => Some(e.nu),
            Parameter::MuD => e.mu_d,
            Parameter::PsiD => e.psi_d,
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameter::Tau => "tau",
            Parameter::Nu => "nu",
            Parameter::MuD => "mu_D",
            Parameter::PsiD => "psi_D",
        })
    }
}

/// One CSV row: the RMSE of one parameter in one (sweep value, SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRecord {
    pub sweep_var: SweepVariable,
    pub sweep_value: f64,
    pub snr_db: f64,
    pub parameter: Parameter,
    pub rmse: f64,
    pub trials_used: usize,
    /// Mean stage-1 sweeps over the trials used.
    pub stage1_iters: f64,
    pub stage2_iters: f64,
}

/// Summary of one trial, as kept by the sweep reducer.
#[derive(Debug, Clone, Copy)]
struct TrialSummary {
    errors: ParameterErrors,
    stage1_iters: usize,
    stage2_iters: usize,
}

/// Per-cell failure counts, reported in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailures {
    pub sweep_value: f64,
    pub snr_db: f64,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<RmseRecord>,
    pub failures: Vec<CellFailures>,
}

/// Runs `trials` trials in every (sweep value, SNR) cell on `jobs` worker
/// threads and reduces them to one RMSE record per parameter.
///
/// RMSE is `sqrt(mean |x − x̂|² / |x|²)` over the trials that completed.
/// Trials whose estimator fails numerically are excluded and counted; a
/// cell in which every trial fails is an error.
pub fn run_sweep(spec: &ExperimentSpec, jobs: usize) -> Result<SweepResult> {
    spec.validate()?;
    let cells = spec.cells()?;
    let tasks: Vec<(usize, usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.snr_grid_db.len()).flat_map(move |s| (0..spec.trials).map(move |t| (c, s, t))))
        .collect();
    info!(
        "sweep over {}: {} cells x {} SNR points x {} trials on {} worker(s)",
        spec.sweep_variable,
        cells.len(),
        spec.snr_grid_db.len(),
        spec.trials,
        jobs.max(1)
    );

    let run = |&(c, s, t): &(usize, usize, usize)| -> Result<Option<TrialSummary>> {
        let seeds = TrialSeeds::for_trial(spec.master_seed, c, s, t);
        match run_trial(&cells[c].1, &spec.estimator, spec.snr_grid_db[s], seeds) {
            Ok(o) => Ok(Some(TrialSummary {
                errors: o.errors,
                stage1_iters: o.stage1_iters,
                stage2_iters: o.stage2_iters,
            })),
            Err(e @ (Error::Divergence { .. } | Error::Degenerate(_))) => {
                debug!("trial {t} in cell ({c}, {s}) failed: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Option<TrialSummary>> = pool.install(|| tasks.par_iter().map(run).collect::<Result<_>>())?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (c, (value, _)) in cells.iter().enumerate() {
        for (s, &snr) in spec.snr_grid_db.iter().enumerate() {
            let start = (c * spec.snr_grid_db.len() + s) * spec.trials;
            let done: Vec<&TrialSummary> = outcomes[start..start + spec.trials].iter().flatten().collect();
            if done.is_empty() {
                return Err(Error::EmptyCell {
                    sweep_value: *value,
                    snr_db: snr,
                    trials: spec.trials,
                });
            }
            failures.push(CellFailures {
                sweep_value: *value,
                snr_db: snr,
                failed: spec.trials - done.len(),
            });
            let mean =
                |f: &dyn Fn(&TrialSummary) -> usize| done.iter().map(|t| f(t) as f64).sum::<f64>() / done.len() as f64;
            let it1 = mean(&|t| t.stage1_iters);
            let it2 = mean(&|t| t.stage2_iters);
            for p in Parameter::ALL {
                let sq: Vec<f64> = done.iter().filter_map(|t| p.of(&t.errors)).map(|e| e * e).collect();
                if sq.is_empty() {
                    continue;
                }
                records.push(RmseRecord {
                    sweep_var: spec.sweep_variable,
                    sweep_value: *value,
                    snr_db: snr,
                    parameter: p,
                    rmse: (sq.iter().sum::<f64>() / sq.len() as f64).sqrt(),
                    trials_used: sq.len(),
                    stage1_iters: it1,
                    stage2_iters: it2,
                });
            }
        }
    }
    Ok(SweepResult { records, failures })
}

fn sort_records(records: &mut [RmseRecord]) {
    records.sort_by(|a, b| {
        a.sweep_value
            .total_cmp(&b.sweep_value)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.parameter.cmp(&b.parameter))
    });
}

/// Writes records as CSV, ordered by (sweep value, SNR, parameter).
pub fn write_results(records: &[RmseRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("refusing to write an empty result set".into()));
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::Writer::from_path(path)?;
    for r in &sorted {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<RmseRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything needed to rerun a sweep, written next to its CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub spec: ExperimentSpec,
    /// Command-line `key=value` overrides, in the order applied.
    pub overrides: Vec<(String, String)>,
    pub config_file: Option<String>,
    pub seed_derivation: String,
    pub failures: Vec<CellFailures>,
}

impl RunManifest {
    pub fn new(spec: &ExperimentSpec, failures: Vec<CellFailures>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            overrides: Vec::new(),
            config_file: None,
            seed_derivation: "scenario = mix(master, 1, trial); noise = mix(master, 2, sweep_idx, snr_idx, trial); \
                              als seeds = mix(noise, 11) and mix(noise, 12)"
                .to_string(),
            failures,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Closed-form operation counts of both ALS stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub k: usize,
    pub iters1: usize,
    pub iters2: usize,
    /// `iters1 · N²K[MQ(1 + LN²) + L]`.
    pub stage1_ops: u128,
    /// `iters2 · N[MQ(M² + Q²) + L²]`.
    pub stage2_ops: u128,
    pub wall_time_s: Option<f64>,
}

impl ComplexityReport {
    pub fn total_ops(&self) -> u128 {
        self.stage1_ops + self.stage2_ops
    }
}

pub fn complexity_estimate(cfg: &ScenarioConfig, iters1: usize, iters2: usize) -> ComplexityReport {
    let (l, n, m, q, k) = (
        cfg.l as u128,
        cfg.n() as u128,
        cfg.m as u128,
        cfg.q as u128,
        cfg.k as u128,
    );
    let mq = m * q;
    ComplexityReport {
        l: cfg.l,
        n: cfg.n(),
        m: cfg.m,
        q: cfg.q,
        k: cfg.k,
        iters1,
        iters2,
        stage1_ops: iters1 as u128 * n * n * k * (mq * (1 + l * n * n) + l),
        stage2_ops: iters2 as u128 * n * (mq * (m * m + q * q) + l * l),
        wall_time_s: None,
    }
}

/// Runs one noiseless estimate of `cfg` and reports its counts with the
/// measured iterations and wall time.
pub fn measure_complexity(cfg: &ScenarioConfig, settings: &EstimatorSettings, seed: u64) -> Result<ComplexityReport> {
    let scenario = Scenario::draw(cfg, seed)?;
    let start = Instant::now();
    let out = run_pipeline(&scenario.clean, &scenario, settings)?;
    let mut report = complexity_estimate(cfg, out.stage1.iterations, out.stage2.iterations);
    report.wall_time_s = Some(start.elapsed().as_secs_f64());
    Ok(report)
}
