//! Experiment orchestration: deterministic replication scheduling over a
//! worker pool, per-checkpoint measurement, slope fitting, and CSV/SVG
//! emission.
//!
//! Every replication is a pure function of its seed, so a finished
//! experiment is reproducible byte-for-byte regardless of worker count or
//! scheduling order. Rows are sorted by (method, dim, regime, n,
//! replication) before anything is written.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::decomposition::{compute_terms, DecompositionError};
use crate::driver::{
    checkpoint_row, log_grid, run_trajectory, DriverError, RunConfig, StepSchedule,
};
use crate::inference::{coverage, nmse, SandwichOracle};
use crate::linalg::LinalgError;
use crate::precond::{GainSchedule, InputMode, PrecondConfig, PrecondError, Rule};
use crate::problems::{
    bundled_dataset, ingest_csv, make_linear_problem, make_logistic_problem, IngestSpec,
    ProblemError, Regime, StreamProblem,
};
use crate::rng;
use crate::saturator::{self, SaturatorError, SweepRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Saturator(#[from] SaturatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv failure on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{aborted} of {total} replications aborted, above the 5% budget")]
    TooManyAborts { aborted: usize, total: usize },
    #[error("unknown method token {0:?}")]
    UnknownMethod(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("slope fit needs at least 3 in-range points, found {0}")]
    TooFewPoints(usize),
    #[error("slope fit requires positive values; got y = {y} at n = {x}")]
    NonPositiveValue { x: f64, y: f64 },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, source: csv::Error) -> HarnessError {
    HarnessError::Csv { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Synth,
    Logistic,
    Threshold,
    Saturate,
}

impl ExperimentName {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::Synth => "synth",
            ExperimentName::Logistic => "logistic",
            ExperimentName::Threshold => "threshold",
            ExperimentName::Saturate => "saturate",
        }
    }
}

/// A named preconditioner configuration as it appears in the rows CSV.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub config: PrecondConfig,
}

/// Builds a method from its config token. Tokens are rule names, with
/// constant-EMA rules taking an optional weight suffix: `ema_rmsprop:0.999`.
fn build_method(
    token: &str,
    epsilon: f64,
    ridge_before_map: bool,
    gain_c: f64,
) -> Result<MethodSpec, HarnessError> {
    let (rule_str, suffix) = match token.split_once(':') {
        Some((r, s)) => (r, Some(s)),
        None => (token, None),
    };
    let rule: Rule = rule_str.parse().map_err(|_| HarnessError::UnknownMethod(token.into()))?;
    let gain = match rule {
        Rule::EmaRmsprop => {
            let rho = match suffix {
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| HarnessError::UnknownMethod(token.into()))?,
                None => 0.5,
            };
            GainSchedule::constant(rho)?
        }
        _ => {
            if suffix.is_some() {
                return Err(HarnessError::UnknownMethod(token.into()));
            }
            GainSchedule::sa_shifted(gain_c)?
        }
    };
    let mode = if rule == Rule::Identity { InputMode::Gradient } else { InputMode::Hessian };
    let mut config = PrecondConfig::new(rule, mode, epsilon, gain);
    if ridge_before_map {
        config = config.with_ridge_before_map();
    }
    Ok(MethodSpec { name: token.replace(':', "_"), config })
}

/// Everything one experiment run needs; constructors give the desk-scale
/// defaults and `paper_scale` switches to the full published grids.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub dims: Vec<usize>,
    pub regimes: Vec<Regime>,
    pub method_tokens: Vec<String>,
    pub n_max: u64,
    pub checkpoint_min: u64,
    pub grid_per_decade: usize,
    pub replications: u64,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub eta0: f64,
    pub alpha: f64,
    pub clip_norm: Option<f64>,
    pub epsilon: f64,
    pub ridge_before_map: bool,
    pub gain_c: f64,
    pub noise_scale: f64,
    /// 0 lets the pool pick the machine default.
    pub workers: usize,
    pub data_path: Option<PathBuf>,
    pub ridge: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ExperimentSpec {
    fn base(name: ExperimentName, output_dir: PathBuf) -> Self {
        ExperimentSpec {
            name,
            dims: vec![5],
            regimes: vec![Regime::InfoEquality, Regime::GeneralSandwich],
            method_tokens: vec![
                "identity".into(),
                "sa_adagrad".into(),
                "sa_rmsprop".into(),
                "sa_ons".into(),
            ],
            n_max: 500_000,
            checkpoint_min: 5000,
            grid_per_decade: 10,
            replications: 50,
            base_seed: 20260814,
            output_dir,
            eta0: 0.2,
            alpha: 0.7,
            clip_norm: Some(500.0),
            epsilon: 0.5,
            ridge_before_map: true,
            gain_c: 1.0,
            noise_scale: 1.0,
            workers: 0,
            data_path: None,
            ridge: 0.1,
            alphas: vec![0.7],
            betas: vec![0.6, 0.75, 0.85, 1.0],
        }
    }

    pub fn synth(output_dir: PathBuf) -> Self {
        Self::base(ExperimentName::Synth, output_dir)
    }

    pub fn threshold(output_dir: PathBuf) -> Self {
        let mut spec = Self::base(ExperimentName::Threshold, output_dir);
        spec.regimes = vec![Regime::GeneralSandwich];
        spec.method_tokens =
            vec!["sa_rmsprop".into(), "ema_rmsprop:0.5".into(), "ema_rmsprop:0.999".into()];
        spec.n_max = 1_000_000;
        spec.eta0 = 2.0;
        spec.epsilon = 1.0;
        spec
    }

    pub fn logistic(output_dir: PathBuf, data_path: Option<PathBuf>) -> Self {
        let mut spec = Self::base(ExperimentName::Logistic, output_dir);
        spec.regimes = vec![Regime::Logistic];
        spec.n_max = 100_000;
        spec.replications = 100;
        spec.eta0 = 1.0;
        spec.data_path = data_path;
        spec
    }

    pub fn saturate(output_dir: PathBuf) -> Self {
        let mut spec = Self::base(ExperimentName::Saturate, output_dir);
        spec.n_max = 1_000_000;
        // The deterministic sweep is cheap, so it keeps the wider window
        // [1e3, 1e6] that the rate checks fit over.
        spec.checkpoint_min = 1000;
        spec.grid_per_decade = 30;
        spec
    }

    /// Full published grids instead of desk scale.
    pub fn paper_scale(&mut self) {
        match self.name {
            ExperimentName::Synth => {
                self.n_max = 5_000_000;
                self.dims = vec![5, 20, 50];
            }
            ExperimentName::Threshold => {
                self.n_max = 5_000_000;
                self.replications = 100;
            }
            ExperimentName::Logistic => {
                self.n_max = 200_000;
            }
            ExperimentName::Saturate => {}
        }
    }

    /// Checkpoint grid; always ends at n_max.
    pub fn n_grid(&self) -> Vec<u64> {
        log_grid(self.checkpoint_min.min(self.n_max), self.n_max, self.grid_per_decade)
    }

    pub fn methods(&self) -> Result<Vec<MethodSpec>, HarnessError> {
        self.method_tokens
            .iter()
            .map(|t| build_method(t, self.epsilon, self.ridge_before_map, self.gain_c))
            .collect()
    }
}

/// One (method, dim, regime, n, replication) measurement.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub method: String,
    pub dim: usize,
    pub regime: String,
    pub n: u64,
    pub replication: u64,
    pub coverage: f64,
    pub nmse: f64,
    pub sqrt_n_rn: f64,
    pub identity_gap: f64,
    /// Fitted log-log slope of ‖M_t − M_{t−1}‖_op over t ≥ 10³; present on
    /// the terminal row of rules with nonzero increments.
    pub mt_increment_slope: Option<f64>,
}

/// Per (method, dim, regime, n) mean and standard error of each metric.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub method: String,
    pub dim: usize,
    pub regime: String,
    pub n: u64,
    pub replications: usize,
    pub coverage_mean: f64,
    pub coverage_se: f64,
    pub nmse_mean: f64,
    pub nmse_se: f64,
    pub sqrt_n_rn_mean: f64,
    pub sqrt_n_rn_se: f64,
    pub identity_gap_mean: f64,
    pub identity_gap_se: f64,
}

#[derive(Debug, Clone)]
pub struct AbortLog {
    pub method: String,
    pub dim: usize,
    pub regime: String,
    pub replication: u64,
    pub step: u64,
    pub reason: String,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub rows_path: PathBuf,
    pub aggregate_path: Option<PathBuf>,
    pub metadata_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
    pub scheduled: usize,
    pub aborts: Vec<AbortLog>,
    pub rows: Vec<ExperimentRow>,
    pub aggregates: Vec<AggregateRow>,
    pub sweep_rows: Vec<SweepRow>,
    /// (method, mean slope, replications contributing).
    pub increment_slope_means: Vec<(String, f64, usize)>,
}

/// Seed for one replication: SplitMix finalizer chained over the index
/// tuple, so any single index change rescrambles the seed.
pub fn seed_for(
    base_seed: u64,
    method_index: u64,
    dim_index: u64,
    regime_index: u64,
    replication: u64,
) -> u64 {
    let mut z = rng::mix64(base_seed ^ 0x243F_6A88_85A3_08D3);
    for (k, v) in [method_index, dim_index, regime_index, replication].into_iter().enumerate() {
        z = rng::mix64(z ^ rng::mix64(v.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))));
    }
    z
}

/// Seed for problem construction (noise-kernel calibration draws), separate
/// from every replication stream.
fn problem_seed(base_seed: u64, dim: u64, regime_index: u64) -> u64 {
    rng::mix64(
        base_seed
            ^ rng::mix64(dim ^ 0xC2B2_AE3D_27D4_EB4F)
            ^ rng::mix64(regime_index.wrapping_mul(0x1656_67B1_9E37_79F9).wrapping_add(1)),
    )
}

struct ProblemCell {
    dim_index: u64,
    regime_index: u64,
    problem: StreamProblem,
    oracle: SandwichOracle,
}

fn build_problems(spec: &ExperimentSpec) -> Result<Vec<ProblemCell>, HarnessError> {
    let mut cells = Vec::new();
    if spec.name == ExperimentName::Logistic {
        let data = match &spec.data_path {
            Some(path) => ingest_csv(path, &IngestSpec::default())?,
            None => bundled_dataset(),
        };
        let problem = make_logistic_problem(data, spec.ridge)?;
        let oracle = SandwichOracle::new(problem.hessian(), problem.noise_cov())?;
        cells.push(ProblemCell { dim_index: 0, regime_index: 0, problem, oracle });
        return Ok(cells);
    }
    for (di, &dim) in spec.dims.iter().enumerate() {
        for (ri, &regime) in spec.regimes.iter().enumerate() {
            let problem = make_linear_problem(
                dim,
                regime,
                spec.noise_scale,
                problem_seed(spec.base_seed, dim as u64, ri as u64),
            )?;
            let oracle = SandwichOracle::new(problem.hessian(), problem.noise_cov())?;
            cells.push(ProblemCell {
                dim_index: di as u64,
                regime_index: ri as u64,
                problem,
                oracle,
            });
        }
    }
    Ok(cells)
}

enum RepOutcome {
    Rows(Vec<ExperimentRow>),
    Aborted(AbortLog),
}

fn run_one(
    method: &MethodSpec,
    cell: &ProblemCell,
    replication: u64,
    seed: u64,
    spec: &ExperimentSpec,
    schedule: StepSchedule,
    grid: &[u64],
) -> Result<RepOutcome, HarnessError> {
    let problem = &cell.problem;
    let mut run = RunConfig::new(
        problem,
        method.config.clone(),
        schedule,
        spec.n_max,
        grid.to_vec(),
        seed,
    );
    run.clip_norm = spec.clip_norm;
    let record = run_trajectory(&run)?;
    if let Some(abort) = &record.aborted {
        return Ok(RepOutcome::Aborted(AbortLog {
            method: method.name.clone(),
            dim: problem.dim(),
            regime: problem.regime().name().to_string(),
            replication,
            step: abort.step,
            reason: abort.reason.clone(),
        }));
    }

    // Stabilization-rate slope over the probed increments past the burn-in.
    let slope = {
        let pts: Vec<(f64, f64)> = record
            .probes
            .increment_points()
            .into_iter()
            .filter(|&(t, _)| t >= 1000.0)
            .collect();
        fit_loglog_slope(&pts, FitRange::Full).ok().map(|f| f.slope)
    };

    let h = problem.hessian();
    let x_star = problem.x_star();
    let mut rows = Vec::with_capacity(grid.len());
    for &n in grid {
        let ck = checkpoint_row(&record, n)?;
        let terms = compute_terms(&record, h, n)?;
        let row = ExperimentRow {
            method: method.name.clone(),
            dim: problem.dim(),
            regime: problem.regime().name().to_string(),
            n,
            replication,
            coverage: coverage(&ck.x_bar, x_star, &cell.oracle, n, 0.95),
            nmse: nmse(&ck.x_bar, x_star, &cell.oracle, n),
            sqrt_n_rn: terms.scaled_remainder(),
            identity_gap: terms.identity_gap,
            mt_increment_slope: if n == spec.n_max { slope } else { None },
        };
        if !(row.coverage.is_finite()
            && row.nmse.is_finite()
            && row.sqrt_n_rn.is_finite()
            && row.identity_gap.is_finite())
        {
            return Err(HarnessError::Invalid(format!(
                "non-finite measurement for {} at n = {n}",
                method.name
            )));
        }
        rows.push(row);
    }
    Ok(RepOutcome::Rows(rows))
}

fn with_pool<T: Send>(
    workers: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, HarnessError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs the full experiment and writes rows, aggregates, metadata, and
/// plots under the experiment's output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary, HarnessError> {
    std::fs::create_dir_all(&spec.output_dir).map_err(|e| io_err(&spec.output_dir, e))?;
    if spec.name == ExperimentName::Saturate {
        return run_saturate(spec);
    }

    let schedule = StepSchedule::new(spec.eta0, spec.alpha)?;
    let methods = spec.methods()?;
    let grid = spec.n_grid();
    let cells = build_problems(spec)?;

    let mut items: Vec<(usize, usize, u64, u64)> = Vec::new();
    for mi in 0..methods.len() {
        for (ci, cell) in cells.iter().enumerate() {
            for rep in 0..spec.replications {
                let seed =
                    seed_for(spec.base_seed, mi as u64, cell.dim_index, cell.regime_index, rep);
                items.push((mi, ci, rep, seed));
            }
        }
    }
    let scheduled = items.len();

    let outcomes: Result<Vec<RepOutcome>, HarnessError> = with_pool(spec.workers, || {
        items
            .par_iter()
            .map(|&(mi, ci, rep, seed)| {
                run_one(&methods[mi], &cells[ci], rep, seed, spec, schedule, &grid)
            })
            .collect()
    })?;
    let outcomes = outcomes?;

    let mut rows = Vec::new();
    let mut aborts = Vec::new();
    for outcome in outcomes {
        match outcome {
            RepOutcome::Rows(mut r) => rows.append(&mut r),
            RepOutcome::Aborted(log) => aborts.push(log),
        }
    }
    if aborts.len() * 20 > scheduled {
        return Err(HarnessError::TooManyAborts { aborted: aborts.len(), total: scheduled });
    }

    rows.sort_by(|a, b| {
        (&a.method, a.dim, &a.regime, a.n, a.replication)
            .cmp(&(&b.method, b.dim, &b.regime, b.n, b.replication))
    });
    let aggregates = aggregate_rows(&rows);
    let increment_slope_means = slope_means(&rows);

    let rows_path = spec.output_dir.join("rows.csv");
    write_rows_csv(&rows_path, &rows)?;
    let aggregate_path = spec.output_dir.join("aggregate.csv");
    write_aggregate_csv(&aggregate_path, &aggregates)?;
    let plot_paths = write_plots(spec, &aggregates)?;
    let metadata_path = spec.output_dir.join("metadata.txt");
    write_metadata(spec, &metadata_path, &methods, &grid, scheduled, &aborts, &increment_slope_means)?;

    Ok(ExperimentSummary {
        output_dir: spec.output_dir.clone(),
        rows_path,
        aggregate_path: Some(aggregate_path),
        metadata_path,
        plot_paths,
        scheduled,
        aborts,
        rows,
        aggregates,
        sweep_rows: Vec::new(),
        increment_slope_means,
    })
}

fn run_saturate(spec: &ExperimentSpec) -> Result<ExperimentSummary, HarnessError> {
    let grid = saturator::slope_grid(spec.checkpoint_min.max(2), spec.n_max, spec.grid_per_decade);
    let sweep_rows = saturator::sweep(&spec.alphas, &spec.betas, &grid)?;

    let rows_path = spec.output_dir.join("rows.csv");
    {
        let mut w = csv::Writer::from_path(&rows_path).map_err(|e| csv_err(&rows_path, e))?;
        w.write_record(["alpha", "beta", "n", "sqrt_n_Rn", "Bn", "Sn", "Dn"])
            .map_err(|e| csv_err(&rows_path, e))?;
        for r in &sweep_rows {
            w.write_record([
                fmt(r.alpha),
                fmt(r.beta),
                r.n.to_string(),
                fmt(r.sqrt_n_rn),
                fmt(r.bn),
                fmt(r.sn),
                fmt(r.dn),
            ])
            .map_err(|e| csv_err(&rows_path, e))?;
        }
        w.flush().map_err(|e| io_err(&rows_path, e))?;
    }

    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in &sweep_rows {
        series
            .entry(format!("alpha={} beta={}", r.alpha, r.beta))
            .or_default()
            .push((r.n as f64, r.sqrt_n_rn, 0.0));
    }
    let plot = svg::line_plot(
        &svg::PlotConfig {
            title: "scaled remainder of the saturating construction".into(),
            x_label: "n".into(),
            y_label: "sqrt(n) |R_n|".into(),
            log_x: true,
            log_y: true,
        },
        &series
            .into_iter()
            .map(|(label, points)| svg::Series { label, points })
            .collect::<Vec<_>>(),
    );
    let plot_path = spec.output_dir.join("sweep.svg");
    std::fs::write(&plot_path, plot).map_err(|e| io_err(&plot_path, e))?;

    let metadata_path = spec.output_dir.join("metadata.txt");
    write_metadata(spec, &metadata_path, &[], &grid, 0, &[], &[])?;

    Ok(ExperimentSummary {
        output_dir: spec.output_dir.clone(),
        rows_path,
        aggregate_path: None,
        metadata_path,
        plot_paths: vec![plot_path],
        scheduled: spec.alphas.len() * spec.betas.len(),
        aborts: Vec::new(),
        rows: Vec::new(),
        aggregates: Vec::new(),
        sweep_rows,
        increment_slope_means: Vec::new(),
    })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Groups rows by (method, dim, regime, n) and reduces each metric to a
/// mean and standard error.
pub fn aggregate_rows(rows: &[ExperimentRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, usize, String, u64), Vec<&ExperimentRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.dim, r.regime.clone(), r.n))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, dim, regime, n), members)| {
            let pull = |f: fn(&ExperimentRow) -> f64| -> Vec<f64> {
                members.iter().map(|r| f(r)).collect()
            };
            let (coverage_mean, coverage_se) = mean_se(&pull(|r| r.coverage));
            let (nmse_mean, nmse_se) = mean_se(&pull(|r| r.nmse));
            let (sqrt_n_rn_mean, sqrt_n_rn_se) = mean_se(&pull(|r| r.sqrt_n_rn));
            let (identity_gap_mean, identity_gap_se) = mean_se(&pull(|r| r.identity_gap));
            AggregateRow {
                method,
                dim,
                regime,
                n,
                replications: members.len(),
                coverage_mean,
                coverage_se,
                nmse_mean,
                nmse_se,
                sqrt_n_rn_mean,
                sqrt_n_rn_se,
                identity_gap_mean,
                identity_gap_se,
            }
        })
        .collect()
}

fn slope_means(rows: &[ExperimentRow]) -> Vec<(String, f64, usize)> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(s) = r.mt_increment_slope {
            groups.entry(r.method.clone()).or_default().push(s);
        }
    }
    groups
        .into_iter()
        .map(|(method, slopes)| {
            let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
            (method, mean, slopes.len())
        })
        .collect()
}

/// Shortest-roundtrip decimal text; identical floats print identically.
fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_rows_csv(path: &Path, rows: &[ExperimentRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "method",
        "dim",
        "regime",
        "n",
        "replication",
        "coverage",
        "nmse",
        "sqrt_n_rn",
        "identity_gap",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dim.to_string(),
            r.regime.clone(),
            r.n.to_string(),
            r.replication.to_string(),
            fmt(r.coverage),
            fmt(r.nmse),
            fmt(r.sqrt_n_rn),
            fmt(r.identity_gap),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "method",
        "dim",
        "regime",
        "n",
        "replications",
        "coverage_mean",
        "coverage_se",
        "nmse_mean",
        "nmse_se",
        "sqrt_n_rn_mean",
        "sqrt_n_rn_se",
        "identity_gap_mean",
        "identity_gap_se",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dim.to_string(),
            r.regime.clone(),
            r.n.to_string(),
            r.replications.to_string(),
            fmt(r.coverage_mean),
            fmt(r.coverage_se),
            fmt(r.nmse_mean),
            fmt(r.nmse_se),
            fmt(r.sqrt_n_rn_mean),
            fmt(r.sqrt_n_rn_se),
            fmt(r.identity_gap_mean),
            fmt(r.identity_gap_se),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Panel descriptor: metric name, (mean, se) extractor, and log-y flag.
type MetricPanel = (&'static str, fn(&AggregateRow) -> (f64, f64), bool);

fn write_plots(
    spec: &ExperimentSpec,
    aggregates: &[AggregateRow],
) -> Result<Vec<PathBuf>, HarnessError> {
    let mut paths = Vec::new();
    let mut panels: BTreeMap<(usize, String), Vec<&AggregateRow>> = BTreeMap::new();
    for a in aggregates {
        panels.entry((a.dim, a.regime.clone())).or_default().push(a);
    }
    for ((dim, regime), members) in panels {
        let metrics: [MetricPanel; 3] = [
            ("coverage", |a| (a.coverage_mean, a.coverage_se), false),
            ("nmse", |a| (a.nmse_mean, a.nmse_se), false),
            ("sqrt_n_rn", |a| (a.sqrt_n_rn_mean, a.sqrt_n_rn_se), true),
        ];
        for (metric, pull, log_y) in metrics {
            let mut by_method: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
            for a in &members {
                let (mean, se) = pull(a);
                by_method.entry(&a.method).or_default().push((a.n as f64, mean, se));
            }
            let series: Vec<svg::Series> = by_method
                .into_iter()
                .map(|(label, points)| svg::Series { label: label.to_string(), points })
                .collect();
            let doc = svg::line_plot(
                &svg::PlotConfig {
                    title: format!("{metric} (d = {dim}, {regime})"),
                    x_label: "n".into(),
                    y_label: metric.to_string(),
                    log_x: true,
                    log_y,
                },
                &series,
            );
            let path = spec.output_dir.join(format!("{metric}_d{dim}_{regime}.svg"));
            std::fs::write(&path, doc).map_err(|e| io_err(&path, e))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[allow(clippy::too_many_arguments)]
fn write_metadata(
    spec: &ExperimentSpec,
    path: &Path,
    methods: &[MethodSpec],
    grid: &[u64],
    scheduled: usize,
    aborts: &[AbortLog],
    slope_means: &[(String, f64, usize)],
) -> Result<(), HarnessError> {
    let mut out = String::new();
    use std::fmt::Write;
    let mut w = |s: String| {
        let _ = writeln!(out, "{s}");
    };
    w(format!("experiment = {}", spec.name.name()));
    w(format!(
        "generator = {} v{}",
        crate::rng::GENERATOR_NAME,
        crate::rng::GENERATOR_VERSION
    ));
    w(format!("build = {}", git_describe()));
    w(format!("base_seed = {}", spec.base_seed));
    w("seed_mapping = z0 = mix64(base_seed ^ 0x243F6A8885A308D3); z_{k+1} = mix64(z_k ^ mix64(v_k + (k+1)*0x9E3779B97F4A7C15)) chained over v = (method_index, dim_index, regime_index, replication)".to_string());
    w("problem_seed = mix64(base_seed ^ mix64(dim ^ 0xC2B2AE3D27D4EB4F) ^ mix64(regime_index*0x165667B19E3779F9 + 1))".to_string());
    w(format!("dims = {:?}", spec.dims));
    w(format!("regimes = {:?}", spec.regimes.iter().map(|r| r.name()).collect::<Vec<_>>()));
    for m in methods {
        w(format!("method {} = {:?}", m.name, m.config));
    }
    w(format!("n_max = {}", spec.n_max));
    w(format!("checkpoints = {grid:?}"));
    w(format!("replications = {}", spec.replications));
    w(format!("eta0 = {}, alpha = {}", spec.eta0, spec.alpha));
    w(format!("clip_norm = {:?}", spec.clip_norm));
    w(format!(
        "epsilon = {}, ridge_before_map = {}, gain_c = {}",
        spec.epsilon, spec.ridge_before_map, spec.gain_c
    ));
    w(format!("noise_scale = {}", spec.noise_scale));
    w(format!("workers = {}", spec.workers));
    match spec.name {
        ExperimentName::Logistic => {
            w(format!(
                "data = {}",
                spec.data_path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "bundled 569-row fixture".to_string())
            ));
            w(format!("ridge = {}", spec.ridge));
        }
        ExperimentName::Saturate => {
            w(format!("alphas = {:?}", spec.alphas));
            w(format!("betas = {:?}", spec.betas));
        }
        _ => {}
    }
    w(format!("scheduled = {scheduled}"));
    w(format!("aborted = {}", aborts.len()));
    for a in aborts {
        w(format!(
            "aborted_run = method={} dim={} regime={} replication={} step={} reason={}",
            a.method, a.dim, a.regime, a.replication, a.step, a.reason
        ));
    }
    for (method, mean, count) in slope_means {
        w(format!(
            "mt_increment_slope {method} = {mean} over {count} replications"
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

/// Which part of the (log n) axis a slope fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitRange {
    Full,
    /// Points with log n at or above the midpoint of the observed log range.
    SecondHalf,
}

impl std::str::FromStr for FitRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(FitRange::Full),
            "second_half" => Ok(FitRange::SecondHalf),
            other => Err(format!("unknown fit range {other:?} (expected full or second_half)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// OLS of log y on log x over the selected range of points (x, y).
pub fn fit_loglog_slope(points: &[(f64, f64)], range: FitRange) -> Result<SlopeFit, HarnessError> {
    let selected: Vec<(f64, f64)> = match range {
        FitRange::Full => points.to_vec(),
        FitRange::SecondHalf => {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &(x, _) in points {
                lo = lo.min(x.ln());
                hi = hi.max(x.ln());
            }
            let mid = 0.5 * (lo + hi);
            points.iter().copied().filter(|&(x, _)| x.ln() >= mid).collect()
        }
    };
    if selected.len() < 3 {
        return Err(HarnessError::TooFewPoints(selected.len()));
    }
    let mut logs = Vec::with_capacity(selected.len());
    for &(x, y) in &selected {
        if !(y > 0.0 && x > 0.0) {
            return Err(HarnessError::NonPositiveValue { x, y });
        }
        logs.push((x.ln(), y.ln()));
    }
    let k = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    let intercept = (sy - slope * sx) / k;
    let mean_y = sy / k;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 =
        logs.iter().map(|p| (p.1 - intercept - slope * p.0) * (p.1 - intercept - slope * p.0)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit { slope, intercept, r_squared, points_used: logs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seed_mapping_is_injective_and_base_sensitive() {
        let mut seen = HashSet::new();
        for m in 0..5u64 {
            for d in 0..3u64 {
                for r in 0..2u64 {
                    for rep in 0..200u64 {
                        assert!(
                            seen.insert(seed_for(99, m, d, r, rep)),
                            "collision at ({m},{d},{r},{rep})"
                        );
                    }
                }
            }
        }
        assert_eq!(seed_for(7, 1, 2, 0, 3), seed_for(7, 1, 2, 0, 3));
        assert_ne!(seed_for(7, 1, 2, 0, 3), seed_for(8, 1, 2, 0, 3));
    }

    #[test]
    fn slope_fit_recovers_exact_power_laws() {
        let pts: Vec<(f64, f64)> = (1..=20).map(|k| {
            let x = (k * 100) as f64;
            (x, x.powf(-0.5))
        }).collect();
        let fit = fit_loglog_slope(&pts, FitRange::Full).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat: Vec<(f64, f64)> = (1..=10).map(|k| ((k * 10) as f64, 2.5)).collect();
        let fit = fit_loglog_slope(&flat, FitRange::Full).unwrap();
        assert!(fit.slope.abs() < 1e-12);

        assert!(matches!(
            fit_loglog_slope(&pts[..2], FitRange::Full),
            Err(HarnessError::TooFewPoints(2))
        ));
        let mut bad = pts.clone();
        bad[5].1 = 0.0;
        assert!(matches!(
            fit_loglog_slope(&bad, FitRange::Full),
            Err(HarnessError::NonPositiveValue { .. })
        ));
    }

    #[test]
    fn second_half_range_selects_by_log_midpoint() {
        // Slope -1 for n in [10, 100], slope -3 for n in (100, 1000].
        let pts: Vec<(f64, f64)> = (1..=30)
            .map(|k| {
                let x = 10f64 * 10f64.powf((k - 1) as f64 / 14.5);
                let y = if x <= 100.0 { x.powf(-1.0) } else { 1e4 * x.powf(-3.0) };
                (x, y)
            })
            .collect();
        let full = fit_loglog_slope(&pts, FitRange::Full).unwrap();
        let second = fit_loglog_slope(&pts, FitRange::SecondHalf).unwrap();
        assert!(second.slope < -2.9, "second-half slope {} should be near -3", second.slope);
        assert!(full.slope > second.slope);
        assert!(second.points_used < full.points_used);
    }

    #[test]
    fn slope_fit_matches_the_saturating_rate() {
        let seq = crate::saturator::SaturatingSequences::new(0.7, 0.6).unwrap();
        let grid = crate::saturator::slope_grid(1000, 1_000_000, 30);
        let splits = crate::saturator::eval_remainder_series(&seq, &grid).unwrap();
        let pts: Vec<(f64, f64)> = splits.iter().map(|s| (s.n as f64, s.scaled())).collect();
        let fit = fit_loglog_slope(&pts, FitRange::Full).unwrap();
        assert!((fit.slope - 0.25).abs() <= 0.05);
    }

    #[test]
    fn method_tokens_build_the_documented_configs() {
        let m = build_method("sa_adagrad", 0.5, true, 1.0).unwrap();
        assert_eq!(m.name, "sa_adagrad");
        assert_eq!(m.config.rule, Rule::SaAdagrad);
        assert!(m.config.ridge_before_map);

        let m = build_method("ema_rmsprop:0.999", 1.0, true, 1.0).unwrap();
        assert_eq!(m.name, "ema_rmsprop_0.999");
        assert!(matches!(m.config.schedule, GainSchedule::Constant { .. }));

        let m = build_method("ema_rmsprop", 1.0, false, 1.0).unwrap();
        assert!(!m.config.ridge_before_map);

        assert!(build_method("sa_ons:0.5", 0.5, true, 1.0).is_err());
        assert!(build_method("newton", 0.5, true, 1.0).is_err());
        assert!(build_method("ema_rmsprop:nope", 0.5, true, 1.0).is_err());
    }

    fn tiny_spec(out: PathBuf) -> ExperimentSpec {
        let mut spec = ExperimentSpec::synth(out);
        spec.dims = vec![2];
        spec.regimes = vec![Regime::InfoEquality];
        spec.method_tokens = vec!["identity".into(), "sa_rmsprop".into()];
        spec.n_max = 2000;
        spec.checkpoint_min = 100;
        spec.grid_per_decade = 5;
        spec.replications = 3;
        spec.workers = 2;
        spec
    }

    #[test]
    fn experiments_are_deterministic_across_runs_and_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec_a = tiny_spec(dir.path().join("a"));
        let summary_a = run_experiment(&spec_a).unwrap();
        let bytes_a = std::fs::read(&summary_a.rows_path).unwrap();

        let spec_b = tiny_spec(dir.path().join("b"));
        let summary_b = run_experiment(&spec_b).unwrap();
        let bytes_b = std::fs::read(&summary_b.rows_path).unwrap();
        assert_eq!(bytes_a, bytes_b, "same spec must produce byte-identical rows");

        spec_a.output_dir = dir.path().join("c");
        spec_a.workers = 1;
        let summary_c = run_experiment(&spec_a).unwrap();
        let bytes_c = std::fs::read(&summary_c.rows_path).unwrap();
        assert_eq!(bytes_a, bytes_c, "worker count must not change results");

        assert!(summary_a.aggregate_path.as_ref().unwrap().exists());
        assert!(summary_a.metadata_path.exists());
        assert_eq!(summary_a.plot_paths.len(), 3);
        for p in &summary_a.plot_paths {
            assert!(p.exists());
        }
        assert_eq!(summary_a.scheduled, 6);
        assert!(summary_a.aborts.is_empty());
        // identity contributes no increment slope, sa_rmsprop does.
        assert_eq!(summary_a.increment_slope_means.len(), 1);
        assert_eq!(summary_a.increment_slope_means[0].0, "sa_rmsprop");
    }

    #[test]
    fn aggregates_match_brute_force_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&tiny_spec(dir.path().join("x"))).unwrap();
        for agg in &summary.aggregates {
            let members: Vec<&ExperimentRow> = summary
                .rows
                .iter()
                .filter(|r| {
                    r.method == agg.method
                        && r.dim == agg.dim
                        && r.regime == agg.regime
                        && r.n == agg.n
                })
                .collect();
            assert_eq!(members.len(), agg.replications);
            let mean = members.iter().map(|r| r.nmse).sum::<f64>() / members.len() as f64;
            assert!((mean - agg.nmse_mean).abs() <= 1e-15 * mean.abs().max(1.0));
            let var = members
                .iter()
                .map(|r| (r.nmse - mean) * (r.nmse - mean))
                .sum::<f64>()
                / (members.len() as f64 - 1.0);
            let se = (var / members.len() as f64).sqrt();
            assert!((se - agg.nmse_se).abs() <= 1e-12 * se.abs().max(1.0));
        }
    }

    #[test]
    fn diverging_specs_fail_the_abort_budget() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(dir.path().join("explode"));
        spec.method_tokens = vec!["identity".into()];
        spec.eta0 = 1e9;
        spec.clip_norm = None;
        let err = run_experiment(&spec).unwrap_err();
        assert!(matches!(err, HarnessError::TooManyAborts { .. }), "got {err:?}");
    }

    #[test]
    fn logistic_experiment_runs_on_the_bundled_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::logistic(dir.path().join("log"), None);
        spec.method_tokens = vec!["sa_rmsprop".into()];
        spec.n_max = 2000;
        spec.checkpoint_min = 500;
        spec.grid_per_decade = 5;
        spec.replications = 2;
        spec.workers = 2;
        let summary = run_experiment(&spec).unwrap();
        assert!(summary.aborts.is_empty());
        assert!(!summary.rows.is_empty());
        for r in &summary.rows {
            assert_eq!(r.dim, 11);
            assert_eq!(r.regime, "logistic");
            assert!(r.nmse.is_finite() && r.coverage >= 0.0 && r.coverage <= 1.0);
        }
    }

    #[test]
    fn saturate_experiment_writes_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::saturate(dir.path().join("sat"));
        spec.n_max = 10_000;
        spec.grid_per_decade = 5;
        spec.betas = vec![0.6, 1.0];
        let summary = run_experiment(&spec).unwrap();
        assert!(!summary.sweep_rows.is_empty());
        let text = std::fs::read_to_string(&summary.rows_path).unwrap();
        assert!(text.starts_with("alpha,beta,n,sqrt_n_Rn,Bn,Sn,Dn\n"));
        assert_eq!(text.lines().count(), summary.sweep_rows.len() + 1);
        assert!(summary.plot_paths[0].exists());
    }
}
