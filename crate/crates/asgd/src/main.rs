use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use asgd::harness::{
    self, config::apply_config_file, fit_loglog_slope, ExperimentSpec, ExperimentSummary, FitRange,
};

#[derive(Parser)]
#[command(
    name = "asgd",
    about = "Averaged SGD with dynamic preconditioning: experiments, remainder diagnostics, and slope fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every experiment; applied after any config file, so the
/// precedence is defaults, then config, then flags.
#[derive(Args)]
struct Common {
    /// Flat key = value config file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for rows.csv, aggregate.csv, metadata.txt, plots.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = machine default).
    #[arg(long)]
    workers: Option<usize>,
    /// Run the full published grid instead of the desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Base seed; every replication seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic linear streams over both noise regimes.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Streaming logistic regression on a dataset fixture.
    Logistic {
        #[command(flatten)]
        common: Common,
        /// CSV fixture; defaults to the bundled 569-row dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Large-step-size comparison of stabilizing and non-stabilizing rules.
    Threshold {
        #[command(flatten)]
        common: Common,
    },
    /// Deterministic worst-case remainder sweep over (alpha, beta).
    Saturate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit log-log slopes of a remainder column from an emitted CSV.
    Slopes {
        /// rows.csv or aggregate.csv produced by an experiment.
        #[arg(long)]
        input: PathBuf,
        /// Portion of the log-n axis to fit.
        #[arg(long, default_value = "full")]
        range: FitRange,
        /// Column to fit; auto-detects a remainder column when omitted.
        #[arg(long)]
        y_column: Option<String>,
    },
}

fn finalize(mut spec: ExperimentSpec, common: &Common) -> anyhow::Result<ExperimentSpec> {
    if common.paper_scale {
        spec.paper_scale();
    }
    if let Some(config) = &common.config {
        apply_config_file(&mut spec, config)
            .with_context(|| format!("reading {}", config.display()))?;
    }
    if let Some(out) = &common.out {
        spec.output_dir = out.clone();
    }
    if let Some(workers) = common.workers {
        spec.workers = workers;
    }
    if let Some(seed) = common.seed {
        spec.base_seed = seed;
    }
    Ok(spec)
}

fn report(summary: &ExperimentSummary) {
    println!(
        "scheduled {} replications, {} aborted",
        summary.scheduled,
        summary.aborts.len()
    );
    println!("rows      {}", summary.rows_path.display());
    if let Some(agg) = &summary.aggregate_path {
        println!("aggregate {}", agg.display());
    }
    println!("metadata  {}", summary.metadata_path.display());
    for p in &summary.plot_paths {
        println!("plot      {}", p.display());
    }
    for (method, slope, count) in &summary.increment_slope_means {
        println!("stabilization slope {method} = {slope:.4} (n = {count})");
    }
}

fn run_slopes(input: &PathBuf, range: FitRange, y_column: Option<&str>) -> anyhow::Result<()> {
    let mut reader = csv::Reader::from_path(input)
        .with_context(|| format!("opening {}", input.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let y_name = match y_column {
        Some(name) => name.to_string(),
        None => ["sqrt_n_rn_mean", "sqrt_n_Rn", "sqrt_n_rn"]
            .into_iter()
            .find(|c| col(c).is_some())
            .map(str::to_string)
            .with_context(|| format!("no remainder column found in {headers:?}"))?,
    };
    let y_idx = col(&y_name).with_context(|| format!("column {y_name:?} not in {headers:?}"))?;
    let n_idx = col("n").context("column \"n\" is required")?;
    let key_columns: Vec<(String, usize)> = ["method", "dim", "regime", "alpha", "beta"]
        .into_iter()
        .filter_map(|name| col(name).map(|idx| (name.to_string(), idx)))
        .collect();

    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let key = key_columns
            .iter()
            .map(|(name, idx)| format!("{name}={}", &record[*idx]))
            .collect::<Vec<_>>()
            .join(" ");
        let n: f64 = record[n_idx].parse().context("parsing n")?;
        let y: f64 = record[y_idx].parse().with_context(|| format!("parsing {y_name}"))?;
        groups.entry(key).or_default().push((n, y));
    }
    if groups.is_empty() {
        bail!("{} has no data rows", input.display());
    }

    println!("column {y_name}, range {range:?}");
    for (key, mut points) in groups {
        // Replication-level files carry several rows per n; average them
        // so the fit weights each checkpoint once.
        let mut by_n: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for (n, y) in points.drain(..) {
            let e = by_n.entry(n as u64).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
        let averaged: Vec<(f64, f64)> =
            by_n.into_iter().map(|(n, (sum, k))| (n as f64, sum / k as f64)).collect();
        match fit_loglog_slope(&averaged, range) {
            Ok(fit) => println!(
                "{key}  slope {:+.4}  intercept {:+.4}  r2 {:.4}  points {}",
                fit.slope, fit.intercept, fit.r_squared, fit.points_used
            ),
            Err(e) => println!("{key}  unfittable: {e}"),
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common } => {
            let spec = finalize(ExperimentSpec::synth(PathBuf::from("runs/synth")), &common)?;
            report(&harness::run_experiment(&spec)?);
        }
        Command::Logistic { common, data } => {
            let mut spec = ExperimentSpec::logistic(PathBuf::from("runs/logistic"), data);
            spec = finalize(spec, &common)?;
            report(&harness::run_experiment(&spec)?);
        }
        Command::Threshold { common } => {
            let spec =
                finalize(ExperimentSpec::threshold(PathBuf::from("runs/threshold")), &common)?;
            report(&harness::run_experiment(&spec)?);
        }
        Command::Saturate { common } => {
            let spec = finalize(ExperimentSpec::saturate(PathBuf::from("runs/saturate")), &common)?;
            report(&harness::run_experiment(&spec)?);
        }
        Command::Slopes { input, range, y_column } => {
            run_slopes(&input, range, y_column.as_deref())?;
        }
    }
    Ok(())
}
