//! End-to-end acceptance gates. Each criterion prints one PASS/FAIL line
//! with the measured quantities and elapsed time; the test fails if any
//! criterion fails, reprinting every line in the panic message.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to
//! watch progress. The heavier criteria parallelize across cores; wall
//! times quoted in the lines scale with the machine.

use std::time::Instant;

use rayon::prelude::*;

use asgd::decomposition::compute_terms;
use asgd::driver::{checkpoint_row, log_grid, run_trajectory, RunConfig, StepSchedule};
use asgd::harness::{self, fit_loglog_slope, AggregateRow, ExperimentSpec, FitRange};
use asgd::inference::SandwichOracle;
use asgd::linalg::{op_norm, Mat, SpdMatrix, SpectralMap};
use asgd::precond::{operator_factor, GainSchedule, InputMode, PrecondConfig, Rule};
use asgd::problems::{make_linear_problem, Regime};
use asgd::rng::SplitMix64;
use asgd::saturator::{eval_remainder_series, slope_grid, SaturatingSequences};

type Outcome = Result<String, String>;

fn schedule() -> StepSchedule {
    StepSchedule::new(0.2, 0.7).unwrap()
}

fn sa_config(rule: Rule) -> PrecondConfig {
    let mode = if rule == Rule::Identity { InputMode::Gradient } else { InputMode::Hessian };
    PrecondConfig::new(rule, mode, 0.5, GainSchedule::sa_shifted(1.0).unwrap())
        .with_ridge_before_map()
}

/// Criterion 1: the three-term decomposition reproduces the averaged error
/// to floating-point accuracy at every checkpoint of every rule.
fn decomposition_exactness() -> Outcome {
    let problem =
        make_linear_problem(5, Regime::InfoEquality, 1.0, 4242).map_err(|e| e.to_string())?;
    let h = problem.hessian();
    let x_star = problem.x_star();
    let grid = log_grid(10, 100_000, 5);
    let rules = [Rule::Identity, Rule::SaAdagrad, Rule::SaRmsprop, Rule::SaOns];
    let reps: u64 = 50;

    let items: Vec<(usize, u64)> =
        (0..rules.len()).flat_map(|mi| (0..reps).map(move |r| (mi, r))).collect();
    let worst: Result<Vec<f64>, String> = items
        .par_iter()
        .map(|&(mi, rep)| {
            let config = RunConfig::new(
                &problem,
                sa_config(rules[mi]),
                schedule(),
                100_000,
                grid.clone(),
                harness::seed_for(101, mi as u64, 0, 0, rep),
            );
            let record = run_trajectory(&config).map_err(|e| e.to_string())?;
            if let Some(a) = &record.aborted {
                return Err(format!("{} aborted at step {}", rules[mi].name(), a.step));
            }
            let mut max_rel = 0.0f64;
            for &n in &grid {
                let ck = checkpoint_row(&record, n).map_err(|e| e.to_string())?;
                let err_norm = ck
                    .x_bar
                    .iter()
                    .zip(x_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let terms = compute_terms(&record, h, n).map_err(|e| e.to_string())?;
                let rel = if err_norm > 0.0 { terms.identity_gap / err_norm } else { terms.identity_gap };
                max_rel = max_rel.max(rel);
            }
            Ok(max_rel)
        })
        .collect();
    let worst = worst?.into_iter().fold(0.0f64, f64::max);
    let detail = format!(
        "max relative identity gap {worst:.2e} over {} runs x {} checkpoints",
        items.len(),
        grid.len()
    );
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(format!("{detail}, above 1e-9"))
    }
}

/// Criterion 2: with clipped curvature drivers, SA-averaged preconditioners
/// stabilize at the unit rate; the identity rule has exactly zero increments.
fn stabilization_rate() -> Outcome {
    let problem =
        make_linear_problem(5, Regime::InfoEquality, 1.0, 4242).map_err(|e| e.to_string())?;
    let n_max = 100_000u64;
    let mut details = Vec::new();
    for rule in [Rule::SaAdagrad, Rule::SaRmsprop, Rule::SaOns] {
        let config = RunConfig::new(
            &problem,
            sa_config(rule).with_spectral_clip(0.05, 20.0),
            schedule(),
            n_max,
            vec![n_max],
            271_828 + rule.name().len() as u64,
        );
        let record = run_trajectory(&config).map_err(|e| e.to_string())?;
        let points: Vec<(f64, f64)> = record
            .probes
            .increment_points()
            .into_iter()
            .filter(|&(t, _)| (1000.0..=100_000.0).contains(&t))
            .collect();
        let fit = fit_loglog_slope(&points, FitRange::Full).map_err(|e| e.to_string())?;
        details.push(format!("{} {:+.3}", rule.name(), fit.slope));
        if (fit.slope + 1.0).abs() > 0.15 {
            return Err(format!(
                "{} increment slope {:+.4} outside -1.0 +/- 0.15",
                rule.name(),
                fit.slope
            ));
        }
    }

    let config = RunConfig::new(
        &problem,
        sa_config(Rule::Identity),
        schedule(),
        10_000,
        vec![10_000],
        271_828,
    );
    let record = run_trajectory(&config).map_err(|e| e.to_string())?;
    if record.probes.rows.is_empty() {
        return Err("identity run recorded no probe rows".into());
    }
    if record.probes.rows.iter().any(|r| r.increment_norm != 0.0) {
        return Err("identity rule produced a nonzero preconditioner increment".into());
    }
    Ok(format!("slopes {}; identity increments all zero", details.join(", ")))
}

/// Criterion 3: the adversarial saturating sequences hit their predicted
/// scaled-remainder rates, including exact criticality at beta = 0.85.
fn saturating_construction() -> Outcome {
    let grid = slope_grid(1000, 1_000_000, 30);
    let mut details = Vec::new();
    for beta in [0.6, 0.75, 0.85, 1.0] {
        let seq = SaturatingSequences::new(0.7, beta).map_err(|e| e.to_string())?;
        let splits = eval_remainder_series(&seq, &grid).map_err(|e| e.to_string())?;
        let points: Vec<(f64, f64)> = splits.iter().map(|s| (s.n as f64, s.scaled())).collect();
        let fit = fit_loglog_slope(&points, FitRange::Full).map_err(|e| e.to_string())?;
        let expected = (0.7 + 1.0) / 2.0 - beta;
        details.push(format!("beta {beta}: {:+.3} vs {expected:+.3}", fit.slope));
        if (fit.slope - expected).abs() > 0.05 {
            return Err(format!(
                "beta {beta}: slope {:+.4} differs from {expected:+.4} by more than 0.05",
                fit.slope
            ));
        }
    }
    Ok(details.join(", "))
}

struct SynthRun {
    _dir: tempfile::TempDir,
    aggregates: Vec<AggregateRow>,
    n_max: u64,
}

fn run_synth_experiment() -> Result<SynthRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ExperimentSpec::synth(dir.path().join("synth"));
    let summary = harness::run_experiment(&spec).map_err(|e| e.to_string())?;
    if !summary.aborts.is_empty() {
        return Err(format!("{} replications aborted", summary.aborts.len()));
    }
    Ok(SynthRun { _dir: dir, aggregates: summary.aggregates, n_max: spec.n_max })
}

/// Criterion 4: terminal coverage and NMSE sit in the CLT bands for all
/// four methods in both noise regimes.
fn clt_calibration(run: &SynthRun) -> Outcome {
    let mut details = Vec::new();
    for agg in run.aggregates.iter().filter(|a| a.n == run.n_max) {
        details.push(format!(
            "{}/{} cov {:.3} nmse {:.3}",
            agg.method, agg.regime, agg.coverage_mean, agg.nmse_mean
        ));
        if !(0.90..=0.97).contains(&agg.coverage_mean) {
            return Err(format!(
                "{} {} terminal coverage {:.4} outside [0.90, 0.97]",
                agg.method, agg.regime, agg.coverage_mean
            ));
        }
        if !(0.85..=1.35).contains(&agg.nmse_mean) {
            return Err(format!(
                "{} {} terminal NMSE {:.4} outside [0.85, 1.35]",
                agg.method, agg.regime, agg.nmse_mean
            ));
        }
    }
    if details.len() != 8 {
        return Err(format!("expected 8 terminal cells, found {}", details.len()));
    }
    Ok(details.join("; "))
}

fn remainder_slopes(
    aggregates: &[AggregateRow],
    range: FitRange,
) -> Result<Vec<(String, f64, f64)>, String> {
    let mut keys: Vec<(String, String)> = aggregates
        .iter()
        .map(|a| (a.method.clone(), a.regime.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (method, regime) in keys {
        let points: Vec<(f64, f64)> = aggregates
            .iter()
            .filter(|a| a.method == method && a.regime == regime)
            .map(|a| (a.n as f64, a.sqrt_n_rn_mean))
            .collect();
        let fit = fit_loglog_slope(&points, range).map_err(|e| e.to_string())?;
        let terminal = points.last().map(|p| p.1).unwrap_or(f64::NAN);
        out.push((format!("{method}/{regime}"), fit.slope, terminal));
    }
    Ok(out)
}

/// Criterion 5: the replication-mean scaled remainder decays with a
/// log-log slope in [-0.45, -0.15] for every method and regime.
fn scaled_remainder_decay(run: &SynthRun) -> Outcome {
    let slopes = remainder_slopes(&run.aggregates, FitRange::Full)?;
    let mut details = Vec::new();
    for (cell, slope, _) in &slopes {
        details.push(format!("{cell} {slope:+.3}"));
        if !(-0.45..=-0.15).contains(slope) {
            return Err(format!("{cell} slope {slope:+.4} outside [-0.45, -0.15]"));
        }
    }
    Ok(details.join(", "))
}

/// Criterion 6: above the step-size threshold, the SA rule keeps a decaying
/// remainder while constant-EMA rules flatten out and lose by a factor >= 2.
fn threshold_violation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ExperimentSpec::threshold(dir.path().join("threshold"));
    let summary = harness::run_experiment(&spec).map_err(|e| e.to_string())?;
    if !summary.aborts.is_empty() {
        return Err(format!("{} replications aborted", summary.aborts.len()));
    }
    let slopes = remainder_slopes(&summary.aggregates, FitRange::SecondHalf)?;
    let find = |name: &str| -> Result<(f64, f64), String> {
        slopes
            .iter()
            .find(|(cell, _, _)| cell.starts_with(name))
            .map(|&(_, s, t)| (s, t))
            .ok_or_else(|| format!("method {name} missing from aggregates"))
    };
    let (sa_slope, sa_term) = find("sa_rmsprop")?;
    let (ema5_slope, _) = find("ema_rmsprop_0.5")?;
    let (ema999_slope, ema999_term) = find("ema_rmsprop_0.999")?;
    let ratio = ema999_term / sa_term;
    let detail = format!(
        "second-half slopes sa {sa_slope:+.3}, ema(0.5) {ema5_slope:+.3}, ema(0.999) {ema999_slope:+.3}; terminal ratio {ratio:.2}"
    );
    if sa_slope > -0.12 {
        return Err(format!("{detail}; SA slope should be <= -0.12"));
    }
    if ema5_slope < -0.08 || ema999_slope < -0.08 {
        return Err(format!("{detail}; EMA slopes should be >= -0.08"));
    }
    if ratio < 2.0 {
        return Err(format!("{detail}; ratio should be >= 2"));
    }
    Ok(detail)
}

/// Random SPD with a known spectrum: a diagonal conjugated by a string of
/// Givens rotations.
fn rotated_diag(rng: &mut SplitMix64, eigs: &[f64]) -> Mat {
    let d = eigs.len();
    let mut m = Mat::diag(eigs);
    for _ in 0..4 * d {
        let p = rng.next_index(d);
        let mut q = rng.next_index(d);
        if p == q {
            q = (q + 1) % d;
        }
        let angle = 2.0 * std::f64::consts::PI * rng.next_f64();
        let (c, s) = (angle.cos(), angle.sin());
        for k in 0..d {
            let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
            m[(k, p)] = c * mkp - s * mkq;
            m[(k, q)] = s * mkp + c * mkq;
        }
        for k in 0..d {
            let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
            m[(p, k)] = c * mpk - s * mqk;
            m[(q, k)] = s * mpk + c * mqk;
        }
    }
    // Rounding in the rotations leaves a tiny asymmetry; average it away.
    Mat::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Criterion 7: closed-form operator factors (1 for SA-ONS, inverse minimum
/// eigenvalue for identity) and their empirical counterparts at n_max.
fn operator_factors() -> Outcome {
    let mut rng = SplitMix64::new(1_618_033);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 2 + rng.next_index(5);
        let eigs: Vec<f64> = (0..d).map(|_| 0.2 + 4.8 * rng.next_f64()).collect();
        let lambda_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let h = SpdMatrix::new(rotated_diag(&mut rng, &eigs)).map_err(|e| e.to_string())?;
        let s = h.clone();
        let ons = operator_factor(Rule::SaOns, &h, &s, 0.5).map_err(|e| e.to_string())?;
        if ons != 1.0 {
            return Err(format!("SA-ONS factor {ons} != 1"));
        }
        let id = operator_factor(Rule::Identity, &h, &s, 0.5).map_err(|e| e.to_string())?;
        worst = worst.max((id * lambda_min - 1.0).abs());
    }
    if worst > 1e-12 {
        return Err(format!(
            "identity factor x lambda_min deviates from 1 by {worst:.2e} (> 1e-12)"
        ));
    }

    let problem =
        make_linear_problem(5, Regime::InfoEquality, 1.0, 4242).map_err(|e| e.to_string())?;
    let h = problem.hessian();

    // Flag-off SA-ONS: the accumulator averages raw curvature, so the
    // effective inverse drift contracts to the identity.
    let ons_config = PrecondConfig::new(
        Rule::SaOns,
        InputMode::Hessian,
        0.5,
        GainSchedule::sa_shifted(1.0).unwrap(),
    );
    let config =
        RunConfig::new(&problem, ons_config, schedule(), 100_000, vec![100_000], 31_415);
    let record = run_trajectory(&config).map_err(|e| e.to_string())?;
    let ons_norm = record.terminal_drift_norm;
    if (ons_norm - 1.0).abs() > 0.10 {
        return Err(format!("terminal SA-ONS drift norm {ons_norm:.4} not within 10% of 1"));
    }

    let config =
        RunConfig::new(&problem, sa_config(Rule::Identity), schedule(), 5000, vec![5000], 31_415);
    let record = run_trajectory(&config).map_err(|e| e.to_string())?;
    let expected = op_norm(&h.spectrum().recompose(|x| SpectralMap::Inverse.scalar(x)));
    if record.terminal_drift_norm != expected {
        return Err(format!(
            "identity drift norm {} != ||H^-1||_op {expected}",
            record.terminal_drift_norm
        ));
    }
    Ok(format!(
        "closed-form deviation {worst:.2e}; terminal SA-ONS norm {ons_norm:.4}; identity norm exact"
    ))
}

/// Criterion 8: the empirical covariance of the scaled martingale term
/// matches the sandwich matrix.
fn martingale_covariance() -> Outcome {
    let problem =
        make_linear_problem(2, Regime::InfoEquality, 1.0, 99).map_err(|e| e.to_string())?;
    let h = problem.hessian();
    let n = 10_000u64;
    let reps = 500u64;
    let draws: Result<Vec<Vec<f64>>, String> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let config = RunConfig::new(
                &problem,
                sa_config(Rule::SaRmsprop),
                schedule(),
                n,
                vec![n],
                harness::seed_for(808, 0, 0, 0, rep),
            );
            let record = run_trajectory(&config).map_err(|e| e.to_string())?;
            let terms = compute_terms(&record, h, n).map_err(|e| e.to_string())?;
            let root_n = (n as f64).sqrt();
            Ok(terms.xi_term.iter().map(|v| v * root_n).collect())
        })
        .collect();
    let draws = draws?;

    let d = problem.dim();
    let k = draws.len() as f64;
    let mut mean = vec![0.0; d];
    for v in &draws {
        for i in 0..d {
            mean[i] += v[i] / k;
        }
    }
    let mut cov = Mat::zeros(d, d);
    for v in &draws {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (v[i] - mean[i]) * (v[j] - mean[j]) / (k - 1.0);
            }
        }
    }
    let oracle = SandwichOracle::new(h, problem.noise_cov()).map_err(|e| e.to_string())?;
    let target = oracle.v().mat();
    let rel = cov.sub(target).frobenius_norm() / target.frobenius_norm();
    let detail = format!("relative Frobenius error {rel:.4} over {reps} replications");
    if rel <= 0.15 {
        Ok(detail)
    } else {
        Err(format!("{detail}, above 0.15"))
    }
}

/// Criterion 9: on the real-data logistic stream, every method's intervals
/// calibrate at the terminal sample size.
fn logistic_real_data() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ExperimentSpec::logistic(dir.path().join("logistic"), None);
    let summary = harness::run_experiment(&spec).map_err(|e| e.to_string())?;
    if !summary.aborts.is_empty() {
        return Err(format!("{} replications aborted", summary.aborts.len()));
    }
    let mut details = Vec::new();
    let terminal: Vec<&AggregateRow> =
        summary.aggregates.iter().filter(|a| a.n == spec.n_max).collect();
    if terminal.len() != 4 {
        return Err(format!("expected 4 terminal cells, found {}", terminal.len()));
    }
    for agg in terminal {
        details.push(format!(
            "{} cov {:.3} nmse {:.3}",
            agg.method, agg.coverage_mean, agg.nmse_mean
        ));
        if agg.coverage_mean < 0.90 {
            return Err(format!(
                "{} terminal coverage {:.4} below 0.90",
                agg.method, agg.coverage_mean
            ));
        }
        if !(0.8..=1.4).contains(&agg.nmse_mean) {
            return Err(format!(
                "{} terminal NMSE {:.4} outside [0.8, 1.4]",
                agg.method, agg.nmse_mean
            ));
        }
    }
    Ok(details.join("; "))
}

#[test]
fn acceptance_criteria() {
    let mut lines: Vec<String> = Vec::new();
    let mut all_pass = true;
    let mut record = |name: &str, outcome: Outcome, started: Instant| {
        let elapsed = started.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("{name}: PASS ({detail}) [{elapsed:.1}s]"),
            Err(reason) => {
                all_pass = false;
                format!("{name}: FAIL ({reason}) [{elapsed:.1}s]")
            }
        };
        println!("{line}");
        lines.push(line);
    };

    let t = Instant::now();
    record("criterion 1 decomposition exactness", decomposition_exactness(), t);
    let t = Instant::now();
    record("criterion 2 stabilization rate", stabilization_rate(), t);
    let t = Instant::now();
    record("criterion 3 saturating construction", saturating_construction(), t);

    let t = Instant::now();
    let synth = run_synth_experiment();
    match &synth {
        Ok(run) => {
            record("criterion 4 CLT calibration", clt_calibration(run), t);
            let t5 = Instant::now();
            record("criterion 5 scaled-remainder decay", scaled_remainder_decay(run), t5);
        }
        Err(e) => {
            record("criterion 4 CLT calibration", Err(e.clone()), t);
            record("criterion 5 scaled-remainder decay", Err(e.clone()), t);
        }
    }

    let t = Instant::now();
    record("criterion 6 threshold violation", threshold_violation(), t);
    let t = Instant::now();
    record("criterion 7 operator factors", operator_factors(), t);
    let t = Instant::now();
    record("criterion 8 martingale covariance", martingale_covariance(), t);
    let t = Instant::now();
    record("criterion 9 logistic real data", logistic_real_data(), t);

    assert!(all_pass, "acceptance failures:\n{}", lines.join("\n"));
}
