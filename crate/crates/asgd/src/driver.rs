//! Preconditioned SGD recursion with Polyak–Ruppert averaging.
//!
//! `run_trajectory` executes x_{t+1} = x_t − η_t P_t g_t and keeps, in
//! running form, every sum the error decomposition needs: the running mean,
//! the noise and Taylor-residual sums, and the summation-by-parts pieces of
//! the dynamic remainder. Memory stays O(d² + checkpoints) regardless of
//! trajectory length.
//!
//! Step order is load-bearing. At step t the preconditioner is read before
//! the sample can influence it (predictability), the A_t = η_t⁻¹(P_tH)⁻¹
//! actions are taken against the accumulator states from steps t−1 and t−2,
//! and the accumulator ingests the step-t driver only after the iterate and
//! all sums are updated.

use crate::precond::{
    DriverInput, InputRequest, PrecondConfig, PrecondError, PreconditionerState, ProbeCadence,
    StabilizationProbe,
};
use crate::problems::StreamProblem;
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("step schedule needs eta0 > 0 and alpha in (1/2, 1); got eta0 = {eta0}, alpha = {alpha}")]
    BadSchedule { eta0: f64, alpha: f64 },
    #[error("checkpoint grid must be strictly increasing within [1, n_max]: {reason}")]
    BadCheckpoints { reason: String },
    #[error("checkpoint {n} was not recorded")]
    MissingCheckpoint { n: u64 },
    #[error(transparent)]
    Precond(#[from] PrecondError),
}

/// Polynomially decaying step size η_t = η₀ t^{−α}.
#[derive(Debug, Clone, Copy)]
pub struct StepSchedule {
    eta0: f64,
    alpha: f64,
}

impl StepSchedule {
    pub fn new(eta0: f64, alpha: f64) -> Result<Self, DriverError> {
        if !(eta0 > 0.0 && eta0.is_finite() && alpha > 0.5 && alpha < 1.0) {
            return Err(DriverError::BadSchedule { eta0, alpha });
        }
        Ok(StepSchedule { eta0, alpha })
    }

    pub fn eta(&self, t: u64) -> f64 {
        self.eta0 * (t as f64).powf(-self.alpha)
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Everything one replication needs; the seed fully determines the result.
#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub problem: &'a StreamProblem,
    pub precond: PrecondConfig,
    pub schedule: StepSchedule,
    pub n_max: u64,
    /// Sorted strictly-increasing checkpoint steps within [1, n_max].
    pub checkpoints: Vec<u64>,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Store the full iterate history (debug-scale runs only).
    pub capture_history: bool,
    /// Offset of x_1 from x*; defaults to 1/√d in every coordinate.
    pub initial_offset: Option<Vec<f64>>,
}

impl<'a> RunConfig<'a> {
    pub fn new(
        problem: &'a StreamProblem,
        precond: PrecondConfig,
        schedule: StepSchedule,
        n_max: u64,
        checkpoints: Vec<u64>,
        seed: u64,
    ) -> Self {
        RunConfig {
            problem,
            precond,
            schedule,
            n_max,
            checkpoints,
            clip_norm: None,
            seed,
            capture_history: false,
            initial_offset: None,
        }
    }

    fn validate(&self) -> Result<(), DriverError> {
        let grid = &self.checkpoints;
        if let Some(&first) = grid.first() {
            if first == 0 {
                return Err(DriverError::BadCheckpoints { reason: "contains 0".into() });
            }
        }
        if let Some(&last) = grid.last() {
            if last > self.n_max {
                return Err(DriverError::BadCheckpoints {
                    reason: format!("{last} exceeds n_max = {}", self.n_max),
                });
            }
        }
        for w in grid.windows(2) {
            if w[0] >= w[1] {
                return Err(DriverError::BadCheckpoints {
                    reason: format!("{} then {}", w[0], w[1]),
                });
            }
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 || c.is_nan() {
                return Err(DriverError::BadCheckpoints {
                    reason: format!("clip norm {c} must be positive"),
                });
            }
        }
        Ok(())
    }
}

/// Compensated elementwise accumulator; keeps long sums exact enough for the
/// 1e-9 identity checks at n = 10⁶.
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub fn zeros(dim: usize) -> Self {
        KahanVec { sum: vec![0.0; dim], comp: vec![0.0; dim] }
    }

    pub fn add(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.sum.len());
        for ((s, c), &x) in self.sum.iter_mut().zip(&mut self.comp).zip(v) {
            let y = x - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.sum.clone()
    }
}

/// Snapshot of every running sum at one checkpoint step n.
#[derive(Debug, Clone)]
pub struct CheckpointRow {
    pub n: u64,
    /// Iterate x_n (before the step-n update).
    pub x_n: Vec<f64>,
    /// Running average of x_1..x_n.
    pub x_bar: Vec<f64>,
    /// Σ_{t≤n} ξ_t with ξ_t = g_t − ∇F(x_t) for the applied gradient.
    pub sum_xi: Vec<f64>,
    /// Σ_{t≤n} u_t with u_t = ∇F(x_t) − HΔ_t.
    pub sum_u: Vec<f64>,
    /// A_1 Δ_1
    pub boundary_first: Vec<f64>,
    /// A_n Δ_{n+1}
    pub boundary_last: Vec<f64>,
    /// Σ_{t=2}^n (A_t − A_{t−1}) Δ_t
    pub abel_sum: Vec<f64>,
    pub clipped_steps: u64,
    pub clipped_after_100: u64,
}

#[derive(Debug, Clone)]
pub struct AbortInfo {
    pub step: u64,
    pub reason: String,
}

/// Result of one replication.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub dim: usize,
    pub seed: u64,
    pub n_max: u64,
    pub x_star: Vec<f64>,
    pub checkpoints: Vec<CheckpointRow>,
    pub probes: StabilizationProbe,
    /// ‖M_t‖_op at the last executed step.
    pub terminal_drift_norm: f64,
    pub clipped_steps: u64,
    pub clipped_after_100: u64,
    pub aborted: Option<AbortInfo>,
    /// x_1..x_{n_max} when capture_history is set.
    pub history: Option<Vec<Vec<f64>>>,
}

/// Runs the full recursion for one seed.
pub fn run_trajectory(config: &RunConfig) -> Result<TrajectoryRecord, DriverError> {
    config.validate()?;
    let problem = config.problem;
    let d = problem.dim();
    let h = problem.hessian();
    let x_star = problem.x_star();
    let mut rng = SplitMix64::new(config.seed);
    let mut state = PreconditionerState::new(config.precond.clone(), d)?;

    let default_offset = 1.0 / (d as f64).sqrt();
    let mut x: Vec<f64> = match &config.initial_offset {
        Some(v) => x_star.iter().zip(v).map(|(s, o)| s + o).collect(),
        None => x_star.iter().map(|s| s + default_offset).collect(),
    };

    let mut sum_x = KahanVec::zeros(d);
    let mut sum_xi = KahanVec::zeros(d);
    let mut sum_u = KahanVec::zeros(d);
    let mut abel = KahanVec::zeros(d);
    let mut boundary_first = vec![0.0; d];
    let mut probes = StabilizationProbe::new();
    let mut cadence = ProbeCadence::new();
    let mut rows: Vec<CheckpointRow> = Vec::with_capacity(config.checkpoints.len());
    let mut history = if config.capture_history { Some(Vec::new()) } else { None };
    let mut next_checkpoint = 0usize;
    let mut clipped_steps = 0u64;
    let mut clipped_after_100 = 0u64;
    let mut terminal_drift_norm = 0.0;
    let mut aborted = None;

    // H⁻¹ action from the cached spectrum; A_t v = η_t⁻¹ H⁻¹ P_t⁻¹ v.
    let h_inv_apply = |v: &[f64]| h.spectrum().apply(|lam| 1.0 / lam, v);

    'steps: for t in 1..=config.n_max {
        let eta_t = config.schedule.eta(t);
        sum_x.add(&x);
        if let Some(hist) = history.as_mut() {
            hist.push(x.clone());
        }

        let sample = problem.draw_sample(&mut rng);
        let mut g = sample.gradient_at(&x);
        let raw_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if let Some(c) = config.clip_norm {
            if raw_norm > c {
                let shrink = c / raw_norm;
                for gi in &mut g {
                    *gi *= shrink;
                }
                clipped_steps += 1;
                if t > 100 {
                    clipped_after_100 += 1;
                }
            }
        }

        let mean_grad = problem.mean_gradient(&x);
        let delta: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let h_delta = h.matvec(&delta);
        let xi: Vec<f64> = g.iter().zip(&mean_grad).map(|(a, b)| a - b).collect();
        let u: Vec<f64> = mean_grad.iter().zip(&h_delta).map(|(a, b)| a - b).collect();
        sum_xi.add(&xi);
        sum_u.add(&u);

        // Driver payload for the step-t accumulator update, evaluated at x_t
        // but fed only after the iterate moves.
        enum Payload {
            Nothing,
            Gradient,
            Matrix(crate::linalg::Mat),
            Diag(Vec<f64>),
        }
        let payload = match state.required_input() {
            InputRequest::Nothing => Payload::Nothing,
            InputRequest::Gradient => Payload::Gradient,
            InputRequest::CurvatureMatrix => Payload::Matrix(sample.hessian_estimate_at(&x)),
            InputRequest::CurvatureDiag => Payload::Diag(sample.hessian_diag_at(&x)),
        };

        // Summation-by-parts pieces: A_t Δ_t at t = 1 is the left boundary;
        // afterwards each step contributes (A_t − A_{t−1}) Δ_t.
        let a_cur = {
            let mut v = h_inv_apply(&state.inverse_apply(&delta));
            let inv_eta = 1.0 / eta_t;
            for vi in &mut v {
                *vi *= inv_eta;
            }
            v
        };
        if t == 1 {
            boundary_first = a_cur.clone();
        } else {
            let eta_prev = config.schedule.eta(t - 1);
            let mut a_prev = h_inv_apply(&state.previous_inverse_apply(&delta));
            let inv_eta = 1.0 / eta_prev;
            for vi in &mut a_prev {
                *vi *= inv_eta;
            }
            let inc: Vec<f64> = a_cur.iter().zip(&a_prev).map(|(a, b)| a - b).collect();
            abel.add(&inc);
        }

        let due = t >= 2 && cadence.should_probe(t);
        if due || t == config.n_max {
            if t >= 2 {
                let row = state.probe_row(h, t, eta_t, config.schedule.eta(t - 1))?;
                terminal_drift_norm = row.drift_norm;
                probes.push(row);
            } else {
                terminal_drift_norm = crate::linalg::op_norm(&state.effective_inverse_drift(h)?);
            }
        }

        let dir = state.apply_direction(&g);
        for i in 0..d {
            x[i] -= eta_t * dir[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            aborted = Some(AbortInfo { step: t, reason: "non-finite iterate".into() });
            break 'steps;
        }

        if next_checkpoint < config.checkpoints.len() && config.checkpoints[next_checkpoint] == t {
            next_checkpoint += 1;
            let delta_next: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
            let mut boundary_last = h_inv_apply(&state.inverse_apply(&delta_next));
            let inv_eta = 1.0 / eta_t;
            for vi in &mut boundary_last {
                *vi *= inv_eta;
            }
            let inv_n = 1.0 / t as f64;
            let x_bar: Vec<f64> = sum_x.value().iter().map(|s| s * inv_n).collect();
            rows.push(CheckpointRow {
                n: t,
                x_n: delta.iter().zip(x_star).map(|(dl, s)| dl + s).collect(),
                x_bar,
                sum_xi: sum_xi.value(),
                sum_u: sum_u.value(),
                boundary_first: boundary_first.clone(),
                boundary_last,
                abel_sum: abel.value(),
                clipped_steps,
                clipped_after_100,
            });
        }

        match payload {
            Payload::Nothing => state.precond_update(DriverInput::Nothing)?,
            Payload::Gradient => state.precond_update(DriverInput::Gradient(&g))?,
            Payload::Matrix(m) => state.precond_update(DriverInput::CurvatureMatrix(&m))?,
            Payload::Diag(v) => state.precond_update(DriverInput::CurvatureDiag(&v))?,
        }
    }

    Ok(TrajectoryRecord {
        dim: d,
        seed: config.seed,
        n_max: config.n_max,
        x_star: x_star.to_vec(),
        checkpoints: rows,
        probes,
        terminal_drift_norm,
        clipped_steps,
        clipped_after_100,
        aborted,
        history,
    })
}

/// Log-spaced integer grid from `lo` to `hi` inclusive, about `per_decade`
/// points per decade, strictly increasing.
pub fn log_grid(lo: u64, hi: u64, per_decade: usize) -> Vec<u64> {
    assert!(lo >= 1 && hi >= lo && per_decade >= 1);
    let ratio = 10f64.powf(1.0 / per_decade as f64);
    let mut out = Vec::new();
    let mut x = lo as f64;
    loop {
        let v = (x.round() as u64).max(out.last().map_or(lo, |&p| p + 1));
        if v >= hi {
            break;
        }
        out.push(v);
        x *= ratio;
    }
    out.push(hi);
    out
}

/// x̄_n − x* at a recorded checkpoint.
pub fn averaged_error(record: &TrajectoryRecord, n: u64) -> Result<Vec<f64>, DriverError> {
    let row = checkpoint_row(record, n)?;
    Ok(row.x_bar.iter().zip(&record.x_star).map(|(a, b)| a - b).collect())
}

/// Looks up the row for checkpoint n.
pub fn checkpoint_row(record: &TrajectoryRecord, n: u64) -> Result<&CheckpointRow, DriverError> {
    record
        .checkpoints
        .binary_search_by_key(&n, |row| row.n)
        .map(|idx| &record.checkpoints[idx])
        .map_err(|_| DriverError::MissingCheckpoint { n })
}
