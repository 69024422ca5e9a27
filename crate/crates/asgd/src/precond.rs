//! Preconditioner rules behind one interface.
//!
//! Every rule keeps a running accumulator (full matrix or coordinatewise
//! vector), exposes the step matrix P_t built from the accumulator state
//! *before* the current sample arrives, and can report the effective inverse
//! drift M_t = (P_t H)⁻¹ whose one-step increments measure stabilization.
//!
//! The accumulator recursion is a gain-weighted running average
//! `A_t = (1 − ρ_t) A_{t−1} + ρ_t D_t`. Stochastic-approximation gains
//! (ρ_t = c/t or c/(t+1)) make the average settle at rate 1/t; a constant
//! gain keeps it fluctuating, which is exactly the non-stabilizing baseline
//! the diagnostics are designed to expose.

use crate::linalg::{
    loewner_leq, op_norm, spectral_map, LinalgError, Mat, SpdMatrix, SpectralMap,
};
use thiserror::Error;

/// Relative asymmetry ceiling for externally supplied curvature drivers.
pub const DRIVER_SYMMETRY_TOL: f64 = 1e-8;
/// Slack on the ε-floor check; breaches beyond this indicate a real bug,
/// not rounding.
const FLOOR_SLACK: f64 = 1e-6;
/// Per-step probing stops and log-spaced probing starts after this step.
pub const PROBE_DENSE_LIMIT: u64 = 10_000;
/// Ratio between consecutive log-spaced probe steps.
pub const PROBE_LOG_RATIO: f64 = 1.02;

#[derive(Debug, Error)]
pub enum PrecondError {
    #[error("gain constant c = {c} outside (0, 1]")]
    BadGainConstant { c: f64 },
    #[error("EMA weight rho = {rho} outside (0, 1)")]
    BadEmaWeight { rho: f64 },
    #[error("epsilon must be positive, got {eps}")]
    BadEpsilon { eps: f64 },
    #[error("spectral clip band [{lo}, {hi}] is not a positive interval")]
    BadClipBand { lo: f64, hi: f64 },
    #[error("curvature driver asymmetry {rel:.3e} exceeds {DRIVER_SYMMETRY_TOL:.0e}")]
    AsymmetricDriver { rel: f64 },
    #[error("driver input does not match the rule; expected {expected}")]
    WrongDriver { expected: &'static str },
    #[error("accumulator fell below its floor {floor}: min eigenvalue {min_eig}")]
    FloorBreach { floor: f64, min_eig: f64 },
    #[error("{rule} has no asymptotic factor")]
    NoAsymptoticFactor { rule: &'static str },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Preconditioner selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Identity,
    SaAdagrad,
    SaRmsprop,
    SaOns,
    EmaRmsprop,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Identity => "identity",
            Rule::SaAdagrad => "sa_adagrad",
            Rule::SaRmsprop => "sa_rmsprop",
            Rule::SaOns => "sa_ons",
            Rule::EmaRmsprop => "ema_rmsprop",
        }
    }

    /// Diagonal rules keep a coordinatewise accumulator.
    fn is_diagonal(self) -> bool {
        matches!(self, Rule::SaRmsprop | Rule::EmaRmsprop)
    }

    /// Scalar map turning the accumulator into P_t.
    fn step_map(self) -> Option<SpectralMap> {
        match self {
            Rule::Identity => None,
            Rule::SaOns => Some(SpectralMap::Inverse),
            _ => Some(SpectralMap::InverseSqrt),
        }
    }

    /// Whether the ε floor rides inside the driver (the running average then
    /// preserves it exactly). ONS drivers are raw curvature estimates.
    fn embeds_epsilon(self) -> bool {
        !matches!(self, Rule::Identity | Rule::SaOns)
    }
}

impl std::str::FromStr for Rule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Rule::Identity),
            "sa_adagrad" => Ok(Rule::SaAdagrad),
            "sa_rmsprop" => Ok(Rule::SaRmsprop),
            "sa_ons" => Ok(Rule::SaOns),
            "ema_rmsprop" => Ok(Rule::EmaRmsprop),
            other => Err(format!("unknown preconditioner rule '{other}'")),
        }
    }
}

/// What drives the accumulator: squared gradients or Hessian estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Gradient,
    Hessian,
}

impl std::str::FromStr for InputMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradient" => Ok(InputMode::Gradient),
            "hessian" => Ok(InputMode::Hessian),
            other => Err(format!("unknown input mode '{other}'")),
        }
    }
}

/// Gain sequence ρ_t for the accumulator running average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainSchedule {
    /// ρ_t = c/t
    SaOverT { c: f64 },
    /// ρ_t = c/(t+1)
    SaShifted { c: f64 },
    /// ρ_t ≡ rho
    Constant { rho: f64 },
}

impl GainSchedule {
    pub fn sa_over_t(c: f64) -> Result<Self, PrecondError> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(PrecondError::BadGainConstant { c });
        }
        Ok(GainSchedule::SaOverT { c })
    }

    pub fn sa_shifted(c: f64) -> Result<Self, PrecondError> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(PrecondError::BadGainConstant { c });
        }
        Ok(GainSchedule::SaShifted { c })
    }

    pub fn constant(rho: f64) -> Result<Self, PrecondError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(PrecondError::BadEmaWeight { rho });
        }
        Ok(GainSchedule::Constant { rho })
    }

    /// Gain applied by the t-th update, t ≥ 1.
    pub fn gain(self, t: u64) -> f64 {
        match self {
            GainSchedule::SaOverT { c } => c / t as f64,
            GainSchedule::SaShifted { c } => c / (t + 1) as f64,
            GainSchedule::Constant { rho } => rho,
        }
    }

    fn validate(self) -> Result<(), PrecondError> {
        match self {
            GainSchedule::SaOverT { c } | GainSchedule::SaShifted { c } => {
                GainSchedule::sa_over_t(c).map(|_| ())
            }
            GainSchedule::Constant { rho } => GainSchedule::constant(rho).map(|_| ()),
        }
    }
}

/// Full preconditioner configuration.
///
/// `ridge_before_map` switches the ε placement: off, the floor rides inside
/// each driver (`g gᵀ + εI`); on, the accumulator averages raw drivers and ε
/// is added just before the spectral map, the "constant ridge before
/// inversion" convention. For the square-root rules the two agree exactly;
/// for ONS only the second applies a persistent ridge.
#[derive(Debug, Clone)]
pub struct PrecondConfig {
    pub rule: Rule,
    pub input_mode: InputMode,
    pub epsilon: f64,
    pub schedule: GainSchedule,
    pub ridge_before_map: bool,
    /// Clamp curvature drivers' spectra into [lo, hi] before averaging.
    pub spectral_clip: Option<(f64, f64)>,
}

impl PrecondConfig {
    pub fn new(
        rule: Rule,
        input_mode: InputMode,
        epsilon: f64,
        schedule: GainSchedule,
    ) -> Self {
        PrecondConfig { rule, input_mode, epsilon, schedule, ridge_before_map: false, spectral_clip: None }
    }

    pub fn with_ridge_before_map(mut self) -> Self {
        self.ridge_before_map = true;
        self
    }

    pub fn with_spectral_clip(mut self, lo: f64, hi: f64) -> Self {
        self.spectral_clip = Some((lo, hi));
        self
    }

    fn validate(&self) -> Result<(), PrecondError> {
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(PrecondError::BadEpsilon { eps: self.epsilon });
        }
        self.schedule.validate()?;
        if let Some((lo, hi)) = self.spectral_clip {
            if !(lo > 0.0 && lo <= hi) {
                return Err(PrecondError::BadClipBand { lo, hi });
            }
        }
        Ok(())
    }
}

/// Driver payload the caller must supply, determined by `required_input`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRequest {
    Nothing,
    Gradient,
    CurvatureMatrix,
    CurvatureDiag,
}

impl InputRequest {
    fn expected(self) -> &'static str {
        match self {
            InputRequest::Nothing => "no driver",
            InputRequest::Gradient => "a gradient vector",
            InputRequest::CurvatureMatrix => "a full curvature matrix",
            InputRequest::CurvatureDiag => "a curvature diagonal",
        }
    }
}

/// One step's driver input.
#[derive(Debug, Clone, Copy)]
pub enum DriverInput<'a> {
    Nothing,
    Gradient(&'a [f64]),
    CurvatureMatrix(&'a Mat),
    CurvatureDiag(&'a [f64]),
}

/// Accumulator snapshot with the factorization needed to act with P or P⁻¹.
#[derive(Debug, Clone)]
enum Acc {
    Identity,
    Full {
        raw: Mat,
        /// raw (+ εI when ridged); carries the cached spectrum.
        eff: SpdMatrix,
    },
    Diag {
        raw: Vec<f64>,
        eff: Vec<f64>,
    },
}

/// Preconditioner with its accumulator history.
///
/// `cur` is the state after all updates so far and defines the *next* step's
/// P_t; `prev` is one update older so probes can form M_t − M_{t−1}.
#[derive(Debug, Clone)]
pub struct PreconditionerState {
    config: PrecondConfig,
    dim: usize,
    t: u64,
    cur: Acc,
    prev: Acc,
}

impl PreconditionerState {
    pub fn new(config: PrecondConfig, dim: usize) -> Result<Self, PrecondError> {
        config.validate()?;
        if dim == 0 {
            return Err(PrecondError::Linalg(LinalgError::ZeroDim));
        }
        let eps = config.epsilon;
        let init = if config.ridge_before_map { 0.0 } else { eps };
        let cur = match config.rule {
            Rule::Identity => Acc::Identity,
            r if r.is_diagonal() => {
                let raw = vec![init; dim];
                let eff = vec![init + if config.ridge_before_map { eps } else { 0.0 }; dim];
                Acc::Diag { raw, eff }
            }
            _ => {
                let raw = Mat::identity(dim).scale(init);
                let eff = SpdMatrix::new(effective_mat(&raw, &config))?;
                Acc::Full { raw, eff }
            }
        };
        let prev = cur.clone();
        Ok(PreconditionerState { config, dim, t: 0, cur, prev })
    }

    pub fn config(&self) -> &PrecondConfig {
        &self.config
    }

    pub fn rule(&self) -> Rule {
        self.config.rule
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// What `precond_update` needs for this rule and input mode.
    pub fn required_input(&self) -> InputRequest {
        match (self.config.rule, self.config.input_mode) {
            (Rule::Identity, _) => InputRequest::Nothing,
            (r, InputMode::Gradient) if r.is_diagonal() => InputRequest::Gradient,
            (_, InputMode::Gradient) => InputRequest::Gradient,
            (r, InputMode::Hessian) if r.is_diagonal() => InputRequest::CurvatureDiag,
            (_, InputMode::Hessian) => InputRequest::CurvatureMatrix,
        }
    }

    /// The step matrix P_t, built solely from past updates.
    pub fn precond_apply(&self) -> Result<SpdMatrix, PrecondError> {
        match (&self.cur, self.config.rule.step_map()) {
            (Acc::Identity, _) | (_, None) => Ok(SpdMatrix::identity(self.dim)),
            (Acc::Full { eff, .. }, Some(map)) => Ok(spectral_map(eff, map)?),
            (Acc::Diag { eff, .. }, Some(map)) => {
                let p: Vec<f64> = eff.iter().map(|&v| map.scalar(v)).collect();
                Ok(SpdMatrix::new(Mat::diag(&p))?)
            }
        }
    }

    /// P_t · g without materializing P_t.
    pub fn apply_direction(&self, g: &[f64]) -> Vec<f64> {
        match (&self.cur, self.config.rule.step_map()) {
            (Acc::Identity, _) | (_, None) => g.to_vec(),
            (Acc::Full { eff, .. }, Some(map)) => eff.spectrum().apply(|x| map.scalar(x), g),
            (Acc::Diag { eff, .. }, Some(map)) => {
                g.iter().zip(eff).map(|(gi, &v)| gi * map.scalar(v)).collect()
            }
        }
    }

    /// Folds one step's driver into the accumulator with gain ρ_{t+1}.
    pub fn precond_update(&mut self, input: DriverInput<'_>) -> Result<(), PrecondError> {
        let expected = self.required_input();
        let t_next = self.t + 1;
        let rho = self.config.schedule.gain(t_next);
        let eps = self.config.epsilon;
        let embed = if self.config.rule.embeds_epsilon() && !self.config.ridge_before_map {
            eps
        } else {
            0.0
        };

        let next = match (&self.cur, input) {
            (Acc::Identity, DriverInput::Nothing) => Acc::Identity,
            (Acc::Full { raw, .. }, DriverInput::Gradient(g)) => {
                if expected != InputRequest::Gradient {
                    return Err(PrecondError::WrongDriver { expected: expected.expected() });
                }
                let driver = self.full_driver(outer_product(g), embed)?;
                self.next_full(raw, &driver, rho)?
            }
            (Acc::Full { raw, .. }, DriverInput::CurvatureMatrix(m)) => {
                if expected != InputRequest::CurvatureMatrix {
                    return Err(PrecondError::WrongDriver { expected: expected.expected() });
                }
                let rel = m.asymmetry();
                if rel > DRIVER_SYMMETRY_TOL {
                    return Err(PrecondError::AsymmetricDriver { rel });
                }
                let sym = Mat::from_fn(self.dim, self.dim, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
                let driver = self.full_driver(sym, embed)?;
                self.next_full(raw, &driver, rho)?
            }
            (Acc::Diag { raw, .. }, DriverInput::Gradient(g)) => {
                if expected != InputRequest::Gradient {
                    return Err(PrecondError::WrongDriver { expected: expected.expected() });
                }
                let driver: Vec<f64> = g.iter().map(|gi| gi * gi + embed).collect();
                self.next_diag(raw, &driver, rho)?
            }
            (Acc::Diag { raw, .. }, DriverInput::CurvatureDiag(v)) => {
                if expected != InputRequest::CurvatureDiag {
                    return Err(PrecondError::WrongDriver { expected: expected.expected() });
                }
                let clip = self.config.spectral_clip;
                let driver: Vec<f64> = v
                    .iter()
                    .map(|&vi| match clip {
                        Some((lo, hi)) => vi.clamp(lo, hi) + embed,
                        None => vi + embed,
                    })
                    .collect();
                self.next_diag(raw, &driver, rho)?
            }
            _ => return Err(PrecondError::WrongDriver { expected: expected.expected() }),
        };

        self.prev = std::mem::replace(&mut self.cur, next);
        self.t = t_next;
        Ok(())
    }

    fn full_driver(&self, raw: Mat, embed: f64) -> Result<Mat, PrecondError> {
        let mut d = match self.config.spectral_clip {
            Some((lo, hi)) => crate::linalg::clamp_spectrum(&raw, lo, hi)?,
            None => raw,
        };
        if embed > 0.0 {
            for i in 0..self.dim {
                d[(i, i)] += embed;
            }
        }
        Ok(d)
    }

    fn next_full(&self, raw: &Mat, driver: &Mat, rho: f64) -> Result<Acc, PrecondError> {
        let new_raw = raw.scale(1.0 - rho).add(&driver.scale(rho));
        let eff = SpdMatrix::new(effective_mat(&new_raw, &self.config))?;
        self.check_floor(eff.min_eigenvalue())?;
        Ok(Acc::Full { raw: new_raw, eff })
    }

    fn next_diag(&self, raw: &[f64], driver: &[f64], rho: f64) -> Result<Acc, PrecondError> {
        let new_raw: Vec<f64> =
            raw.iter().zip(driver).map(|(&a, &d)| (1.0 - rho) * a + rho * d).collect();
        let shift = if self.config.ridge_before_map { self.config.epsilon } else { 0.0 };
        let eff: Vec<f64> = new_raw.iter().map(|&v| v + shift).collect();
        let min = eff.iter().cloned().fold(f64::INFINITY, f64::min);
        self.check_floor(min)?;
        Ok(Acc::Diag { raw: new_raw, eff })
    }

    /// Rules that embed ε in the driver or add it before the map guarantee
    /// the floor; a dip past rounding slack means the recursion is broken.
    fn check_floor(&self, min_eig: f64) -> Result<(), PrecondError> {
        let guaranteed = self.config.rule.embeds_epsilon() || self.config.ridge_before_map;
        if guaranteed {
            let floor = self.config.epsilon;
            if min_eig < floor * (1.0 - FLOOR_SLACK) {
                return Err(PrecondError::FloorBreach { floor, min_eig });
            }
        } else if min_eig <= 0.0 || min_eig.is_nan() {
            return Err(PrecondError::Linalg(LinalgError::NotPositiveDefinite { min_eig }));
        }
        Ok(())
    }

    /// Effective accumulator entering the spectral map, as a plain matrix.
    pub fn effective_accumulator(&self) -> Mat {
        match &self.cur {
            Acc::Identity => Mat::identity(self.dim),
            Acc::Full { eff, .. } => eff.mat().clone(),
            Acc::Diag { eff, .. } => Mat::diag(eff),
        }
    }

    /// P_t⁻¹ · v without materializing the matrix.
    pub fn inverse_apply(&self, v: &[f64]) -> Vec<f64> {
        inverse_apply_of(&self.cur, self.config.rule, v)
    }

    /// P_{t−1}⁻¹ · v: the inverse action one update earlier.
    pub fn previous_inverse_apply(&self, v: &[f64]) -> Vec<f64> {
        inverse_apply_of(&self.prev, self.config.rule, v)
    }

    /// M_t = (P_t H)⁻¹ for the P_t the next `precond_apply` would return.
    ///
    /// Computed as H⁻¹ · φ(accumulator)⁻¹, which undoes the step map on the
    /// cached spectrum; the product is generally non-symmetric and is
    /// consumed through its operator norm.
    pub fn effective_inverse_drift(&self, h: &SpdMatrix) -> Result<Mat, PrecondError> {
        drift_of(&self.cur, self.config.rule, h)
    }

    /// M_{t−1}: the drift one update earlier.
    pub fn previous_inverse_drift(&self, h: &SpdMatrix) -> Result<Mat, PrecondError> {
        drift_of(&self.prev, self.config.rule, h)
    }

    /// One stabilization probe row at step t, using the step sizes the
    /// caller applied at t and t−1.
    pub fn probe_row(
        &self,
        h: &SpdMatrix,
        t: u64,
        eta_t: f64,
        eta_prev: f64,
    ) -> Result<ProbeRow, PrecondError> {
        let m_t = self.effective_inverse_drift(h)?;
        let m_prev = self.previous_inverse_drift(h)?;
        let increment_norm = op_norm(&m_t.sub(&m_prev));
        let drift_norm = op_norm(&m_t);
        let coupled = m_t.scale(1.0 / eta_t).sub(&m_prev.scale(1.0 / eta_prev));
        Ok(ProbeRow { t, increment_norm, drift_norm, coupled_norm: op_norm(&coupled) })
    }
}

fn effective_mat(raw: &Mat, config: &PrecondConfig) -> Mat {
    if config.ridge_before_map {
        let mut m = raw.clone();
        for i in 0..m.rows() {
            m[(i, i)] += config.epsilon;
        }
        m
    } else {
        raw.clone()
    }
}

fn outer_product(g: &[f64]) -> Mat {
    let d = g.len();
    Mat::from_fn(d, d, |i, j| g[i] * g[j])
}

/// φ(A)⁻¹ · v: multiply by the accumulator (ONS) or its square root.
fn inverse_apply_of(acc: &Acc, rule: Rule, v: &[f64]) -> Vec<f64> {
    match (acc, rule.step_map()) {
        (Acc::Identity, _) | (_, None) => v.to_vec(),
        (Acc::Full { eff, .. }, Some(SpectralMap::Inverse)) => eff.matvec(v),
        (Acc::Full { eff, .. }, Some(_)) => eff.spectrum().apply(f64::sqrt, v),
        (Acc::Diag { eff, .. }, Some(map)) => {
            v.iter().zip(eff).map(|(vi, &e)| vi / map.scalar(e)).collect()
        }
    }
}

/// Inverse of the step map's image: P⁻¹ = φ(A)⁻¹ as a function of A.
fn drift_of(acc: &Acc, rule: Rule, h: &SpdMatrix) -> Result<Mat, PrecondError> {
    let h_inv = h.spectrum().recompose(|x| SpectralMap::Inverse.scalar(x));
    match (acc, rule.step_map()) {
        (Acc::Identity, _) | (_, None) => Ok(h_inv),
        (Acc::Full { eff, .. }, Some(SpectralMap::Inverse)) => Ok(h_inv.matmul(eff.mat())),
        (Acc::Full { eff, .. }, Some(_)) => {
            let root = spectral_map(eff, SpectralMap::Sqrt)?;
            Ok(h_inv.matmul(root.mat()))
        }
        (Acc::Diag { eff, .. }, Some(map)) => {
            let inv: Vec<f64> = eff.iter().map(|&v| 1.0 / map.scalar(v)).collect();
            Ok(h_inv.matmul(&Mat::diag(&inv)))
        }
    }
}

/// Closed-form asymptotic operator factor ‖M_∞‖_op for each stabilizing rule.
pub fn operator_factor(
    rule: Rule,
    h: &SpdMatrix,
    s: &SpdMatrix,
    epsilon: f64,
) -> Result<f64, PrecondError> {
    if epsilon <= 0.0 || epsilon.is_nan() {
        return Err(PrecondError::BadEpsilon { eps: epsilon });
    }
    let h_inv = h.spectrum().recompose(|x| SpectralMap::Inverse.scalar(x));
    match rule {
        Rule::Identity => Ok(1.0 / h.min_eigenvalue()),
        Rule::SaOns => Ok(1.0),
        Rule::SaAdagrad => {
            let mut m = s.mat().clone();
            for i in 0..m.rows() {
                m[(i, i)] += epsilon;
            }
            let root = spectral_map(&SpdMatrix::new(m)?, SpectralMap::Sqrt)?;
            Ok(op_norm(&h_inv.matmul(root.mat())))
        }
        Rule::SaRmsprop => {
            let root: Vec<f64> =
                (0..s.dim()).map(|i| (s.mat()[(i, i)] + epsilon).sqrt()).collect();
            Ok(op_norm(&h_inv.matmul(&Mat::diag(&root))))
        }
        Rule::EmaRmsprop => Err(PrecondError::NoAsymptoticFactor { rule: rule.name() }),
    }
}

/// One row of the stabilization diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ProbeRow {
    pub t: u64,
    /// ‖M_t − M_{t−1}‖_op
    pub increment_norm: f64,
    /// ‖M_t‖_op
    pub drift_norm: f64,
    /// ‖η_t⁻¹ M_t − η_{t−1}⁻¹ M_{t−1}‖_op
    pub coupled_norm: f64,
}

/// Collected probe rows for one trajectory.
#[derive(Debug, Clone, Default)]
pub struct StabilizationProbe {
    pub rows: Vec<ProbeRow>,
}

impl StabilizationProbe {
    pub fn new() -> Self {
        StabilizationProbe { rows: Vec::new() }
    }

    pub fn push(&mut self, row: ProbeRow) {
        self.rows.push(row);
    }

    /// (t, ‖M_t − M_{t−1}‖) pairs with strictly positive norms, for slope
    /// fits in log-log space.
    pub fn increment_points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.increment_norm > 0.0)
            .map(|r| (r.t as f64, r.increment_norm))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            r.increment_norm.is_finite()
                && r.drift_norm.is_finite()
                && r.coupled_norm.is_finite()
                && r.increment_norm >= 0.0
                && r.drift_norm >= 0.0
                && r.coupled_norm >= 0.0
        })
    }
}

/// Decides which steps get a probe row: every step while t ≤ 10⁴, then
/// log-spaced with ratio 1.02. Callers iterate t in increasing order.
#[derive(Debug, Clone)]
pub struct ProbeCadence {
    next: u64,
}

impl ProbeCadence {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        // Probes need M_{t−1}, so they start at t = 2.
        ProbeCadence { next: 2 }
    }

    pub fn should_probe(&mut self, t: u64) -> bool {
        if t < self.next {
            return false;
        }
        self.next = if t < PROBE_DENSE_LIMIT {
            t + 1
        } else {
            ((t as f64) * PROBE_LOG_RATIO).ceil().max((t + 1) as f64) as u64
        };
        true
    }
}

/// Loewner band check used by the ellipticity properties: lo·I ⪯ A ⪯ hi·I.
pub fn within_band(a: &Mat, lo: f64, hi: f64, tol: f64) -> Result<bool, PrecondError> {
    let d = a.rows();
    let lo_mat = Mat::identity(d).scale(lo);
    let hi_mat = Mat::identity(d).scale(hi);
    Ok(loewner_leq(&lo_mat, a, tol)? && loewner_leq(a, &hi_mat, tol)?)
}
