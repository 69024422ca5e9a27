//! Data-stream generators with ground-truth moments.
//!
//! Two families: synthetic linear regression with Gaussian Toeplitz
//! covariates (homoskedastic unit noise for the information-equality regime,
//! covariate-dependent noise for the general sandwich regime), and
//! ℓ₂-regularized logistic regression over an ingested table sampled with
//! replacement. Every problem exposes the stochastic gradient, the
//! full-matrix and diagonal Hessian drivers, and the exact (x*, H, S) the
//! diagnostics are judged against.

use crate::linalg::{spectral_map, LinalgError, Mat, SpdMatrix, SpectralMap};
use crate::rng::SplitMix64;
use thiserror::Error;

/// Draws used by the Monte Carlo moment oracle for the sandwich regime.
const S_ORACLE_DRAWS: usize = 1_000_000;
/// Target for the calibrated Frobenius ratio ‖S−H‖_F/‖H‖_F (band midpoint).
const SANDWICH_RATIO_TARGET: f64 = 1.5;
const SANDWICH_RATIO_BAND: (f64, f64) = (1.1, 2.0);
/// Full-batch Newton stopping rule for the logistic ground truth.
const NEWTON_GRAD_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension {dim} outside supported range 1..=64")]
    BadDim { dim: usize },
    #[error("info_equality requires unit noise_scale (got {got}); S = H only holds for unit-variance noise")]
    BadNoiseScale { got: f64 },
    #[error("noise_scale must be positive and finite, got {got}")]
    NonPositiveNoise { got: f64 },
    #[error("sandwich calibration landed at ratio {ratio:.4} outside [{lo}, {hi}]")]
    CalibrationFailed { ratio: f64, lo: f64, hi: f64 },
    #[error("Newton failed to reach gradient norm {NEWTON_GRAD_TOL:e} in {NEWTON_MAX_ITERS} iterations (final {grad_norm:.3e})")]
    NewtonDiverged { grad_norm: f64 },
    #[error("labels must be binary; found label {label:?} at data row {row}")]
    NonBinaryLabel { label: String, row: usize },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("CSV is empty or has no data rows")]
    EmptyFile,
    #[error("column {name:?} has zero variance; cannot standardize")]
    ZeroVariance { name: String },
    #[error("label column {name:?} not found in header")]
    MissingLabelColumn { name: String },
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Noise regimes for the synthetic stream plus the dataset-backed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    GeneralSandwich,
    InfoEquality,
    Logistic,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::GeneralSandwich => "general_sandwich",
            Regime::InfoEquality => "info_equality",
            Regime::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "general_sandwich" => Ok(Regime::GeneralSandwich),
            "info_equality" => Ok(Regime::InfoEquality),
            "logistic" => Ok(Regime::Logistic),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Linear {
        /// Spectral square root of H, used to color standard Gaussians.
        h_sqrt: Mat,
        /// Response noise std is noise_scale * (1 + |aᵀw|) for the sandwich
        /// regime and plain noise_scale for information equality.
        noise_scale: f64,
        hetero_dir: Option<Vec<f64>>,
    },
    Logistic { data: DatasetTable, ridge: f64 },
    /// Degenerate stream whose samples carry the exact population gradient,
    /// turning the recursion into deterministic gradient descent.
    #[cfg(test)]
    Population,
}

/// A stochastic optimization problem with known ground truth.
#[derive(Debug, Clone)]
pub struct StreamProblem {
    dim: usize,
    regime: Regime,
    x_star: Vec<f64>,
    hessian: SpdMatrix,
    noise_cov: SpdMatrix,
    inner: Inner,
}

/// One observation; gradients and Hessian drivers are evaluated lazily at a
/// caller-supplied iterate.
#[derive(Debug, Clone)]
pub struct Sample {
    pub covariate: Vec<f64>,
    pub response: f64,
    loss: LossKind,
}

#[derive(Debug, Clone)]
enum LossKind {
    /// ½(aᵀx − y)²
    SquaredError,
    /// Per-row regularized logistic loss: log(1+e^{aᵀx}) − y·aᵀx + (λ/2)‖x‖²
    Logistic { ridge: f64 },
    /// Exact population quadratic ½(x−x*)ᵀH(x−x*); test-only.
    #[cfg(test)]
    Population { hessian: Mat, x_star: Vec<f64> },
}

impl Sample {
    /// Stochastic gradient g_t(x).
    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        match &self.loss {
            LossKind::SquaredError => {
                let resid = dot(&self.covariate, x) - self.response;
                self.covariate.iter().map(|a| a * resid).collect()
            }
            LossKind::Logistic { ridge } => {
                let p = sigmoid(dot(&self.covariate, x));
                let resid = p - self.response;
                self.covariate.iter().zip(x).map(|(a, xi)| a * resid + ridge * xi).collect()
            }
            #[cfg(test)]
            LossKind::Population { hessian, x_star } => {
                let delta: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
                hessian.matvec(&delta)
            }
        }
    }

    /// Full-matrix Hessian driver Ĥ_t(x) (symmetric by construction).
    pub fn hessian_estimate_at(&self, x: &[f64]) -> Mat {
        #[cfg(test)]
        if let LossKind::Population { hessian, .. } = &self.loss {
            return hessian.clone();
        }
        let d = self.covariate.len();
        let w = self.curvature_weight(x);
        let mut m = Mat::from_fn(d, d, |i, j| w * self.covariate[i] * self.covariate[j]);
        if let LossKind::Logistic { ridge } = &self.loss {
            for i in 0..d {
                m[(i, i)] += *ridge;
            }
        }
        m
    }

    /// Diagonal of the Hessian driver, for diagonal accumulators.
    pub fn hessian_diag_at(&self, x: &[f64]) -> Vec<f64> {
        #[cfg(test)]
        if let LossKind::Population { hessian, .. } = &self.loss {
            return (0..hessian.rows()).map(|i| hessian[(i, i)]).collect();
        }
        let w = self.curvature_weight(x);
        let ridge = match &self.loss {
            LossKind::Logistic { ridge } => *ridge,
            _ => 0.0,
        };
        self.covariate.iter().map(|a| w * a * a + ridge).collect()
    }

    fn curvature_weight(&self, x: &[f64]) -> f64 {
        match &self.loss {
            LossKind::SquaredError => 1.0,
            LossKind::Logistic { .. } => {
                let p = sigmoid(dot(&self.covariate, x));
                p * (1.0 - p)
            }
            #[cfg(test)]
            LossKind::Population { .. } => unreachable!("population samples use exact curvature"),
        }
    }
}

/// Ingested dataset: standardized features with a leading intercept column.
#[derive(Debug, Clone)]
pub struct DatasetTable {
    pub rows: Vec<(Vec<f64>, f64)>,
    pub feature_names: Vec<String>,
    /// Human-readable record of the preprocessing applied at ingestion.
    pub preprocessing: String,
}

impl DatasetTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }
}

impl StreamProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn hessian(&self) -> &SpdMatrix {
        &self.hessian
    }

    pub fn noise_cov(&self) -> &SpdMatrix {
        &self.noise_cov
    }

    /// Draws one i.i.d. observation, advancing only the caller's RNG.
    pub fn draw_sample(&self, rng: &mut SplitMix64) -> Sample {
        match &self.inner {
            Inner::Linear { h_sqrt, noise_scale, hetero_dir } => {
                let d = self.dim;
                let mut z = vec![0.0; d];
                rng.fill_gaussian(&mut z);
                let a = h_sqrt.matvec(&z);
                let std = match hetero_dir {
                    Some(w) => noise_scale * (1.0 + dot(&a, w).abs()),
                    None => *noise_scale,
                };
                let y = dot(&a, &self.x_star) + std * rng.next_gaussian();
                Sample { covariate: a, response: y, loss: LossKind::SquaredError }
            }
            Inner::Logistic { data, ridge, .. } => {
                let idx = rng.next_index(data.rows.len());
                let (a, y) = &data.rows[idx];
                Sample { covariate: a.clone(), response: *y, loss: LossKind::Logistic { ridge: *ridge } }
            }
            #[cfg(test)]
            Inner::Population => Sample {
                covariate: vec![0.0; self.dim],
                response: 0.0,
                loss: LossKind::Population {
                    hessian: self.hessian.mat().clone(),
                    x_star: self.x_star.clone(),
                },
            },
        }
    }

    /// Exact population gradient ∇F(x).
    ///
    /// For the quadratic stream this is H(x − x*) computed as a single
    /// matrix-vector product, so the Taylor residual u_t is exactly zero.
    /// For logistic regression it is the full-batch mean gradient.
    pub fn mean_gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.inner {
            Inner::Linear { .. } => {
                let delta: Vec<f64> = x.iter().zip(&self.x_star).map(|(a, b)| a - b).collect();
                self.hessian.matvec(&delta)
            }
            #[cfg(test)]
            Inner::Population => {
                let delta: Vec<f64> = x.iter().zip(&self.x_star).map(|(a, b)| a - b).collect();
                self.hessian.matvec(&delta)
            }
            Inner::Logistic { data, ridge, .. } => {
                let d = self.dim;
                let n = data.rows.len() as f64;
                let mut g = vec![0.0; d];
                for (a, y) in &data.rows {
                    let resid = sigmoid(dot(a, x)) - y;
                    for i in 0..d {
                        g[i] += resid * a[i];
                    }
                }
                for i in 0..d {
                    g[i] = g[i] / n + ridge * x[i];
                }
                g
            }
        }
    }
}

/// Synthetic linear regression stream with Toeplitz(0.4) covariate
/// covariance and deterministic ground truth x*_j = (−1)^j (1 + j/d).
///
/// For `info_equality` the noise is unit-variance homoskedastic, so S = H
/// exactly. For `general_sandwich` the noise std depends on the covariate
/// and `noise_scale` is recalibrated so ‖S−H‖_F/‖H‖_F lands mid-band; the
/// cached S is the 10⁶-draw Monte Carlo estimate under the calibrated scale.
pub fn make_linear_problem(
    dim: usize,
    regime: Regime,
    noise_scale: f64,
    seed: u64,
) -> Result<StreamProblem, ProblemError> {
    if dim == 0 || dim > 64 {
        return Err(ProblemError::BadDim { dim });
    }
    if noise_scale <= 0.0 || !noise_scale.is_finite() {
        return Err(ProblemError::NonPositiveNoise { got: noise_scale });
    }
    let hessian = crate::linalg::toeplitz_corr(dim, 0.4)?;
    let h_sqrt = spectral_map(&hessian, SpectralMap::Sqrt)?.mat().clone();
    let x_star = star_vector(dim);

    match regime {
        Regime::InfoEquality => {
            if (noise_scale - 1.0).abs() > 1e-12 {
                return Err(ProblemError::BadNoiseScale { got: noise_scale });
            }
            Ok(StreamProblem {
                dim,
                regime,
                x_star,
                noise_cov: hessian.clone(),
                hessian,
                inner: Inner::Linear { h_sqrt, noise_scale: 1.0, hetero_dir: None },
            })
        }
        Regime::GeneralSandwich => {
            let w: Vec<f64> = vec![1.0 / (dim as f64).sqrt(); dim];
            // S(σ) = σ²·K with K = E[a aᵀ (1+|aᵀw|)²]: estimate K once by
            // Monte Carlo, then calibrate σ in closed form against it.
            let mut rng = SplitMix64::new(crate::rng::mix64(seed ^ 0x5A4D_11C4_0CA1_1B8A));
            let k_hat = mc_noise_kernel(&h_sqrt, &w, &mut rng);
            let h_mat = hessian.mat();
            let scale_sq = calibrate_scale(&k_hat, h_mat)?;
            let s_mat = k_hat.scale(scale_sq);
            let ratio = s_mat.sub(h_mat).frobenius_norm() / h_mat.frobenius_norm();
            let (lo, hi) = SANDWICH_RATIO_BAND;
            if !(lo..=hi).contains(&ratio) {
                return Err(ProblemError::CalibrationFailed { ratio, lo, hi });
            }
            let noise_cov = SpdMatrix::new(s_mat)?;
            Ok(StreamProblem {
                dim,
                regime,
                x_star,
                noise_cov,
                hessian,
                inner: Inner::Linear {
                    h_sqrt,
                    noise_scale: scale_sq.sqrt(),
                    hetero_dir: Some(w),
                },
            })
        }
        Regime::Logistic => Err(ProblemError::BadDim { dim }),
    }
}

/// Alternating-sign ground truth x*_j = (−1)^j (1 + j/d), j = 1..d.
fn star_vector(dim: usize) -> Vec<f64> {
    (1..=dim)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + j as f64 / dim as f64)
        })
        .collect()
}

/// Deterministic quadratic stream: every sample's gradient equals the
/// population gradient H(x − x*), so the recursion is exact gradient descent.
#[cfg(test)]
pub(crate) fn population_quadratic(dim: usize) -> StreamProblem {
    let hessian = crate::linalg::toeplitz_corr(dim, 0.4).expect("valid dimension");
    StreamProblem {
        dim,
        regime: Regime::InfoEquality,
        x_star: star_vector(dim),
        noise_cov: hessian.clone(),
        hessian,
        inner: Inner::Population,
    }
}

/// Monte Carlo estimate of K = E[a aᵀ (1 + |aᵀw|)²] over `S_ORACLE_DRAWS`.
fn mc_noise_kernel(h_sqrt: &Mat, w: &[f64], rng: &mut SplitMix64) -> Mat {
    let d = w.len();
    let mut acc = Mat::zeros(d, d);
    let mut z = vec![0.0; d];
    for _ in 0..S_ORACLE_DRAWS {
        rng.fill_gaussian(&mut z);
        let a = h_sqrt.matvec(&z);
        let m = 1.0 + dot(&a, w).abs();
        let m2 = m * m;
        for i in 0..d {
            let ai = m2 * a[i];
            for j in i..d {
                acc[(i, j)] += ai * a[j];
            }
        }
    }
    let inv_n = 1.0 / S_ORACLE_DRAWS as f64;
    let mut out = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = acc[(i, j)] * inv_n;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Finds σ² with ‖σ²K − H‖_F/‖H‖_F = target. The ratio is unimodal in σ²
/// (quadratic under the square), so bisect on the increasing branch right of
/// the minimizer σ²* = <K,H>/‖K‖²_F.
fn calibrate_scale(k: &Mat, h: &Mat) -> Result<f64, ProblemError> {
    let ratio = |s: f64| k.scale(s).sub(h).frobenius_norm() / h.frobenius_norm();
    let inner_kh: f64 = k.data().iter().zip(h.data()).map(|(a, b)| a * b).sum();
    let inner_kk: f64 = k.data().iter().map(|a| a * a).sum();
    let s_min = (inner_kh / inner_kk).max(0.0);
    let (lo_band, hi_band) = SANDWICH_RATIO_BAND;
    if ratio(s_min) > SANDWICH_RATIO_TARGET {
        return Err(ProblemError::CalibrationFailed { ratio: ratio(s_min), lo: lo_band, hi: hi_band });
    }
    let mut lo = s_min;
    let mut hi = s_min.max(1.0);
    while ratio(hi) < SANDWICH_RATIO_TARGET {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(ProblemError::CalibrationFailed { ratio: ratio(hi), lo: lo_band, hi: hi_band });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < SANDWICH_RATIO_TARGET {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ridge-regularized logistic problem over an ingested table.
///
/// Ground truth x* comes from deterministic full-batch Newton; H and S are
/// the full-dataset Hessian and per-row gradient covariance at x*.
pub fn make_logistic_problem(data: DatasetTable, ridge: f64) -> Result<StreamProblem, ProblemError> {
    let d = data.dim();
    if d == 0 || d > 64 {
        return Err(ProblemError::BadDim { dim: d });
    }
    let n = data.n_rows() as f64;
    if data.rows.is_empty() {
        return Err(ProblemError::EmptyFile);
    }

    let mut x = vec![0.0; d];
    for _ in 0..NEWTON_MAX_ITERS {
        let (g, h) = logistic_grad_hess(&data, ridge, &x);
        if norm(&g) <= NEWTON_GRAD_TOL {
            break;
        }
        let h_spd = SpdMatrix::new(h)?;
        let step = spectral_map(&h_spd, SpectralMap::Inverse)?.matvec(&g);
        for i in 0..d {
            x[i] -= step[i];
        }
    }
    let (g_final, h_final) = logistic_grad_hess(&data, ridge, &x);
    let grad_norm = norm(&g_final);
    if grad_norm > NEWTON_GRAD_TOL {
        return Err(ProblemError::NewtonDiverged { grad_norm });
    }

    let hessian = SpdMatrix::new(h_final)?;
    // S = empirical covariance of per-row gradients at x*; the mean gradient
    // is zero to Newton tolerance, so the raw second moment is used.
    let mut s = Mat::zeros(d, d);
    for (a, y) in &data.rows {
        let p = sigmoid(dot(a, &x));
        let gi: Vec<f64> = a.iter().zip(&x).map(|(ai, xi)| ai * (p - y) + ridge * xi).collect();
        for i in 0..d {
            for j in i..d {
                s[(i, j)] += gi[i] * gi[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = s[(i, j)] / n;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let noise_cov = SpdMatrix::new(s)?;

    Ok(StreamProblem {
        dim: d,
        regime: Regime::Logistic,
        x_star: x,
        hessian,
        noise_cov,
        inner: Inner::Logistic { data, ridge },
    })
}

fn logistic_grad_hess(data: &DatasetTable, ridge: f64, x: &[f64]) -> (Vec<f64>, Mat) {
    let d = x.len();
    let n = data.rows.len() as f64;
    let mut g = vec![0.0; d];
    let mut h = Mat::zeros(d, d);
    for (a, y) in &data.rows {
        let p = sigmoid(dot(a, x));
        let resid = p - y;
        let w = p * (1.0 - p);
        for i in 0..d {
            g[i] += resid * a[i];
            for j in i..d {
                h[(i, j)] += w * a[i] * a[j];
            }
        }
    }
    for i in 0..d {
        g[i] = g[i] / n + ridge * x[i];
        for j in i..d {
            h[(i, j)] /= n;
        }
        h[(i, i)] += ridge;
    }
    for i in 0..d {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    (g, h)
}

/// Ingestion schema: which column carries the binary label.
#[derive(Debug, Clone)]
pub struct IngestSpec {
    pub label_column: String,
}

impl Default for IngestSpec {
    fn default() -> Self {
        IngestSpec { label_column: "diagnosis".to_string() }
    }
}

/// Reads a comma-separated file with a header row, standardizes every
/// feature column to zero mean and unit variance (population convention,
/// computed over the full file), prepends an intercept column of ones, and
/// maps labels to {0,1}. Accepted labels: malignant/benign (any case, or
/// their M/B initials) and literal 0/1.
pub fn ingest_csv(path: &std::path::Path, spec: &IngestSpec) -> Result<DatasetTable, ProblemError> {
    let content = std::fs::read_to_string(path)
        .map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
    ingest_csv_str(&content, spec)
}

/// Same as [`ingest_csv`] but over in-memory content.
pub fn ingest_csv_str(content: &str, spec: &IngestSpec) -> Result<DatasetTable, ProblemError> {
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ProblemError::EmptyFile)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == spec.label_column)
        .ok_or_else(|| ProblemError::MissingLabelColumn { name: spec.label_column.clone() })?;
    let feature_cols: Vec<usize> = (0..columns.len()).filter(|&i| i != label_idx).collect();

    let mut raw: Vec<(Vec<f64>, f64)> = Vec::new();
    for (line_no, line) in lines {
        let row_no = line_no + 1; // 1-based, counting the header as row 1
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(ProblemError::MalformedRow {
                row: row_no,
                reason: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let label = parse_label(fields[label_idx]).ok_or_else(|| ProblemError::NonBinaryLabel {
            label: fields[label_idx].to_string(),
            row: row_no,
        })?;
        let mut feats = Vec::with_capacity(feature_cols.len());
        for &ci in &feature_cols {
            let v: f64 = fields[ci].parse().map_err(|_| ProblemError::MalformedRow {
                row: row_no,
                reason: format!("field {:?} in column {:?} is not a number", fields[ci], columns[ci]),
            })?;
            if !v.is_finite() {
                return Err(ProblemError::MalformedRow {
                    row: row_no,
                    reason: format!("non-finite value in column {:?}", columns[ci]),
                });
            }
            feats.push(v);
        }
        raw.push((feats, label));
    }
    if raw.is_empty() {
        return Err(ProblemError::EmptyFile);
    }

    // Standardize with population moments over the full file.
    let n = raw.len() as f64;
    let k = feature_cols.len();
    let mut mean = vec![0.0; k];
    for (f, _) in &raw {
        for j in 0..k {
            mean[j] += f[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; k];
    for (f, _) in &raw {
        for j in 0..k {
            let d = f[j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    for (j, &v) in var.iter().enumerate() {
        if v <= 0.0 {
            return Err(ProblemError::ZeroVariance { name: columns[feature_cols[j]].to_string() });
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();

    let mut feature_names = vec!["intercept".to_string()];
    feature_names.extend(feature_cols.iter().map(|&ci| columns[ci].to_string()));
    let rows: Vec<(Vec<f64>, f64)> = raw
        .into_iter()
        .map(|(f, y)| {
            let mut row = Vec::with_capacity(k + 1);
            row.push(1.0);
            for j in 0..k {
                row.push((f[j] - mean[j]) / std[j]);
            }
            (row, y)
        })
        .collect();

    Ok(DatasetTable {
        rows,
        feature_names,
        preprocessing: "per-column standardization (zero mean, unit population variance over the full file); intercept column of ones prepended; labels mapped to {0,1}".to_string(),
    })
}

fn parse_label(field: &str) -> Option<f64> {
    match field.to_ascii_lowercase().as_str() {
        "malignant" | "m" | "1" => Some(1.0),
        "benign" | "b" | "0" => Some(0.0),
        _ => None,
    }
}

/// The 569-row binary-diagnosis table shipped with the crate (synthetic
/// stand-in mirroring the public Wisconsin diagnostic mean-feature schema).
pub fn bundled_dataset() -> DatasetTable {
    ingest_csv_str(include_str!("../data/breast_cancer.csv"), &IngestSpec::default())
        .expect("bundled dataset always ingests")
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_equality_noise_cov_equals_hessian() {
        let p = make_linear_problem(5, Regime::InfoEquality, 1.0, 1).unwrap();
        let diff = p.noise_cov().mat().sub(p.hessian().mat()).frobenius_norm();
        assert!(diff <= 1e-8 * p.hessian().mat().frobenius_norm(), "S != H: {diff:.3e}");
    }

    #[test]
    fn info_equality_rejects_nonunit_scale() {
        assert!(matches!(
            make_linear_problem(5, Regime::InfoEquality, 2.0, 1),
            Err(ProblemError::BadNoiseScale { .. })
        ));
    }

    #[test]
    fn two_dim_hessian_is_toeplitz() {
        let p = make_linear_problem(2, Regime::InfoEquality, 1.0, 3).unwrap();
        let h = p.hessian().mat();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((h[(0, 1)] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sandwich_ratio_lands_in_band() {
        let p = make_linear_problem(5, Regime::GeneralSandwich, 1.0, 7).unwrap();
        let h = p.hessian().mat();
        let ratio = p.noise_cov().mat().sub(h).frobenius_norm() / h.frobenius_norm();
        assert!((1.1..=2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn x_star_is_the_documented_vector() {
        let p = make_linear_problem(4, Regime::InfoEquality, 1.0, 1).unwrap();
        let expect = [-1.25, 1.5, -1.75, 2.0];
        for (a, b) in p.x_star().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_mean_vanishes_at_optimum() {
        let p = make_linear_problem(5, Regime::InfoEquality, 1.0, 11).unwrap();
        let mut rng = SplitMix64::new(100);
        let n = 100_000usize;
        let d = p.dim();
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            let s = p.draw_sample(&mut rng);
            let g = s.gradient_at(p.x_star());
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi;
            }
        }
        // Marginal std of each gradient coordinate at x* is sqrt(S_ii).
        for (i, m) in mean.iter_mut().enumerate() {
            *m /= n as f64;
            let sigma = p.noise_cov().mat()[(i, i)].sqrt();
            assert!(
                m.abs() <= 4.0 * sigma / (n as f64).sqrt(),
                "coordinate {i} mean {m:.3e} exceeds 4σ/√n"
            );
        }
    }

    #[test]
    fn gradient_covariance_matches_cached_s() {
        let p = make_linear_problem(5, Regime::GeneralSandwich, 1.0, 13).unwrap();
        let mut rng = SplitMix64::new(200);
        let d = p.dim();
        let n = 1_000_000usize;
        let mut acc = Mat::zeros(d, d);
        for _ in 0..n {
            let s = p.draw_sample(&mut rng);
            let g = s.gradient_at(p.x_star());
            for i in 0..d {
                for j in i..d {
                    acc[(i, j)] += g[i] * g[j];
                }
            }
        }
        let mut cov = Mat::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = acc[(i, j)] / n as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let rel = cov.sub(p.noise_cov().mat()).frobenius_norm() / p.noise_cov().mat().frobenius_norm();
        assert!(rel <= 0.02, "gradient covariance off by {rel:.4}");
    }

    #[test]
    fn hessian_estimate_mean_matches_h() {
        let p = make_linear_problem(5, Regime::InfoEquality, 1.0, 17).unwrap();
        let mut rng = SplitMix64::new(300);
        let d = p.dim();
        let n = 1_000_000usize;
        let x = vec![0.0; d];
        let mut acc = Mat::zeros(d, d);
        for _ in 0..n {
            let s = p.draw_sample(&mut rng);
            let h = s.hessian_estimate_at(&x);
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += h[(i, j)];
                }
            }
        }
        let mean = acc.scale(1.0 / n as f64);
        let rel = mean.sub(p.hessian().mat()).frobenius_norm() / p.hessian().mat().frobenius_norm();
        assert!(rel <= 0.02, "Hessian estimate mean off by {rel:.4}");
    }

    #[test]
    fn noise_is_unbiased_away_from_optimum() {
        // E[g_t(x)] = ∇F(x) at arbitrary x, checked at 10 random points.
        let p = make_linear_problem(3, Regime::GeneralSandwich, 1.0, 23).unwrap();
        let mut rng = SplitMix64::new(400);
        for trial in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| 4.0 * (rng.next_f64() - 0.5)).collect();
            let grad = p.mean_gradient(&x);
            let n = 200_000usize;
            let mut mean = [0.0; 3];
            for _ in 0..n {
                let s = p.draw_sample(&mut rng);
                let g = s.gradient_at(&x);
                for (m, gi) in mean.iter_mut().zip(&g) {
                    *m += gi;
                }
            }
            for i in 0..3 {
                mean[i] /= n as f64;
                // Crude per-coordinate scale bound: gradient std at x grows
                // with ‖x − x*‖; 6σ/√n with a generous constant.
                let slack = 6.0 * (1.0 + 4.0 * norm(&x)) / (n as f64).sqrt();
                assert!(
                    (mean[i] - grad[i]).abs() <= slack,
                    "trial {trial}: E[g] − ∇F = {:.3e} exceeds {slack:.3e}",
                    mean[i] - grad[i]
                );
            }
        }
    }

    #[test]
    fn quadratic_taylor_residual_is_zero() {
        let p = make_linear_problem(5, Regime::InfoEquality, 1.0, 29).unwrap();
        let mut rng = SplitMix64::new(500);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| 10.0 * (rng.next_f64() - 0.5)).collect();
            let grad = p.mean_gradient(&x);
            let delta: Vec<f64> = x.iter().zip(p.x_star()).map(|(a, b)| a - b).collect();
            let h_delta = p.hessian().matvec(&delta);
            for i in 0..5 {
                assert_eq!(grad[i], h_delta[i], "Taylor residual must vanish bitwise");
            }
        }
    }

    #[test]
    fn logistic_intercept_only_balanced_gives_zero() {
        let rows: Vec<(Vec<f64>, f64)> =
            (0..10).map(|i| (vec![1.0], if i % 2 == 0 { 1.0 } else { 0.0 })).collect();
        let data = DatasetTable {
            rows,
            feature_names: vec!["intercept".into()],
            preprocessing: String::new(),
        };
        // λ → 0 limit: by symmetry the optimum is exactly 0, and Newton's
        // first gradient evaluation already certifies it.
        let p = make_logistic_problem(data, 1e-12).unwrap();
        assert!(p.x_star()[0].abs() < 1e-10, "balanced intercept-only optimum is 0");
    }

    #[test]
    fn bundled_dataset_builds_eleven_dim_problem() {
        let data = bundled_dataset();
        assert_eq!(data.n_rows(), 569);
        assert_eq!(data.dim(), 11);
        let p = make_logistic_problem(data, 0.1).unwrap();
        assert_eq!(p.dim(), 11);
        let g = p.mean_gradient(p.x_star());
        assert!(norm(&g) <= 1e-10, "first-order optimality fails: {:.3e}", norm(&g));
    }

    #[test]
    fn logistic_hessian_estimate_is_bounded() {
        let data = bundled_dataset();
        let p = make_logistic_problem(data, 0.1).unwrap();
        let mut rng = SplitMix64::new(600);
        let d = p.dim();
        let x: Vec<f64> = p.x_star().to_vec();
        for _ in 0..200 {
            let s = p.draw_sample(&mut rng);
            let h = s.hessian_estimate_at(&x);
            let a_sq = dot(&s.covariate, &s.covariate);
            let upper = Mat::identity(d).scale(0.25 * a_sq + 0.1);
            let lower = Mat::zeros(d, d);
            assert!(crate::linalg::loewner_leq(&lower, &h, 1e-12).unwrap());
            assert!(crate::linalg::loewner_leq(&h, &upper, 1e-12).unwrap());
        }
    }

    #[test]
    fn ingest_standardizes_columns() {
        let csv = "f1,f2,diagnosis\n1.0,10.0,benign\n2.0,20.0,malignant\n3.0,33.0,benign\n";
        let t = ingest_csv_str(csv, &IngestSpec::default()).unwrap();
        assert_eq!(t.dim(), 3, "two features plus intercept");
        assert_eq!(t.n_rows(), 3);
        for j in 1..3 {
            let mean: f64 = t.rows.iter().map(|(f, _)| f[j]).sum::<f64>() / 3.0;
            let var: f64 = t.rows.iter().map(|(f, _)| (f[j] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12, "column {j} mean {mean:.3e}");
            assert!((var - 1.0).abs() < 1e-12, "column {j} variance {var}");
        }
        assert!(t.rows.iter().all(|(f, _)| f[0] == 1.0), "intercept column of ones");
        let labels: Vec<f64> = t.rows.iter().map(|(_, y)| *y).collect();
        assert_eq!(labels, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn ingest_rejects_bad_input() {
        assert!(matches!(
            ingest_csv_str("", &IngestSpec::default()),
            Err(ProblemError::EmptyFile)
        ));
        assert!(matches!(
            ingest_csv_str("f1,diagnosis\n", &IngestSpec::default()),
            Err(ProblemError::EmptyFile)
        ));
        let bad_row = "f1,diagnosis\n1.0,benign\noops\n";
        match ingest_csv_str(bad_row, &IngestSpec::default()) {
            Err(ProblemError::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected malformed-row error, got {other:?}"),
        }
        let bad_label = "f1,diagnosis\n1.0,maybe\n2.0,benign\n";
        assert!(matches!(
            ingest_csv_str(bad_label, &IngestSpec::default()),
            Err(ProblemError::NonBinaryLabel { row: 2, .. })
        ));
        let constant = "f1,f2,diagnosis\n1.0,5.0,benign\n2.0,5.0,malignant\n";
        match ingest_csv_str(constant, &IngestSpec::default()) {
            Err(ProblemError::ZeroVariance { name }) => assert_eq!(name, "f2"),
            other => panic!("expected zero-variance error, got {other:?}"),
        }
        assert!(matches!(
            ingest_csv_str("f1,label\n1.0,0\n", &IngestSpec::default()),
            Err(ProblemError::MissingLabelColumn { .. })
        ));
    }

    #[test]
    fn numeric_labels_are_accepted() {
        let csv = "f1,diagnosis\n1.0,0\n2.0,1\n3.0,0\n";
        let t = ingest_csv_str(csv, &IngestSpec::default()).unwrap();
        let labels: Vec<f64> = t.rows.iter().map(|(_, y)| *y).collect();
        assert_eq!(labels, vec![0.0, 1.0, 0.0]);
    }
}
