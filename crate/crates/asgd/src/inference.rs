//! Wald inference against the oracle sandwich covariance H⁻¹SH⁻¹.
//!
//! Intervals use the population H and S rather than plug-in estimates, so
//! coverage and NMSE isolate what the preconditioner does to the averaged
//! iterate from what a covariance estimator would add on top.

use crate::linalg::{LinalgError, SpdMatrix};

/// V = H⁻¹SH⁻¹ with the derived quantities marginal inference needs.
#[derive(Debug, Clone)]
pub struct SandwichOracle {
    v: SpdMatrix,
    trace_v: f64,
    marginal_sd: Vec<f64>,
}

impl SandwichOracle {
    pub fn new(h: &SpdMatrix, s: &SpdMatrix) -> Result<Self, LinalgError> {
        let h_inv = h.spectrum().recompose(|lam| 1.0 / lam);
        let v = SpdMatrix::new(h_inv.matmul(s.mat()).matmul(&h_inv))?;
        let d = v.dim();
        let trace_v = (0..d).map(|j| v.mat()[(j, j)]).sum();
        let marginal_sd = (0..d).map(|j| v.mat()[(j, j)].sqrt()).collect();
        Ok(SandwichOracle { v, trace_v, marginal_sd })
    }

    pub fn v(&self) -> &SpdMatrix {
        &self.v
    }

    pub fn trace_v(&self) -> f64 {
        self.trace_v
    }

    pub fn marginal_sd(&self) -> &[f64] {
        &self.marginal_sd
    }
}

/// Standard normal quantile by the Acklam rational approximation
/// (|error| < 1.2e-8 over (0, 1)).
// Coefficients are kept exactly as published, including digits beyond f64
// precision, so they can be diffed against the reference tables.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Two-sided critical value for a marginal interval at `level`.
/// The 95% value is pinned so every experiment uses the identical constant.
pub fn z_for_level(level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "level must be in (0, 1), got {level}");
    if level == 0.95 {
        1.959964
    } else {
        normal_quantile(0.5 + level / 2.0)
    }
}

/// Fraction of coordinates whose marginal interval covers the truth:
/// |x̄_j − x*_j| ≤ z · √(V_jj / n).
pub fn coverage(x_bar: &[f64], x_star: &[f64], oracle: &SandwichOracle, n: u64, level: f64) -> f64 {
    let z = z_for_level(level);
    let root_n = (n as f64).sqrt();
    let d = x_bar.len();
    let mut hits = 0usize;
    for j in 0..d {
        if (x_bar[j] - x_star[j]).abs() <= z * oracle.marginal_sd[j] / root_n {
            hits += 1;
        }
    }
    hits as f64 / d as f64
}

/// n‖x̄ − x*‖² / Tr(V); the limit law has mean 1.
pub fn nmse(x_bar: &[f64], x_star: &[f64], oracle: &SandwichOracle, n: u64) -> f64 {
    let sq: f64 = x_bar.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    n as f64 * sq / oracle.trace_v
}
