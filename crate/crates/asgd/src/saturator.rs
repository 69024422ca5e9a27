//! Deterministic scalar sequences that saturate the remainder threshold.
//!
//! With H = 1 and P_t = M_t⁻¹ in one dimension, A_t = η_t⁻¹ M_t and the
//! dynamic remainder becomes an explicit scalar sum. The sequences
//!
//!   M_t = m0 + cM Σ_{s=2}^t (−1)^s s^{−β},   Δ_t = cΔ (−1)^t t^{−α/2}
//!
//! make every summand of the preconditioner-drift part positive, so
//! √n R_n grows or decays exactly at the rate n^{(α+1)/2−β}. Evaluating
//! R_n along an n-grid makes that rate measurable and pins down where the
//! stabilization threshold β = (α+1)/2 actually bites.

use crate::driver::StepSchedule;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaturatorError {
    #[error("alpha must lie in (1/2, 1); got {0}")]
    BadAlpha(f64),
    #[error("beta must be positive; got {0}")]
    BadBeta(f64),
    #[error("constants must be positive; got m0 = {m0}, cM = {c_m}, cDelta = {c_delta}, eta0 = {eta0}")]
    BadConstants { m0: f64, c_m: f64, c_delta: f64, eta0: f64 },
    #[error("m0 = {m0} must exceed cM·C_beta = {bound} so M_t stays positive")]
    BandBreach { m0: f64, bound: f64 },
    #[error("remainder evaluation needs n ≥ 2; got {0}")]
    BadHorizon(u64),
    #[error("evaluation grid must be strictly increasing with first point ≥ 2")]
    BadGrid,
}

/// The scalar sequences (M_t, Δ_t, η_t) with their rate parameters.
///
/// The oscillation of M_t stays inside [m0 − cM·C_β, m0 + cM·C_β] with
/// C_β = 2^{−β} (the alternating partial sums peak at t = 2), so the
/// constructor requires m0 > cM·2^{−β}.
#[derive(Debug, Clone)]
pub struct SaturatingSequences {
    alpha: f64,
    beta: f64,
    m0: f64,
    c_m: f64,
    c_delta: f64,
    schedule: StepSchedule,
}

impl SaturatingSequences {
    /// Defaults keep the drift part dominant over the boundary part across
    /// the whole fitting window, which the slope checks need.
    pub fn new(alpha: f64, beta: f64) -> Result<Self, SaturatorError> {
        Self::with_constants(alpha, beta, 0.5, 0.5, 1.0, 1.0)
    }

    pub fn with_constants(
        alpha: f64,
        beta: f64,
        m0: f64,
        c_m: f64,
        c_delta: f64,
        eta0: f64,
    ) -> Result<Self, SaturatorError> {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(SaturatorError::BadAlpha(alpha));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(SaturatorError::BadBeta(beta));
        }
        if !(m0 > 0.0 && c_m > 0.0 && c_delta > 0.0 && eta0 > 0.0) {
            return Err(SaturatorError::BadConstants { m0, c_m, c_delta, eta0 });
        }
        let bound = c_m * 2f64.powf(-beta);
        if m0 <= bound {
            return Err(SaturatorError::BandBreach { m0, bound });
        }
        let schedule =
            StepSchedule::new(eta0, alpha).map_err(|_| SaturatorError::BadAlpha(alpha))?;
        Ok(SaturatingSequences { alpha, beta, m0, c_m, c_delta, schedule })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Signed increment M_t − M_{t−1} for t ≥ 2, in closed form.
    fn m_increment(&self, t: u64) -> f64 {
        let sign = if t.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * self.c_m * (t as f64).powf(-self.beta)
    }

    fn delta(&self, t: u64) -> f64 {
        let sign = if t.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * self.c_delta * (t as f64).powf(-self.alpha / 2.0)
    }

    fn inv_eta(&self, t: u64) -> f64 {
        1.0 / self.schedule.eta(t)
    }
}

/// R_n with its three-way split; `remainder` is bitwise the sum of the parts.
#[derive(Debug, Clone, Copy)]
pub struct RemainderSplit {
    pub n: u64,
    /// (1/n)[A_1Δ_1 − A_nΔ_{n+1}]
    pub boundary: f64,
    /// (1/n) Σ (η_t⁻¹ − η_{t−1}⁻¹) M_{t−1} Δ_t
    pub step_size: f64,
    /// (1/n) Σ η_t⁻¹ (M_t − M_{t−1}) Δ_t; every summand is positive.
    pub dynamic: f64,
    pub remainder: f64,
}

impl RemainderSplit {
    pub fn scaled(&self) -> f64 {
        (self.n as f64).sqrt() * self.remainder.abs()
    }
}

/// Evaluates R_n at every grid point in one O(max n) pass.
pub fn eval_remainder_series(
    seq: &SaturatingSequences,
    grid: &[u64],
) -> Result<Vec<RemainderSplit>, SaturatorError> {
    if grid.is_empty() || grid[0] < 2 {
        return Err(SaturatorError::BadGrid);
    }
    for w in grid.windows(2) {
        if w[0] >= w[1] {
            return Err(SaturatorError::BadGrid);
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut next = 0usize;
    let mut m_prev = seq.m0;
    let mut dynamic_sum = 0.0;
    let mut step_sum = 0.0;
    let first = seq.inv_eta(1) * m_prev * seq.delta(1);
    for t in 2..=grid[grid.len() - 1] {
        let inc = seq.m_increment(t);
        let m_cur = m_prev + inc;
        let d = seq.delta(t);
        dynamic_sum += seq.inv_eta(t) * inc * d;
        step_sum += (seq.inv_eta(t) - seq.inv_eta(t - 1)) * m_prev * d;
        if grid[next] == t {
            let inv_n = 1.0 / t as f64;
            let boundary = inv_n * (first - seq.inv_eta(t) * m_cur * seq.delta(t + 1));
            let step_size = inv_n * step_sum;
            let dynamic = inv_n * dynamic_sum;
            out.push(RemainderSplit {
                n: t,
                boundary,
                step_size,
                dynamic,
                remainder: boundary + step_size + dynamic,
            });
            next += 1;
        }
        m_prev = m_cur;
    }
    Ok(out)
}

/// R_n at a single horizon.
pub fn eval_remainder(seq: &SaturatingSequences, n: u64) -> Result<RemainderSplit, SaturatorError> {
    if n < 2 {
        return Err(SaturatorError::BadHorizon(n));
    }
    Ok(eval_remainder_series(seq, &[n])?[0])
}

/// What a pass over t = 1..n_max confirmed about the sequences.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisReport {
    pub n_max: u64,
    pub m_min: f64,
    pub m_max: f64,
    /// Numeric sup of |Σ_{s=2}^t (−1)^s s^{−β}| over the pass.
    pub c_beta: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Re-derives the hypotheses the construction is supposed to satisfy:
/// exact increment sizes, exact iterate envelope, and a positive band
/// for M_t. Errors if the band is breached.
pub fn verify_hypotheses(
    seq: &SaturatingSequences,
    n_max: u64,
) -> Result<HypothesisReport, SaturatorError> {
    let mut m = seq.m0;
    let mut m_min = m;
    let mut m_max = m;
    let mut partial = 0.0;
    let mut c_beta: f64 = 0.0;
    for t in 1..=n_max {
        if t >= 2 {
            let inc = seq.m_increment(t);
            assert_eq!(
                inc.abs(),
                seq.c_m * (t as f64).powf(-seq.beta),
                "increment magnitude must follow the power law exactly"
            );
            m += inc;
            partial += if t % 2 == 0 { 1.0 } else { -1.0 } * (t as f64).powf(-seq.beta);
            c_beta = c_beta.max(partial.abs());
            m_min = m_min.min(m);
            m_max = m_max.max(m);
        }
        assert_eq!(seq.delta(t).abs(), seq.c_delta * (t as f64).powf(-seq.alpha / 2.0));
    }
    let bound = seq.c_m * c_beta;
    if m_min <= 0.0 || seq.m0 <= bound {
        return Err(SaturatorError::BandBreach { m0: seq.m0, bound });
    }
    Ok(HypothesisReport {
        n_max,
        m_min,
        m_max,
        c_beta,
        band_lo: seq.m0 - bound,
        band_hi: seq.m0 + bound,
    })
}

/// One sweep cell: √n|R_n| and the split at one (α, β, n).
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub n: u64,
    pub sqrt_n_rn: f64,
    pub bn: f64,
    pub sn: f64,
    pub dn: f64,
}

/// Grid for slope fits: log-spaced, then snapped to even integers so the
/// alternating boundary term keeps one sign across the fit instead of
/// aliasing parity noise into the slope.
pub fn slope_grid(lo: u64, hi: u64, per_decade: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = crate::driver::log_grid(lo, hi, per_decade)
        .into_iter()
        .map(|n| n + n % 2)
        .collect();
    grid.dedup();
    grid
}

/// Evaluates every (α, β) cell over the grid.
pub fn sweep(
    alphas: &[f64],
    betas: &[f64],
    grid: &[u64],
) -> Result<Vec<SweepRow>, SaturatorError> {
    let mut rows = Vec::with_capacity(alphas.len() * betas.len() * grid.len());
    for &alpha in alphas {
        for &beta in betas {
            let seq = SaturatingSequences::new(alpha, beta)?;
            for split in eval_remainder_series(&seq, grid)? {
                rows.push(SweepRow {
                    alpha,
                    beta,
                    n: split.n,
                    sqrt_n_rn: split.scaled(),
                    bn: split.boundary,
                    sn: split.step_size,
                    dn: split.dynamic,
                });
            }
        }
    }
    Ok(rows)
}
