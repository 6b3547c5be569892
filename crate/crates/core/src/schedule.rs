//! The adaptive proposal ladder.
//!
//! Level `i` targets `q_i(θ) ∝ π(θ) min[L(θ)/T_i, 1]` with threshold
//! `T_i = r_i · l^max_{0:i-1}`. Level 0 is the prior (`T_0 = 0`). Each new
//! `r_i` is chosen so that the mean acceptance `β_i` over the previous
//! level's samples hits the target `p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::pairwise_sum;

/// `ln r` at or above this value ends the ladder.
pub const TERMINATION_LN_R: f64 = -1e-4;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    /// `ln r_i` (`-∞` at level 0).
    pub ln_r: f64,
    /// `ln l^max_{0:i-1}` (`-∞` at level 0).
    pub ln_lmax_before: f64,
    /// `ln T_i = ln r_i + ln l^max_{0:i-1}` (`-∞` at level 0).
    pub ln_threshold: f64,
    /// Realized mean of `β_i` over level `i-1` samples (1 at level 0).
    pub mean_beta: f64,
    /// `Σ_{m≤i} ln mean_beta_m`, the running estimate of `ln ρ_i`.
    pub ln_rho_hat: f64,
    pub n_samples: usize,
    /// The target acceptance could not be met and `r` was clamped.
    pub at_boundary: bool,
}

impl Level {
    pub fn prior(n_samples: usize) -> Self {
        Level {
            index: 0,
            ln_r: f64::NEG_INFINITY,
            ln_lmax_before: f64::NEG_INFINITY,
            ln_threshold: f64::NEG_INFINITY,
            mean_beta: 1.0,
            ln_rho_hat: 0.0,
            n_samples,
            at_boundary: false,
        }
    }

    pub fn r(&self) -> f64 {
        self.ln_r.exp()
    }

    pub fn is_terminated(&self) -> bool {
        is_terminated(self.ln_r)
    }
}

/// True iff `ln r ≥ -1e-4` (inclusive).
pub fn is_terminated(ln_r: f64) -> bool {
    ln_r >= TERMINATION_LN_R
}

/// `ln β` for a sample with log-likelihood `ln_l` moving from threshold
/// `ln_prev` to `ln_cur`:
/// `min(ln L − ln T_cur, 0) − min(ln L − ln T_prev, 0)`.
///
/// The result is always `≤ 0`. A `-∞` previous threshold stands for the prior.
pub fn log_beta(ln_l: f64, ln_prev: f64, ln_cur: f64) -> Result<f64> {
    if ln_cur < ln_prev || ln_cur.is_nan() || ln_prev.is_nan() {
        return Err(Error::Contract(format!(
            "thresholds must not decrease: previous {ln_prev}, current {ln_cur}"
        )));
    }
    Ok(log_beta_unchecked(ln_l, ln_prev, ln_cur))
}

// Piecewise form of the min-difference; stays well defined for ln L = -∞
// (where the limit is T_prev/T_cur).
#[inline]
pub(crate) fn log_beta_unchecked(ln_l: f64, ln_prev: f64, ln_cur: f64) -> f64 {
    if ln_l >= ln_cur {
        0.0
    } else if ln_l >= ln_prev {
        ln_l - ln_cur
    } else {
        ln_prev - ln_cur
    }
}

fn mean_beta(batch: &[f64], ln_prev: f64, ln_cur: f64) -> f64 {
    let betas: Vec<f64> = batch.iter().map(|&l| log_beta_unchecked(l, ln_prev, ln_cur).exp()).collect();
    pairwise_sum(&betas) / batch.len() as f64
}

/// Result of solving for the next `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextR {
    pub ln_r: f64,
    pub mean_beta: f64,
    pub at_boundary: bool,
}

impl NextR {
    pub fn r(&self) -> f64 {
        self.ln_r.exp()
    }
}

/// Choose `r ∈ (r_low, 1]` so that the mean of `β` over `batch` is `p`.
///
/// `batch` holds the log-likelihoods of the previous level's samples,
/// `ln_lmax_new` the running maximum including them. The mean of `β` is
/// non-increasing in `r`, so the search is a bisection on `ln r`. If even
/// `r = 1` leaves the mean at or above `p`, `r = 1` is returned.
pub fn solve_next_r(batch: &[f64], prev: &Level, ln_lmax_new: f64, p: f64, tol: f64) -> Result<NextR> {
    if batch.is_empty() {
        return Err(Error::Contract("cannot solve for r on an empty batch".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Contract(format!("target acceptance must be in (0, 1), got {p}")));
    }
    if !ln_lmax_new.is_finite() {
        return Err(Error::Contract("running likelihood maximum is not finite".into()));
    }
    let ln_prev = prev.ln_threshold;
    if ln_prev > ln_lmax_new {
        return Err(Error::Contract("previous threshold exceeds the likelihood maximum".into()));
    }

    let beta_at = |ln_r: f64| mean_beta(batch, ln_prev, ln_r + ln_lmax_new);

    let mut hi = 0.0;
    let mb_hi = beta_at(hi);
    if mb_hi >= p {
        return Ok(NextR { ln_r: 0.0, mean_beta: mb_hi, at_boundary: mb_hi - p > tol });
    }

    let mut lo = if ln_prev.is_finite() {
        ln_prev - ln_lmax_new
    } else {
        // Any threshold below every finite sample gives the largest attainable mean.
        let min_finite = batch.iter().copied().filter(|l| l.is_finite()).fold(f64::INFINITY, f64::min);
        min_finite - ln_lmax_new - 1.0
    };
    let mb_lo = beta_at(lo);
    if mb_lo < p {
        return Ok(NextR { ln_r: lo, mean_beta: mb_lo, at_boundary: true });
    }

    let mut best = NextR { ln_r: hi, mean_beta: mb_hi, at_boundary: false };
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let mb = beta_at(mid);
        if (mb - p).abs() < (best.mean_beta - p).abs() {
            best = NextR { ln_r: mid, mean_beta: mb, at_boundary: false };
        }
        if (mb - p).abs() <= tol || mid == lo || mid == hi {
            break;
        }
        if mb > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The level must move strictly past the previous threshold.
    if ln_prev.is_finite() && best.ln_r + ln_lmax_new <= ln_prev {
        best.ln_r = (ln_prev - ln_lmax_new).next_up();
        best.mean_beta = beta_at(best.ln_r);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Target mean acceptance between successive levels.
    pub p: f64,
    /// Maximum number of proposal distributions, including the prior.
    pub max_levels: usize,
    /// Tolerance on `|mean β − p|` for the r search.
    pub r_tol: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { p: 0.1, max_levels: 100, r_tol: 1e-4 }
    }
}

/// The realized ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    levels: Vec<Level>,
    terminated: bool,
    config: ScheduleConfig,
}

impl Schedule {
    /// A ladder holding only the prior level.
    pub fn new(config: ScheduleConfig, n0: usize) -> Self {
        Self { levels: vec![Level::prior(n0)], terminated: false, config }
    }

    /// Rebuild a schedule from stored levels.
    pub fn from_levels(levels: Vec<Level>, config: ScheduleConfig) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("a schedule needs at least the prior level".into()));
        }
        let terminated = levels.last().is_some_and(Level::is_terminated);
        Ok(Self { levels, terminated, config })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn last(&self) -> &Level {
        self.levels.last().expect("schedule always has the prior level")
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn set_samples(&mut self, index: usize, n: usize) {
        self.levels[index].n_samples = n;
    }

    /// Append the next level, solved on the last level's log-likelihoods.
    pub fn advance(&mut self, batch: &[f64]) -> Result<&Level> {
        if self.terminated {
            return Err(Error::Contract("schedule already terminated".into()));
        }
        if self.levels.len() >= self.config.max_levels {
            return Err(Error::BudgetExhausted { max_levels: self.config.max_levels });
        }
        let prev = self.last();
        let batch_max = batch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ln_lmax_new = prev.ln_lmax_before.max(batch_max);
        let next = solve_next_r(batch, prev, ln_lmax_new, self.config.p, self.config.r_tol)?;
        let level = Level {
            index: prev.index + 1,
            ln_r: next.ln_r,
            ln_lmax_before: ln_lmax_new,
            ln_threshold: next.ln_r + ln_lmax_new,
            mean_beta: next.mean_beta,
            ln_rho_hat: prev.ln_rho_hat + next.mean_beta.ln(),
            n_samples: 0,
            at_boundary: next.at_boundary,
        };
        self.terminated = level.is_terminated();
        self.levels.push(level);
        Ok(self.last())
    }
}
