//! Evidence estimators, posterior weights and diagnostics over a finished run.
//!
//! With the balance heuristic the sample at level `i` gets the mixture
//! denominator `D = ln Σ_j N_j q_j(θ)/π(θ)`, where
//! `q_j(θ)/π(θ) = min[L(θ)/T_j, 1] / ρ̂_j`. The prior cancels between the
//! numerator `L π` and every denominator term, so only cached log-likelihoods
//! and ladder constants are needed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_mean_exp, log_sum_exp, pairwise_sum};
use crate::model::PriorSpec;
use crate::sampler::Sample;
use crate::schedule::{Level, Schedule};

/// All samples of a run, grouped by level, plus the ladder that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub prior: PriorSpec,
    pub schedule: Schedule,
    pub samples: Vec<Vec<Sample>>,
}

impl RunTrace {
    pub fn new(prior: PriorSpec, schedule: Schedule, samples: Vec<Vec<Sample>>) -> Result<Self> {
        if samples.len() > schedule.len() {
            return Err(Error::InvalidInput("more sample groups than levels".into()));
        }
        for (lvl, group) in schedule.levels().iter().zip(&samples) {
            if lvl.n_samples != group.len() {
                return Err(Error::InvalidInput(format!(
                    "level {} records {} samples but holds {}",
                    lvl.index,
                    lvl.n_samples,
                    group.len()
                )));
            }
        }
        Ok(Self { prior, schedule, samples })
    }

    /// Total sample count `N_t`.
    pub fn n_total(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Largest log-likelihood over every stored sample.
    pub fn ln_lmax_final(&self) -> f64 {
        self.samples.iter().flatten().map(|s| s.ln_l).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Levels that actually hold samples.
    pub fn sampled_levels(&self) -> impl Iterator<Item = (&Level, &[Sample])> {
        self.schedule
            .levels()
            .iter()
            .zip(&self.samples)
            .filter(|(_, s)| !s.is_empty())
            .map(|(l, s)| (l, s.as_slice()))
    }

    /// Every sample in level-major order, the order used by all weight vectors.
    pub fn flat_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().flatten()
    }

    fn check_finite(&self) -> Result<()> {
        for (level, group) in self.samples.iter().enumerate() {
            for (index, s) in group.iter().enumerate() {
                if s.ln_l.is_nan() || s.ln_l == f64::INFINITY {
                    return Err(Error::Estimator { level, index, value: s.ln_l });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LadderTerm {
    ln_n: f64,
    ln_rho: f64,
    ln_threshold: f64,
}

fn ladder_terms(trace: &RunTrace) -> Vec<LadderTerm> {
    trace
        .sampled_levels()
        .map(|(l, s)| LadderTerm { ln_n: (s.len() as f64).ln(), ln_rho: l.ln_rho_hat, ln_threshold: l.ln_threshold })
        .collect()
}

#[inline]
fn ln_soft(ln_l: f64, ln_threshold: f64) -> f64 {
    if ln_threshold == f64::NEG_INFINITY {
        0.0
    } else {
        (ln_l - ln_threshold).min(0.0)
    }
}

fn ln_denominator(ln_l: f64, terms: &[LadderTerm]) -> f64 {
    let parts: Vec<f64> = terms.iter().map(|t| t.ln_n - t.ln_rho + ln_soft(ln_l, t.ln_threshold)).collect();
    log_sum_exp(&parts)
}

/// `ln L_{i,k} − D_{i,k}` for every sample, level-major.
fn ln_balance_terms(trace: &RunTrace) -> Result<Vec<f64>> {
    trace.check_finite()?;
    let terms = ladder_terms(trace);
    if terms.is_empty() {
        return Err(Error::InvalidInput("trace holds no samples".into()));
    }
    let flat: Vec<f64> = trace.flat_samples().map(|s| s.ln_l).collect();
    Ok(flat.par_iter().map(|&l| if l == f64::NEG_INFINITY { l } else { l - ln_denominator(l, &terms) }).collect())
}

/// Balance-heuristic MIS estimate of `ln z` from every sample of every level.
pub fn log_evidence_mis(trace: &RunTrace) -> Result<f64> {
    Ok(log_sum_exp(&ln_balance_terms(trace)?))
}

/// Sequential-importance-sampling estimate
/// `ln l̂^max + Σ_{i≥1} ln mean β_i`, available only on a terminated ladder.
pub fn log_evidence_sis(trace: &RunTrace) -> Option<f64> {
    let levels = trace.schedule.levels();
    if levels.len() < 2 || !trace.schedule.is_terminated() {
        return None;
    }
    let sum: f64 = levels[1..].iter().map(|l| l.mean_beta.ln()).sum();
    Some(trace.ln_lmax_final() + sum)
}

/// Normalised importance weights with their effective sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// Normalised weights, level-major, summing to one.
    pub weights: Vec<f64>,
    /// `ln Σ w` of the unnormalised weights.
    pub ln_total: f64,
    /// `(Σw)² / Σw²`, which treats samples as independent; an upper bound
    /// under MCMC dependence.
    pub ess: f64,
}

impl Weights {
    /// Normalise log-domain weights. Fails if every weight is zero.
    pub fn from_log(ln_w: &[f64]) -> Result<Self> {
        let ln_total = log_sum_exp(ln_w);
        if !ln_total.is_finite() {
            return Err(Error::Numerical("all posterior weights are zero".into()));
        }
        let weights: Vec<f64> = ln_w.iter().map(|&x| (x - ln_total).exp()).collect();
        let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
        let sum = pairwise_sum(&weights);
        let ess = (sum * sum / pairwise_sum(&sq)).clamp(1.0, weights.len() as f64);
        Ok(Self { weights, ln_total, ess })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `ESS = (Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum = pairwise_sum(weights);
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    sum * sum / pairwise_sum(&sq)
}

/// Balance-heuristic posterior weights `ln w = ln N_t + ln L − D`.
pub fn posterior_weights(trace: &RunTrace) -> Result<Weights> {
    let ln_nt = (trace.n_total() as f64).ln();
    let ln_w: Vec<f64> = ln_balance_terms(trace)?.into_iter().map(|x| x + ln_nt).collect();
    Weights::from_log(&ln_w)
}

/// How to draw posterior samples from weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampler {
    #[default]
    Multinomial,
    Systematic,
}

/// Draw `m` indices with replacement proportionally to `weights`.
pub fn resample_indices<R: Rng + ?Sized>(weights: &[f64], m: usize, kind: Resampler, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let find = |x: f64| cdf.partition_point(|&c| c <= x).min(weights.len() - 1);
    match kind {
        Resampler::Multinomial => (0..m).map(|_| find(rng.random::<f64>() * total)).collect(),
        Resampler::Systematic => {
            let start: f64 = rng.random::<f64>();
            (0..m).map(|k| find((start + k as f64) / m as f64 * total)).collect()
        }
    }
}

/// Resample `m` physical-space draws from the trace.
pub fn resample<R: Rng + ?Sized>(trace: &RunTrace, weights: &Weights, m: usize, kind: Resampler, rng: &mut R) -> Vec<Vec<f64>> {
    let flat: Vec<&Sample> = trace.flat_samples().collect();
    resample_samples(&flat, &trace.prior, weights, m, kind, rng)
}

/// Resample `m` physical-space draws from `samples`, aligned with `weights`.
pub fn resample_samples<R: Rng + ?Sized>(
    samples: &[&Sample],
    prior: &PriorSpec,
    weights: &Weights,
    m: usize,
    kind: Resampler,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let transform = prior.transform();
    resample_indices(&weights.weights, m, kind, rng)
        .into_iter()
        .map(|i| {
            let mut theta = vec![0.0; samples[i].u.len()];
            transform.to_physical_into(&samples[i].u, &mut theta);
            theta
        })
        .collect()
}

/// Posterior weights, ESS and resampled draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub weights: Weights,
    pub draws: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn ess(&self) -> f64 {
        self.weights.ess
    }

    /// Weighted mean and standard deviation of coordinate `j` over the draws.
    pub fn mean_std(&self, j: usize) -> (f64, f64) {
        let n = self.draws.len() as f64;
        let mean = self.draws.iter().map(|d| d[j]).sum::<f64>() / n;
        let var = self.draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, var.sqrt())
    }
}

/// Per-level output of the MIS variance diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelVariance {
    pub level: usize,
    pub n: usize,
    /// `ln Ẑ_i`, the level's share of the evidence.
    pub ln_z: f64,
    /// `ln Σ̂_i` (`-∞` when the level's terms are all equal).
    pub ln_sigma2: f64,
}

/// Independence-based variance indicator of the MIS estimator.
///
/// Chains make samples dependent, so this understates the true variance; it
/// is a diagnostic, not a confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDiagnostic {
    pub levels: Vec<LevelVariance>,
    /// `ln Σ_i Σ̂_i / N_i`.
    pub ln_var: f64,
}

impl VarianceDiagnostic {
    /// `sqrt(Var)/ẑ`.
    pub fn relative_std(&self, ln_z: f64) -> f64 {
        (0.5 * self.ln_var - ln_z).exp()
    }
}

pub fn mis_variance_diagnostic(trace: &RunTrace) -> Result<VarianceDiagnostic> {
    let terms = ln_balance_terms(trace)?;
    let mut levels = Vec::new();
    let mut offset = 0;
    let mut ln_parts = Vec::new();
    for (idx, group) in trace.samples.iter().enumerate() {
        let n = group.len();
        if n == 0 {
            continue;
        }
        // ln(α_i w_i) = ln N_i + ln L − D.
        let ln_n = (n as f64).ln();
        let x: Vec<f64> = terms[offset..offset + n].iter().map(|t| t + ln_n).collect();
        offset += n;
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (ln_z, ln_sigma2) = if m == f64::NEG_INFINITY {
            (f64::NEG_INFINITY, f64::NEG_INFINITY)
        } else {
            let scaled: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let mean = pairwise_sum(&scaled) / n as f64;
            let dev: Vec<f64> = scaled.iter().map(|s| (s - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / n as f64;
            (m + mean.ln(), 2.0 * m + var.ln())
        };
        ln_parts.push(ln_sigma2 - ln_n);
        levels.push(LevelVariance { level: idx, n, ln_z, ln_sigma2 });
    }
    Ok(VarianceDiagnostic { levels, ln_var: log_sum_exp(&ln_parts) })
}

/// Evidence estimates of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub ln_z_mis: f64,
    /// Withheld when the ladder did not terminate.
    pub ln_z_sis: Option<f64>,
    pub n_cal: u64,
    pub variance: Option<VarianceDiagnostic>,
}

/// One-sample Kolmogorov–Smirnov statistic against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let hi = (i + 1) as f64 / n;
            let lo = i as f64 / n;
            (hi - f).abs().max((f - lo).abs())
        })
        .fold(0.0, f64::max)
}

/// K-S statistic of a weighted empirical distribution against `cdf`.
pub fn ks_statistic_weighted(values: &[f64], weights: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for i in idx {
        let f = cdf(values[i]);
        let lo = acc / total;
        acc += weights[i];
        let hi = acc / total;
        d = d.max((hi - f).abs()).max((f - lo).abs());
    }
    d
}

/// Convenience: `ln((1/N) Σ exp(x))` for callers building their own estimators.
pub fn ln_mean_exp(xs: &[f64]) -> f64 {
    log_mean_exp(xs)
}
