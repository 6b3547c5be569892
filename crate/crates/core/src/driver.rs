//! The SeMIS run loop: build the ladder level by level, then estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    log_evidence_mis, log_evidence_sis, mis_variance_diagnostic, posterior_weights, resample, EvidenceEstimate,
    PosteriorDraws, Resampler, RunTrace,
};
use crate::model::TargetModel;
use crate::sampler::{
    draw_prior, plan_chains, run_level, select_seeds, thin_seeds, Purpose, Sample, SliceTarget, StreamKey,
    DEFAULT_MAX_SHRINK,
};
use crate::schedule::{Schedule, ScheduleConfig};

/// Settings of one SeMIS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisConfig {
    /// Samples per level.
    pub n: usize,
    /// Target mean of `β` per level.
    pub p: f64,
    pub max_levels: usize,
    pub seed: u64,
    /// Add the prior-transform Jacobian to the slice test.
    pub jacobian_in_slice: bool,
    pub resampler: Resampler,
    /// Resampled posterior draws; `None` uses `floor(ESS)`.
    pub n_resample: Option<usize>,
    pub r_tol: f64,
    pub max_shrink: usize,
}

impl Default for SemisConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 0.1,
            max_levels: 100,
            seed: 0,
            jacobian_in_slice: false,
            resampler: Resampler::Multinomial,
            n_resample: None,
            r_tol: 1e-4,
            max_shrink: DEFAULT_MAX_SHRINK,
        }
    }
}

impl SemisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if self.n < 2 {
            return bad("n", "need at least 2 samples per level");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p", "must lie in (0, 1)");
        }
        if self.max_levels < 1 {
            return bad("max_levels", "must be at least 1");
        }
        if !(self.r_tol > 0.0) {
            return bad("r_tol", "must be positive");
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Terminated,
    /// The level budget ran out; the MIS estimate is still reported, SIS is not.
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct SemisResult {
    pub status: RunStatus,
    pub evidence: EvidenceEstimate,
    pub posterior: PosteriorDraws,
    pub trace: RunTrace,
}

impl SemisResult {
    pub fn ln_z(&self) -> f64 {
        self.evidence.ln_z_mis
    }

    pub fn levels_used(&self) -> usize {
        self.trace.schedule.len()
    }

    pub fn n_cal(&self) -> u64 {
        self.evidence.n_cal
    }
}

/// Sample one level from the previous one. `attempt` selects fresh random
/// streams for the collapse retry.
fn sample_level(
    model: &TargetModel,
    config: &SemisConfig,
    schedule: &Schedule,
    prev: &[Sample],
    attempt: u32,
) -> Result<Vec<Sample>> {
    let levels = schedule.levels();
    let cur = &levels[levels.len() - 1];
    let prev_level = &levels[levels.len() - 2];
    let key = |purpose| StreamKey::new(config.seed, cur.index, 0, purpose).with_attempt(attempt);

    let seeds = select_seeds(prev, prev_level, cur, &mut key(Purpose::Screen).rng())?;
    let plan = plan_chains(config.n, seeds.len());
    let seeds = thin_seeds(&seeds, plan.n_chains, &mut key(Purpose::Thin).rng())?;
    let target = SliceTarget::Soft { ln_threshold: cur.ln_threshold, with_jacobian: config.jacobian_in_slice };
    run_level(&seeds, plan, &target, model, key(Purpose::Chain), config.max_shrink)
}

/// Run SeMIS on `model`.
///
/// Parallel work runs on the current rayon pool; install a sized pool around
/// the call to bound the worker count. Results do not depend on the pool size.
pub fn run_semis(model: &TargetModel, config: &SemisConfig) -> Result<SemisResult> {
    config.validate()?;
    let evals_before = model.eval_count();
    let schedule_config = ScheduleConfig { p: config.p, max_levels: config.max_levels, r_tol: config.r_tol };
    let mut schedule = Schedule::new(schedule_config, config.n);
    let mut samples = vec![draw_prior(model, config.n, StreamKey::new(config.seed, 0, 0, Purpose::PriorDraws))];

    let status = loop {
        if schedule.is_terminated() {
            break RunStatus::Terminated;
        }
        if schedule.len() >= config.max_levels {
            break RunStatus::BudgetExhausted;
        }
        let prev = samples.last().expect("level 0 is always present");
        let batch: Vec<f64> = prev.iter().map(|s| s.ln_l).collect();
        schedule.advance(&batch)?;

        let level = match sample_level(model, config, &schedule, prev, 0) {
            Err(Error::LevelCollapse { .. }) => sample_level(model, config, &schedule, prev, 1),
            other => other,
        };
        let level = match level {
            Ok(level) => level,
            Err(Error::LevelCollapse { level, .. }) => {
                let trace = RunTrace::new(model.prior().clone(), schedule, samples)?;
                return Err(Error::LevelCollapse { level, trace: Some(Box::new(trace)) });
            }
            Err(e) => return Err(e),
        };
        let index = schedule.len() - 1;
        schedule.set_samples(index, level.len());
        samples.push(level);
    };

    let trace = RunTrace::new(model.prior().clone(), schedule, samples)?;
    let ln_z_mis = log_evidence_mis(&trace)?;
    let ln_z_sis = match status {
        RunStatus::Terminated => log_evidence_sis(&trace),
        RunStatus::BudgetExhausted => None,
    };
    let variance = Some(mis_variance_diagnostic(&trace)?);
    let weights = posterior_weights(&trace)?;
    let m = config.n_resample.unwrap_or(weights.ess.floor() as usize);
    let draws = resample(
        &trace,
        &weights,
        m,
        config.resampler,
        &mut StreamKey::new(config.seed, 0, 0, Purpose::Resample).rng(),
    );
    let n_cal = model.eval_count() - evals_before;
    Ok(SemisResult {
        status,
        evidence: EvidenceEstimate { ln_z_mis, ln_z_sis, n_cal, variance },
        posterior: PosteriorDraws { weights, draws },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriorSpec;

    fn gaussian_model(dim: usize, sigma: f64) -> TargetModel {
        TargetModel::new(PriorSpec::iid_uniform(dim, -5.0, 5.0).unwrap(), move |t: &[f64]| {
            -0.5 * t.iter().map(|x| x * x).sum::<f64>() / (sigma * sigma)
        })
    }

    #[test]
    fn gaussian_evidence() {
        // z = (σ √(2π) / 10)^d up to negligible truncation.
        let (dim, sigma) = (2, 0.3);
        let want = dim as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt() / 10.0).ln();
        let model = gaussian_model(dim, sigma);
        let res = run_semis(&model, &SemisConfig { n: 4000, seed: 5, ..Default::default() }).unwrap();
        assert_eq!(res.status, RunStatus::Terminated);
        // Spread across seeds is about 0.07 at this N.
        assert!((res.ln_z() - want).abs() < 0.25, "{} vs {want}", res.ln_z());
        let sis = res.evidence.ln_z_sis.unwrap();
        assert!((sis - want).abs() < 0.25, "{sis} vs {want}");
        assert!(res.levels_used() >= 2);
        assert_eq!(res.n_cal(), model.eval_count());
    }

    #[test]
    fn level_sizes_and_counts() {
        let model = gaussian_model(3, 0.5);
        let cfg = SemisConfig { n: 500, seed: 9, ..Default::default() };
        let res = run_semis(&model, &cfg).unwrap();
        for (lvl, group) in res.trace.schedule.levels().iter().zip(&res.trace.samples) {
            assert_eq!(lvl.n_samples, group.len());
            assert!(group.len().abs_diff(500) <= 250);
        }
        assert_eq!(res.trace.samples[0].len(), 500);
        let w = &res.posterior.weights;
        assert_eq!(w.len(), res.trace.n_total());
        assert_eq!(res.posterior.draws.len(), w.ess.floor() as usize);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SemisConfig { n: 300, seed: 77, ..Default::default() };
        let a = run_semis(&gaussian_model(2, 0.4), &cfg).unwrap();
        let b = run_semis(&gaussian_model(2, 0.4), &cfg).unwrap();
        assert_eq!(a.ln_z().to_bits(), b.ln_z().to_bits());
        assert_eq!(a.trace, b.trace);
        let c = run_semis(&gaussian_model(2, 0.4), &SemisConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.ln_z().to_bits(), c.ln_z().to_bits());
    }

    #[test]
    fn budget_exhaustion_keeps_mis() {
        let model = gaussian_model(2, 0.05);
        let res = run_semis(&model, &SemisConfig { n: 200, max_levels: 2, ..Default::default() }).unwrap();
        assert_eq!(res.status, RunStatus::BudgetExhausted);
        assert_eq!(res.evidence.ln_z_sis, None);
        assert!(res.ln_z().is_finite());
        assert_eq!(res.levels_used(), 2);
    }

    #[test]
    fn flat_likelihood_terminates_immediately() {
        let model = TargetModel::new(PriorSpec::iid_uniform(2, 0.0, 1.0).unwrap(), |_: &[f64]| -3.0);
        let res = run_semis(&model, &SemisConfig { n: 100, ..Default::default() }).unwrap();
        assert_eq!(res.levels_used(), 2);
        assert!((res.ln_z() + 3.0).abs() < 1e-12);
        assert!((res.evidence.ln_z_sis.unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_config() {
        let model = gaussian_model(2, 1.0);
        assert!(matches!(
            run_semis(&model, &SemisConfig { p: 1.5, ..Default::default() }),
            Err(Error::Config { .. })
        ));
    }
}
