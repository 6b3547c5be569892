//! Subset simulation as a special case of multiple importance sampling.
//!
//! Level `i` is the prior truncated to `L > l_i`. Thresholds are empirical
//! `(1 − p_c)` quantiles, and the evidence is the segmented sum
//! `Σ_i φ̂_i E_i[min(L − l_i, l_{i+1} − l_i)]` over the threshold ladder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{resample_samples, PosteriorDraws, Resampler, Weights};
use crate::math::{ln_one_minus_exp, log_sum_exp, log_mean_exp};
use crate::model::{PriorSpec, TargetModel};
use crate::sampler::{
    draw_prior, plan_chains, run_level, thin_seeds, Purpose, Sample, SliceTarget, StreamKey, DEFAULT_MAX_SHRINK,
};

/// One subset level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusLevel {
    pub index: usize,
    /// `ln l_i`; `-∞` at level 0.
    pub ln_l: f64,
    /// Cumulative `ln φ̂_i`.
    pub ln_phi_hat: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SusConfig {
    pub n: usize,
    pub p_c: f64,
    pub max_levels: usize,
    pub seed: u64,
    /// Stop once a level adds less than this fraction of the evidence so far.
    pub stop_tol: f64,
    pub resampler: Resampler,
    pub n_resample: Option<usize>,
    pub max_shrink: usize,
}

impl Default for SusConfig {
    fn default() -> Self {
        Self {
            n: 500,
            p_c: 0.1,
            max_levels: 100,
            seed: 0,
            stop_tol: 1e-6,
            resampler: Resampler::Multinomial,
            n_resample: None,
            max_shrink: DEFAULT_MAX_SHRINK,
        }
    }
}

impl SusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if !(self.p_c > 0.0 && self.p_c < 1.0) {
            return bad("p_c", "must lie in (0, 1)");
        }
        let survivors = self.n as f64 * self.p_c;
        if self.n < 2 || survivors < 1.0 || survivors > (self.n - 1) as f64 {
            return bad("n", "n·p_c must leave between 1 and n − 1 survivors");
        }
        if self.max_levels < 1 {
            return bad("max_levels", "must be at least 1");
        }
        Ok(())
    }
}

/// Why the ladder stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SusStop {
    /// The last level's share of the evidence fell below the tolerance.
    Converged,
    /// No threshold above the current one has any strict exceedance.
    QuantileStalled,
    MaxLevels,
}

/// A finished subset-simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusTrace {
    pub prior: PriorSpec,
    pub levels: Vec<SusLevel>,
    /// `ln l_I`, the top of the last segment: the largest observed likelihood.
    pub ln_l_top: f64,
    pub samples: Vec<Vec<Sample>>,
    pub stop: SusStop,
}

impl SusTrace {
    /// Build a trace from its parts; `ln_l_top` is set to the largest stored likelihood.
    pub fn new(prior: PriorSpec, levels: Vec<SusLevel>, samples: Vec<Vec<Sample>>, stop: SusStop) -> Result<Self> {
        if levels.is_empty() || levels.len() != samples.len() {
            return Err(Error::InvalidInput("levels and sample groups must match and be non-empty".into()));
        }
        if levels[0].ln_l != f64::NEG_INFINITY || levels[0].ln_phi_hat != 0.0 {
            return Err(Error::InvalidInput("level 0 must be the untruncated prior".into()));
        }
        for w in levels.windows(2) {
            if !(w[1].ln_l > w[0].ln_l) || w[1].ln_phi_hat > w[0].ln_phi_hat {
                return Err(Error::InvalidInput("thresholds must increase and φ̂ must not".into()));
            }
        }
        for (l, s) in levels.iter().zip(&samples) {
            if l.n_samples != s.len() || s.is_empty() {
                return Err(Error::InvalidInput(format!("level {} sample count mismatch", l.index)));
            }
        }
        let ln_l_top = samples.iter().flatten().map(|s| s.ln_l).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { prior, levels, ln_l_top, samples, stop })
    }

    pub fn n_total(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// `ln l_{i+1}`, with `l_I` the top of the ladder.
    fn ln_upper(&self, i: usize) -> f64 {
        self.levels.get(i + 1).map_or(self.ln_l_top, |l| l.ln_l)
    }
}

/// `ln(min(L − lo, hi − lo) · 1[L > lo])` with every argument in log form.
pub fn ln_segment(ln_l: f64, ln_lo: f64, ln_hi: f64) -> f64 {
    if !(ln_l > ln_lo) {
        return f64::NEG_INFINITY;
    }
    let top = ln_l.min(ln_hi);
    if ln_lo == f64::NEG_INFINITY {
        top
    } else if top <= ln_lo {
        f64::NEG_INFINITY
    } else {
        top + ln_one_minus_exp(ln_lo - top)
    }
}

/// `ln Σ_i φ̂_i · mean_k seg_{i,k}`.
pub fn sus_log_evidence(trace: &SusTrace) -> Result<f64> {
    let mut parts = Vec::with_capacity(trace.levels.len());
    for (i, (lvl, group)) in trace.levels.iter().zip(&trace.samples).enumerate() {
        let ln_hi = trace.ln_upper(i);
        let segs = level_segments(i, lvl, group, ln_hi)?;
        parts.push(lvl.ln_phi_hat + log_mean_exp(&segs));
    }
    Ok(log_sum_exp(&parts))
}

fn level_segments(i: usize, lvl: &SusLevel, group: &[Sample], ln_hi: f64) -> Result<Vec<f64>> {
    group
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if s.ln_l.is_nan() || s.ln_l == f64::INFINITY {
                Err(Error::Estimator { level: i, index: k, value: s.ln_l })
            } else {
                Ok(ln_segment(s.ln_l, lvl.ln_l, ln_hi))
            }
        })
        .collect()
}

/// `w_{i,k} = (N_t/N_i) φ̂_i seg_{i,k}`, level-major.
pub fn sus_posterior_weights(trace: &SusTrace) -> Result<Weights> {
    let ln_nt = (trace.n_total() as f64).ln();
    let mut ln_w = Vec::with_capacity(trace.n_total());
    for (i, (lvl, group)) in trace.levels.iter().zip(&trace.samples).enumerate() {
        let base = ln_nt - (group.len() as f64).ln() + lvl.ln_phi_hat;
        ln_w.extend(level_segments(i, lvl, group, trace.ln_upper(i))?.into_iter().map(|s| base + s));
    }
    Weights::from_log(&ln_w)
}

/// Next threshold from sorted log-likelihoods: the midpoint of the two order
/// statistics around the `(1 − p_c)` quantile, moved down to a tied value if
/// nothing would strictly exceed it. `None` if no value has an exceedance.
pub fn next_threshold(sorted: &[f64], p_c: f64) -> Option<f64> {
    let n = sorted.len();
    let k = n - (n as f64 * p_c).round() as usize;
    let (a, b) = (sorted[k - 1], sorted[k]);
    let mid = if a == f64::NEG_INFINITY { b } else { 0.5 * (a + b) };
    if sorted[n - 1] > mid {
        return Some(mid);
    }
    // Largest value with a strict exceedance.
    let top = sorted[n - 1];
    sorted.iter().rev().copied().find(|&v| v < top)
}

#[derive(Debug, Clone)]
pub struct SusResult {
    pub trace: SusTrace,
    pub ln_z: f64,
    pub posterior: PosteriorDraws,
    pub n_cal: u64,
}

pub fn run_sus(model: &TargetModel, config: &SusConfig) -> Result<SusResult> {
    config.validate()?;
    let evals_before = model.eval_count();
    let mut levels = vec![SusLevel { index: 0, ln_l: f64::NEG_INFINITY, ln_phi_hat: 0.0, n_samples: config.n }];
    let mut samples = vec![draw_prior(model, config.n, StreamKey::new(config.seed, 0, 0, Purpose::PriorDraws))];
    let mut ln_contrib: Vec<f64> = Vec::new();

    let stop = loop {
        let i = levels.len() - 1;
        let cur = &levels[i];
        let group = &samples[i];
        let mut sorted: Vec<f64> = group.iter().map(|s| s.ln_l).collect();
        sorted.sort_by(f64::total_cmp);
        let ln_next = match next_threshold(&sorted, config.p_c) {
            Some(l) if l > cur.ln_l => l,
            _ => break SusStop::QuantileStalled,
        };

        let segs = level_segments(i, cur, group, ln_next)?;
        ln_contrib.push(cur.ln_phi_hat + log_mean_exp(&segs));
        if i > 0 && ln_contrib[i] - log_sum_exp(&ln_contrib) < config.stop_tol.ln() {
            break SusStop::Converged;
        }
        if levels.len() >= config.max_levels {
            break SusStop::MaxLevels;
        }

        let survivors: Vec<Sample> = group.iter().filter(|s| s.ln_l > ln_next).cloned().collect();
        let ln_phi_hat = cur.ln_phi_hat + (survivors.len() as f64 / group.len() as f64).ln();
        let key = |purpose| StreamKey::new(config.seed, i + 1, 0, purpose);
        let plan = plan_chains(config.n, survivors.len());
        let seeds = thin_seeds(&survivors, plan.n_chains, &mut key(Purpose::Thin).rng())?;
        let target = SliceTarget::Indicator { ln_threshold: ln_next };
        let next = run_level(&seeds, plan, &target, model, key(Purpose::Chain), config.max_shrink)?;
        levels.push(SusLevel { index: i + 1, ln_l: ln_next, ln_phi_hat, n_samples: next.len() });
        samples.push(next);
    };

    let trace = SusTrace::new(model.prior().clone(), levels, samples, stop)?;
    let ln_z = sus_log_evidence(&trace)?;
    let weights = sus_posterior_weights(&trace)?;
    let m = config.n_resample.unwrap_or(weights.ess.floor() as usize);
    let flat: Vec<&Sample> = trace.samples.iter().flatten().collect();
    let draws = resample_samples(
        &flat,
        &trace.prior,
        &weights,
        m,
        config.resampler,
        &mut StreamKey::new(config.seed, 0, 0, Purpose::Resample).rng(),
    );
    let n_cal = model.eval_count() - evals_before;
    Ok(SusResult { trace, ln_z, posterior: PosteriorDraws { weights, draws }, n_cal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(ln_l: f64) -> Sample {
        Sample { u: vec![0.0], ln_l }
    }

    #[test]
    fn segment_cases() {
        assert_eq!(ln_segment(1.0, 2.0, 3.0), f64::NEG_INFINITY);
        assert_eq!(ln_segment(2.0, 2.0, 3.0), f64::NEG_INFINITY);
        assert!((ln_segment(1.0, f64::NEG_INFINITY, 3.0) - 1.0).abs() < 1e-15);
        let want = (4f64.exp() - 2f64.exp()).ln();
        assert!((ln_segment(5.0, 2.0, 4.0) - want).abs() < 1e-14);
        let want = (3f64.exp() - 2f64.exp()).ln();
        assert!((ln_segment(3.0, 2.0, 4.0) - want).abs() < 1e-14);
    }

    fn hand_trace() -> SusTrace {
        let levels = vec![
            SusLevel { index: 0, ln_l: f64::NEG_INFINITY, ln_phi_hat: 0.0, n_samples: 3 },
            SusLevel { index: 1, ln_l: -1.0, ln_phi_hat: (1.0f64 / 3.0).ln(), n_samples: 3 },
        ];
        let samples = vec![vec![s(-3.0), s(-0.5), s(-2.0)], vec![s(-1.2), s(0.2), s(-0.1)]];
        SusTrace::new(PriorSpec::iid_uniform(1, 0.0, 1.0).unwrap(), levels, samples, SusStop::Converged).unwrap()
    }

    // Linear-domain evaluation of the segmented sum.
    fn brute(trace: &SusTrace) -> (f64, Vec<f64>) {
        let mut th: Vec<f64> = trace.levels.iter().map(|l| l.ln_l.exp()).collect();
        th.push(trace.ln_l_top.exp());
        let nt = trace.n_total() as f64;
        let mut z = 0.0;
        let mut w = Vec::new();
        for (i, g) in trace.samples.iter().enumerate() {
            let phi = trace.levels[i].ln_phi_hat.exp();
            for x in g {
                let l = x.ln_l.exp();
                let seg = if l > th[i] { (l - th[i]).min(th[i + 1] - th[i]) } else { 0.0 };
                z += phi * seg / g.len() as f64;
                w.push(nt / g.len() as f64 * phi * seg);
            }
        }
        let tot: f64 = w.iter().sum();
        (z.ln(), w.into_iter().map(|x| x / tot).collect())
    }

    #[test]
    fn hand_trace_matches_brute_force() {
        let t = hand_trace();
        assert_eq!(t.ln_l_top, 0.2);
        let (ln_z, w) = brute(&t);
        assert!((sus_log_evidence(&t).unwrap() - ln_z).abs() < 1e-12);
        let got = sus_posterior_weights(&t).unwrap();
        for (a, b) in got.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        // Level-1 sample below its threshold gets zero weight.
        assert_eq!(got.weights[3], 0.0);
    }

    #[test]
    fn threshold_rule() {
        let sorted: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(next_threshold(&sorted, 0.1), Some(8.5));
        assert_eq!(next_threshold(&sorted, 0.2), Some(7.5));
        assert_eq!(next_threshold(&[1.0, 2.0, 2.0, 2.0], 0.25), Some(1.0));
        assert_eq!(next_threshold(&[2.0; 4], 0.25), None);
        assert_eq!(next_threshold(&[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 1.0], 0.5), Some(0.0));
    }

    #[test]
    fn constant_likelihood_is_exact() {
        let model = TargetModel::new(PriorSpec::iid_uniform(2, 0.0, 1.0).unwrap(), |_: &[f64]| -2.5);
        let res = run_sus(&model, &SusConfig { n: 100, ..Default::default() }).unwrap();
        assert_eq!(res.trace.levels.len(), 1);
        assert_eq!(res.trace.stop, SusStop::QuantileStalled);
        assert!((res.ln_z + 2.5).abs() < 1e-12);
    }

    #[test]
    fn linear_likelihood_on_unit_interval() {
        let model = TargetModel::new(PriorSpec::iid_uniform(1, 0.0, 1.0).unwrap(), |t: &[f64]| t[0].ln());
        let mut v = Vec::new();
        for seed in 0..20 {
            v.push(run_sus(&model, &SusConfig { n: 1000, seed, ..Default::default() }).unwrap().ln_z);
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5f64.ln()).abs() < 0.02, "{mean}");
    }

    #[test]
    fn chains_stay_above_threshold() {
        let model = TargetModel::new(PriorSpec::iid_uniform(2, -5.0, 5.0).unwrap(), |t: &[f64]| {
            -0.5 * (t[0] * t[0] + t[1] * t[1])
        });
        let res = run_sus(&model, &SusConfig { n: 200, seed: 4, ..Default::default() }).unwrap();
        for (lvl, g) in res.trace.levels.iter().zip(&res.trace.samples).skip(1) {
            assert!(g.iter().all(|x| x.ln_l > lvl.ln_l));
        }
        for w in res.trace.levels.windows(2) {
            let ratio = (w[1].ln_phi_hat - w[0].ln_phi_hat).exp();
            assert!((ratio - 0.1).abs() < 0.06, "{ratio}");
        }
        assert_eq!(res.n_cal, model.eval_count());
    }

    proptest! {
        #[test]
        fn segments_telescope(ln_l in -50.0f64..50.0, mut cuts in prop::collection::vec(-60.0f64..60.0, 0..8), extra in 0.0f64..5.0) {
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut ladder = vec![f64::NEG_INFINITY];
            ladder.extend(cuts.into_iter().filter(|&c| c < ln_l + extra));
            let top = ladder.last().copied().unwrap().max(ln_l) + extra;
            ladder.push(top);
            let parts: Vec<f64> = ladder.windows(2).map(|w| ln_segment(ln_l, w[0], w[1])).collect();
            let total = log_sum_exp(&parts);
            prop_assert!((total - ln_l).abs() < 1e-12);
        }
    }
}
