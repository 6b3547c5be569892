//! Level sampling: seed screening, chain planning and elliptical slice
//! sampling in standard-normal space.
//!
//! The chains target `φ_n(u) · f(u)` where `f` is the level's soft factor
//! `min[L(T(u))/T_i, 1]` (or the hard indicator `1[L(T(u)) > l_i]` for subset
//! simulation). The prior is carried by the Gaussian ellipse draw, so no
//! Jacobian term enters the slice unless explicitly requested.

use std::f64::consts::TAU;

use rand::distr::{Distribution, Open01};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::round_half_away;
use crate::model::TargetModel;
use crate::schedule::{log_beta_unchecked, Level};

/// A point in standard-normal space with its cached log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub u: Vec<f64>,
    pub ln_l: f64,
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    PriorDraws,
    Screen,
    Thin,
    Chain,
    Resample,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::PriorDraws => 1,
            Purpose::Screen => 2,
            Purpose::Thin => 3,
            Purpose::Chain => 4,
            Purpose::Resample => 5,
        }
    }
}

/// Key of a deterministic random substream.
///
/// Distinct keys give distinct ChaCha seeds; the same key always reproduces
/// the same draws, independent of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub run_seed: u64,
    pub level: u64,
    pub chain: u64,
    pub purpose: Purpose,
    /// Retry counter for level-collapse recovery.
    pub attempt: u32,
}

impl StreamKey {
    pub fn new(run_seed: u64, level: usize, chain: usize, purpose: Purpose) -> Self {
        Self { run_seed, level: level as u64, chain: chain as u64, purpose, attempt: 0 }
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn with_chain(mut self, chain: usize) -> Self {
        self.chain = chain as u64;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.run_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.level.to_le_bytes());
        seed[16..24].copy_from_slice(&self.chain.to_le_bytes());
        let tail = (self.purpose.tag() << 32) | u64::from(self.attempt);
        seed[24..32].copy_from_slice(&tail.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }
}

/// `N` independent prior draws, evaluated in parallel.
pub fn draw_prior(model: &TargetModel, n: usize, key: StreamKey) -> Vec<Sample> {
    let mut rng = key.rng();
    let dim = model.dim();
    let us: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    us.into_par_iter()
        .map(|u| {
            let ln_l = model.log_likelihood_u(&u);
            Sample { u, ln_l }
        })
        .collect()
}

/// Keep each previous-level sample with probability `β_cur`.
///
/// Survivors keep their order. No survivors is reported as a
/// [`Error::LevelCollapse`] without a trace attached.
pub fn select_seeds<R: Rng + ?Sized>(prev: &[Sample], prev_level: &Level, cur_level: &Level, rng: &mut R) -> Result<Vec<Sample>> {
    if prev.is_empty() {
        return Err(Error::Contract("seed screening needs a non-empty sample".into()));
    }
    if cur_level.ln_threshold < prev_level.ln_threshold {
        return Err(Error::Contract("current threshold is below the previous one".into()));
    }
    let (ln_prev, ln_cur) = (prev_level.ln_threshold, cur_level.ln_threshold);
    let seeds: Vec<Sample> = prev
        .iter()
        .filter(|s| {
            let beta = log_beta_unchecked(s.ln_l, ln_prev, ln_cur).exp();
            rng.random::<f64>() < beta
        })
        .cloned()
        .collect();
    if seeds.is_empty() {
        return Err(Error::LevelCollapse { level: cur_level.index, trace: None });
    }
    Ok(seeds)
}

/// Number of chains and their length for one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainPlan {
    pub n_chains: usize,
    pub chain_length: usize,
}

impl ChainPlan {
    pub fn total(&self) -> usize {
        self.n_chains * self.chain_length
    }
}

/// Pick the largest of `round(N/1), round(N/2), …, 1` not exceeding the
/// raw seed count, then set the chain length to `round(N / N_c)`.
pub fn plan_chains(target: usize, n_seeds_raw: usize) -> ChainPlan {
    let target = target.max(1);
    let n_seeds_raw = n_seeds_raw.max(1);
    let n = target as f64;
    let n_chains = (1..=target)
        .map(|j| round_half_away(n / j as f64) as usize)
        .find(|&c| c <= n_seeds_raw)
        .unwrap_or(1)
        .max(1);
    let chain_length = (round_half_away(n / n_chains as f64) as usize).max(1);
    ChainPlan { n_chains, chain_length }
}

/// Uniformly choose `n_chains` seeds without replacement.
pub fn thin_seeds<R: Rng + ?Sized>(seeds: &[Sample], n_chains: usize, rng: &mut R) -> Result<Vec<Sample>> {
    if n_chains > seeds.len() {
        return Err(Error::Contract(format!("asked for {n_chains} seeds, only {} available", seeds.len())));
    }
    Ok(index::sample(rng, seeds.len(), n_chains).into_iter().map(|i| seeds[i].clone()).collect())
}

/// The acceptance rule inside a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SliceTarget {
    /// `φ_n(u) · min[L(T(u))/T, 1]`; `-∞` threshold means the prior itself.
    /// `with_jacobian` adds `ln|∂T/∂u|` to both sides of the slice test.
    Soft { ln_threshold: f64, with_jacobian: bool },
    /// `φ_n(u) · 1[L(T(u)) > l]`.
    Indicator { ln_threshold: f64 },
}

impl SliceTarget {
    pub fn soft(ln_threshold: f64) -> Self {
        SliceTarget::Soft { ln_threshold, with_jacobian: false }
    }

    // Log soft factor (plus optional Jacobian) used on both sides of the slice test.
    fn level_value(&self, ln_l: f64, u: &[f64], model: &TargetModel) -> f64 {
        match *self {
            SliceTarget::Soft { ln_threshold, with_jacobian } => {
                let soft = if ln_threshold == f64::NEG_INFINITY { 0.0 } else { (ln_l - ln_threshold).min(0.0) };
                if with_jacobian {
                    soft + model.transform().log_jacobian_unchecked(u)
                } else {
                    soft
                }
            }
            SliceTarget::Indicator { ln_threshold } => {
                if ln_l > ln_threshold {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn accepts(&self, ln_y: f64, candidate: f64) -> bool {
        match self {
            SliceTarget::Soft { .. } => candidate > ln_y,
            // The indicator slice is [0, 1], so only membership matters.
            SliceTarget::Indicator { .. } => candidate > f64::NEG_INFINITY,
        }
    }

    pub fn is_satisfied(&self, ln_l: f64) -> bool {
        match *self {
            SliceTarget::Soft { .. } => true,
            SliceTarget::Indicator { ln_threshold } => ln_l > ln_threshold,
        }
    }
}

/// Default cap on angle shrinks per transition.
pub const DEFAULT_MAX_SHRINK: usize = 1000;

/// One elliptical slice transition from `u`.
pub fn ess_step<R: Rng + ?Sized>(
    u: &[f64],
    ln_l: f64,
    target: &SliceTarget,
    model: &TargetModel,
    rng: &mut R,
    max_shrink: usize,
) -> Result<Sample> {
    ess_step_traced(u, ln_l, target, model, rng, max_shrink, None)
}

/// [`ess_step`], optionally recording the angle bracket after every rejection.
pub fn ess_step_traced<R: Rng + ?Sized>(
    u: &[f64],
    ln_l: f64,
    target: &SliceTarget,
    model: &TargetModel,
    rng: &mut R,
    max_shrink: usize,
    mut brackets: Option<&mut Vec<(f64, f64)>>,
) -> Result<Sample> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("chain state is not finite".into()));
    }
    let current = target.level_value(ln_l, u, model);
    let gamma: f64 = Open01.sample(rng);
    let ln_y = current + gamma.ln();

    let nu: Vec<f64> = (0..u.len()).map(|_| StandardNormal.sample(rng)).collect();
    let mut alpha = rng.random::<f64>() * TAU;
    let (mut lo, mut hi) = (alpha - TAU, alpha);
    let mut xi = vec![0.0; u.len()];

    for _ in 0..=max_shrink {
        let (s, c) = alpha.sin_cos();
        for ((x, &a), &b) in xi.iter_mut().zip(u).zip(&nu) {
            *x = a * c + b * s;
        }
        let cand_ln_l = model.log_likelihood_u(&xi);
        if cand_ln_l.is_nan() {
            return Err(Error::Numerical("log-likelihood returned NaN".into()));
        }
        let value = target.level_value(cand_ln_l, &xi, model);
        if target.accepts(ln_y, value) {
            return Ok(Sample { u: xi, ln_l: cand_ln_l });
        }
        if alpha < 0.0 {
            lo = alpha;
        } else {
            hi = alpha;
        }
        if let Some(b) = brackets.as_deref_mut() {
            b.push((lo, hi));
        }
        alpha = lo + rng.random::<f64>() * (hi - lo);
    }
    Err(Error::Numerical(format!("elliptical slice did not accept within {max_shrink} shrinks")))
}

/// Run `plan.n_chains` chains of `plan.chain_length` transitions in parallel.
///
/// Output order is chain-major: all of chain 0, then chain 1, and so on.
/// Seeds are not included in the output.
pub fn run_level(
    seeds: &[Sample],
    plan: ChainPlan,
    target: &SliceTarget,
    model: &TargetModel,
    key: StreamKey,
    max_shrink: usize,
) -> Result<Vec<Sample>> {
    if seeds.len() != plan.n_chains {
        return Err(Error::Contract(format!("{} seeds for {} chains", seeds.len(), plan.n_chains)));
    }
    let chains: Vec<Result<Vec<Sample>>> = seeds
        .par_iter()
        .enumerate()
        .map(|(j, seed)| {
            let mut rng = key.with_chain(j).rng();
            let mut out = Vec::with_capacity(plan.chain_length);
            let mut state = seed.clone();
            for _ in 0..plan.chain_length {
                state = ess_step(&state.u, state.ln_l, target, model, &mut rng, max_shrink)
                    .map_err(|e| Error::Numerical(format!("chain {j}: {e}")))?;
                out.push(state.clone());
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::with_capacity(plan.total());
    for chain in chains {
        samples.extend(chain?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriorSpec;

    fn flat_model(dim: usize) -> TargetModel {
        TargetModel::new(PriorSpec::iid_uniform(dim, 0.0, 1.0).unwrap(), |_: &[f64]| 0.0)
    }

    fn level_with_threshold(index: usize, t: f64) -> Level {
        let mut l = Level::prior(0);
        l.index = index;
        l.ln_threshold = t;
        l
    }

    #[test]
    fn plan_examples() {
        assert_eq!(plan_chains(1000, 97), ChainPlan { n_chains: 91, chain_length: 11 });
        assert_eq!(plan_chains(1000, 1000), ChainPlan { n_chains: 1000, chain_length: 1 });
        assert_eq!(plan_chains(1000, 5000), ChainPlan { n_chains: 1000, chain_length: 1 });
        assert_eq!(plan_chains(1000, 1), ChainPlan { n_chains: 1, chain_length: 1000 });
    }

    #[test]
    fn plan_total_close_to_target() {
        for n in [2usize, 7, 100, 500, 1000, 1234] {
            for raw in 1..=n + 3 {
                let plan = plan_chains(n, raw);
                assert!(plan.n_chains <= raw.max(1));
                let diff = plan.total() as f64 - n as f64;
                assert!(diff.abs() <= plan.n_chains as f64 / 2.0, "n={n} raw={raw} plan={plan:?}");
            }
        }
    }

    #[test]
    fn screening_keeps_everything_above_threshold() {
        let prev: Vec<Sample> = (0..50).map(|i| Sample { u: vec![0.0], ln_l: 5.0 + i as f64 }).collect();
        let mut rng = StreamKey::new(1, 1, 0, Purpose::Screen).rng();
        let got = select_seeds(&prev, &level_with_threshold(0, f64::NEG_INFINITY), &level_with_threshold(1, 4.0), &mut rng).unwrap();
        assert_eq!(got, prev);
    }

    #[test]
    fn screening_binomial_count() {
        // ln L = ln T - ln 2 with a prior previous level gives β = 0.5.
        let prev: Vec<Sample> = (0..10_000).map(|_| Sample { u: vec![0.0], ln_l: -std::f64::consts::LN_2 }).collect();
        let mut rng = StreamKey::new(9, 1, 0, Purpose::Screen).rng();
        let got = select_seeds(&prev, &level_with_threshold(0, f64::NEG_INFINITY), &level_with_threshold(1, 0.0), &mut rng).unwrap();
        assert!((got.len() as f64 - 5000.0).abs() < 4.0 * 50.0, "{}", got.len());
    }

    #[test]
    fn screening_errors() {
        let mut rng = StreamKey::new(1, 1, 0, Purpose::Screen).rng();
        let prev_l = level_with_threshold(0, f64::NEG_INFINITY);
        assert!(matches!(select_seeds(&[], &prev_l, &level_with_threshold(1, 0.0), &mut rng), Err(Error::Contract(_))));
        let prev: Vec<Sample> = vec![Sample { u: vec![0.0], ln_l: -1e6 }; 3];
        assert!(matches!(
            select_seeds(&prev, &prev_l, &level_with_threshold(1, 0.0), &mut rng),
            Err(Error::LevelCollapse { level: 1, .. })
        ));
    }

    #[test]
    fn thinning() {
        let seeds: Vec<Sample> = (0..10).map(|i| Sample { u: vec![i as f64], ln_l: 0.0 }).collect();
        let mut rng = StreamKey::new(3, 1, 0, Purpose::Thin).rng();
        let mut all = thin_seeds(&seeds, 10, &mut rng).unwrap();
        all.sort_by(|a, b| a.u[0].total_cmp(&b.u[0]));
        assert_eq!(all, seeds);
        assert!(thin_seeds(&seeds, 11, &mut rng).is_err());

        let a = thin_seeds(&seeds, 4, &mut StreamKey::new(3, 2, 0, Purpose::Thin).rng()).unwrap();
        let b = thin_seeds(&seeds, 4, &mut StreamKey::new(3, 2, 0, Purpose::Thin).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thinning_single_seed_is_uniform() {
        let seeds: Vec<Sample> = (0..5).map(|i| Sample { u: vec![i as f64], ln_l: 0.0 }).collect();
        let mut counts = [0usize; 5];
        let reps = 5000;
        for r in 0..reps {
            let mut rng = StreamKey::new(r, 1, 0, Purpose::Thin).rng();
            let pick = thin_seeds(&seeds, 1, &mut rng).unwrap();
            counts[pick[0].u[0] as usize] += 1;
        }
        let e = reps as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 4 degrees of freedom, 99.9% quantile ≈ 18.47.
        assert!(chi2 < 18.47, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn flat_target_accepts_first_candidate() {
        let model = flat_model(3);
        let mut rng = StreamKey::new(1, 1, 0, Purpose::Chain).rng();
        let target = SliceTarget::soft(0.0);
        let mut s = Sample { u: vec![0.1, 0.2, 0.3], ln_l: 0.0 };
        for _ in 0..100 {
            s = ess_step(&s.u, s.ln_l, &target, &model, &mut rng, DEFAULT_MAX_SHRINK).unwrap();
        }
        assert_eq!(model.eval_count(), 100);
    }

    #[test]
    fn bracket_shrinks_toward_zero() {
        // Narrow target around u = 0.3 forces many rejections.
        let model = TargetModel::new(PriorSpec::iid_uniform(1, 0.0, 1.0).unwrap(), |t: &[f64]| -1e4 * (t[0] - 0.6179).powi(2));
        let target = SliceTarget::soft(0.0);
        let mut rng = StreamKey::new(2, 1, 0, Purpose::Chain).rng();
        let mut s = Sample { u: vec![0.3], ln_l: model.log_likelihood_u(&[0.3]) };
        let mut saw_rejections = false;
        for _ in 0..200 {
            let mut br = Vec::new();
            s = ess_step_traced(&s.u, s.ln_l, &target, &model, &mut rng, DEFAULT_MAX_SHRINK, Some(&mut br)).unwrap();
            saw_rejections |= !br.is_empty();
            let mut width = TAU;
            for &(lo, hi) in &br {
                assert!(lo <= 0.0 && hi >= 0.0);
                assert!(hi - lo <= width);
                width = hi - lo;
            }
        }
        assert!(saw_rejections);
    }

    #[test]
    fn indicator_chain_stays_above_threshold() {
        let model = TargetModel::new(PriorSpec::iid_uniform(2, -1.0, 1.0).unwrap(), |t: &[f64]| -(t[0] * t[0] + t[1] * t[1]));
        let target = SliceTarget::Indicator { ln_threshold: -0.25 };
        let seed = Sample { u: vec![0.0, 0.0], ln_l: 0.0 };
        let plan = ChainPlan { n_chains: 1, chain_length: 500 };
        let out = run_level(&[seed], plan, &target, &model, StreamKey::new(4, 1, 0, Purpose::Chain), DEFAULT_MAX_SHRINK).unwrap();
        assert_eq!(out.len(), 500);
        assert!(out.iter().all(|s| s.ln_l > -0.25));
    }

    #[test]
    fn run_level_is_deterministic() {
        let model = flat_model(2);
        let seeds = vec![Sample { u: vec![0.0, 0.0], ln_l: 0.0 }; 4];
        let plan = ChainPlan { n_chains: 4, chain_length: 5 };
        let key = StreamKey::new(11, 3, 0, Purpose::Chain);
        let a = run_level(&seeds, plan, &SliceTarget::soft(0.0), &model, key, 10).unwrap();
        let b = run_level(&seeds, plan, &SliceTarget::soft(0.0), &model, key, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(run_level(&seeds[..3], plan, &SliceTarget::soft(0.0), &model, key, 10).is_err());
    }

    #[test]
    fn stream_keys_are_distinct() {
        let a: u64 = StreamKey::new(1, 2, 3, Purpose::Chain).rng().random();
        let b: u64 = StreamKey::new(1, 2, 4, Purpose::Chain).rng().random();
        let c: u64 = StreamKey::new(1, 2, 3, Purpose::Screen).rng().random();
        let d: u64 = StreamKey::new(1, 2, 3, Purpose::Chain).with_attempt(1).rng().random();
        assert!(a != b && a != c && a != d);
    }
}
