use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semis::estimators::ks_statistic;
use semis::math::norm_cdf;
use semis::sampler::{draw_prior, ess_step, plan_chains, run_level, Purpose, Sample, SliceTarget, StreamKey, DEFAULT_MAX_SHRINK};
use semis::{PriorSpec, TargetModel};

fn bump(x: f64) -> f64 {
    -0.5 * ((x - 0.7) / 0.1).powi(2)
}

// Normalised CDF of a density on [0, 1] by cumulative trapezoid.
fn grid_cdf(density: impl Fn(f64) -> f64, m: usize) -> impl Fn(f64) -> f64 {
    let h = 1.0 / m as f64;
    let mut cum = vec![0.0; m + 1];
    for i in 0..m {
        cum[i + 1] = cum[i] + 0.5 * h * (density(i as f64 * h) + density((i + 1) as f64 * h));
    }
    let total = cum[m];
    move |x: f64| {
        let t = (x.clamp(0.0, 1.0) / h).min(m as f64 - 1e-9);
        let i = t as usize;
        (cum[i] + (t - i as f64) * (cum[i + 1] - cum[i])) / total
    }
}

fn model_1d() -> TargetModel {
    TargetModel::new(PriorSpec::iid_uniform(1, 0.0, 1.0).unwrap(), |t: &[f64]| bump(t[0]))
}

#[test]
fn many_short_chains_keep_the_soft_level_stationary() {
    let model = model_1d();
    let ln_t = -2.0;
    // Exact seeds by rejection from the prior.
    let mut seeds = Vec::new();
    let pool = draw_prior(&model, 20_000, StreamKey::new(9, 0, 0, Purpose::PriorDraws));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in pool {
        let accept = (s.ln_l - ln_t).min(0.0).exp();
        if rand::Rng::random::<f64>(&mut rng) < accept {
            seeds.push(s);
        }
        if seeds.len() == 500 {
            break;
        }
    }
    let plan = plan_chains(40_000, seeds.len());
    assert_eq!(plan.n_chains, 500);
    let out = run_level(&seeds, plan, &SliceTarget::soft(ln_t), &model, StreamKey::new(9, 1, 0, Purpose::Chain), DEFAULT_MAX_SHRINK).unwrap();
    let xs: Vec<f64> = out.iter().map(|s| norm_cdf(s.u[0])).collect();
    let cdf = grid_cdf(|x| (bump(x) - ln_t).min(0.0).exp(), 100_000);
    assert!(ks_statistic(&xs, cdf) < 0.02);
}

#[test]
fn indicator_level_is_uniform_on_the_superlevel_set() {
    let model = model_1d();
    // {bump > -2} is (0.5, 0.9).
    let target = SliceTarget::Indicator { ln_threshold: -2.0 };
    let mut cur = Sample { u: vec![semis::math::norm_inv_cdf(0.7)], ln_l: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xs = Vec::new();
    for _ in 0..30_000 {
        cur = ess_step(&cur.u, cur.ln_l, &target, &model, &mut rng, DEFAULT_MAX_SHRINK).unwrap();
        assert!(cur.ln_l > -2.0);
        xs.push(norm_cdf(cur.u[0]));
    }
    let d = ks_statistic(&xs, |x| ((x - 0.5) / 0.4).clamp(0.0, 1.0));
    assert!(d < 0.02, "{d}");
}

#[test]
fn chains_are_reproducible_per_stream() {
    let model = TargetModel::new(PriorSpec::iid_uniform(3, -2.0, 2.0).unwrap(), |t: &[f64]| -t.iter().map(|x| x * x).sum::<f64>());
    let seeds = draw_prior(&model, 8, StreamKey::new(1, 0, 0, Purpose::PriorDraws));
    let plan = plan_chains(80, 8);
    let key = StreamKey::new(1, 1, 0, Purpose::Chain);
    let a = run_level(&seeds, plan, &SliceTarget::soft(-1.0), &model, key, DEFAULT_MAX_SHRINK).unwrap();
    let b = run_level(&seeds, plan, &SliceTarget::soft(-1.0), &model, key, DEFAULT_MAX_SHRINK).unwrap();
    assert_eq!(a, b);
    let c = run_level(&seeds, plan, &SliceTarget::soft(-1.0), &model, key.with_attempt(1), DEFAULT_MAX_SHRINK).unwrap();
    assert_ne!(a, c);
}
