use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semis::estimators::{effective_sample_size, log_evidence_mis, posterior_weights, resample_indices, Resampler, Weights};
use semis::sampler::Sample;
use semis::schedule::{Level, Schedule, ScheduleConfig};
use semis::{PriorSpec, RunTrace};

fn ladder(thresholds: &[f64], n: usize, lls: &[f64]) -> RunTrace {
    let mut levels = vec![Level::prior(n)];
    for (i, &t) in thresholds.iter().enumerate() {
        let mut l = Level::prior(n);
        l.index = i + 1;
        l.ln_r = -0.5;
        l.ln_lmax_before = t + 0.5;
        l.ln_threshold = t;
        l.mean_beta = 0.3;
        l.ln_rho_hat = (i + 1) as f64 * 0.3f64.ln();
        levels.push(l);
    }
    let samples = (0..levels.len())
        .map(|j| (0..n).map(|k| Sample { u: vec![0.0], ln_l: lls[(j * n + k) % lls.len()] }).collect())
        .collect();
    let schedule = Schedule::from_levels(levels, ScheduleConfig::default()).unwrap();
    RunTrace::new(PriorSpec::iid_uniform(1, 0.0, 1.0).unwrap(), schedule, samples).unwrap()
}

proptest! {
    #[test]
    fn weights_normalise_and_ess_is_bounded(lls in prop::collection::vec(-30.0f64..10.0, 1..40), t0 in -20.0f64..0.0) {
        let trace = ladder(&[t0, t0 + 2.0], 4, &lls);
        let w = posterior_weights(&trace).unwrap();
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.ess >= 1.0 && w.ess <= w.len() as f64 + 1e-9);
        // ln z_MIS = ln Σw − ln N_t.
        let lz = log_evidence_mis(&trace).unwrap();
        prop_assert!((lz - (w.ln_total - (trace.n_total() as f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn mis_is_shift_equivariant(lls in prop::collection::vec(-10.0f64..10.0, 1..20), c in -50.0f64..50.0) {
        // Scaling L by e^c and every threshold with it scales z by e^c.
        let a = ladder(&[-3.0, -1.0], 3, &lls);
        let shifted: Vec<f64> = lls.iter().map(|l| l + c).collect();
        let b = ladder(&[-3.0 + c, -1.0 + c], 3, &shifted);
        prop_assert!((log_evidence_mis(&b).unwrap() - log_evidence_mis(&a).unwrap() - c).abs() < 1e-9);
    }

    #[test]
    fn systematic_counts_are_floor_or_ceil(ws in prop::collection::vec(0.0f64..1.0, 1..30), m in 1usize..200, seed in 0u64..1000) {
        let total: f64 = ws.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = ws.iter().map(|x| x / total).collect();
        let idx = resample_indices(&w, m, Resampler::Systematic, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(idx.len(), m);
        let mut counts = vec![0usize; w.len()];
        for i in idx {
            counts[i] += 1;
        }
        for (c, wi) in counts.iter().zip(&w) {
            let e = wi * m as f64;
            prop_assert!(*c as f64 >= (e - 1e-9).floor());
            prop_assert!(*c as f64 <= (e + 1e-9).ceil());
        }
    }
}

#[test]
fn ess_of_uniform_and_degenerate_weights() {
    assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
    assert!((effective_sample_size(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
    assert!(Weights::from_log(&[f64::NEG_INFINITY; 3]).is_err());
}

#[test]
fn multinomial_frequencies_track_weights() {
    let w = [0.1, 0.6, 0.3];
    let idx = resample_indices(&w, 60_000, Resampler::Multinomial, &mut ChaCha8Rng::seed_from_u64(8));
    for (j, wj) in w.iter().enumerate() {
        let f = idx.iter().filter(|&&i| i == j).count() as f64 / 60_000.0;
        assert!((f - wj).abs() < 0.01);
    }
}
