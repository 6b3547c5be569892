//! Posterior sampling on the Normal/LogGamma mixture: per-coordinate
//! Kolmogorov-Smirnov distances of resampled draws to the exact marginals.
//!
//! `cargo run --release --example nlg_posterior -- 20` picks the dimension.

use semis::experiment::nlg_ks;
use semis::{run_semis, Benchmark, BenchmarkCase, SemisConfig};

fn main() -> semis::Result<()> {
    let dim: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse()).expect("dimension must be an integer");
    let case = BenchmarkCase::new(Benchmark::Nlg, dim)?;
    let res = run_semis(&case.model(), &SemisConfig { n: 2000, seed: 3, ..Default::default() })?;
    println!("ln z = {:.3}, exact {:.3}", res.ln_z(), -(dim as f64) * 60f64.ln());
    println!("N_cal = {}, ESS = {:.0}, draws = {}", res.n_cal(), res.posterior.ess(), res.posterior.draws.len());
    for (j, d) in nlg_ks(&res.posterior.draws, dim).iter().enumerate() {
        println!("  dim {:>2}: K-S = {d:.4}", j + 1);
    }
    Ok(())
}
