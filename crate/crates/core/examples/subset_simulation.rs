//! Subset simulation next to SeMIS on the same problem.

use semis::{run_semis, run_sus, Benchmark, BenchmarkCase, SemisConfig, SusConfig};

fn main() -> semis::Result<()> {
    let case = BenchmarkCase::new(Benchmark::Nlg, 2)?;
    println!("reference ln z = {:.3}", -2.0 * 60f64.ln());
    for seed in 0..3 {
        let sus = run_sus(&case.model(), &SusConfig { seed, ..Default::default() })?;
        let semis = run_semis(&case.model(), &SemisConfig { seed, ..Default::default() })?;
        println!(
            "seed {seed}: SuS ln z = {:.3} ({} levels, ESS/N_cal = {:.3})   SeMIS ln z = {:.3} ({} levels, ESS/N_cal = {:.3})",
            sus.ln_z,
            sus.trace.levels.len(),
            sus.posterior.ess() / sus.n_cal as f64,
            semis.ln_z(),
            semis.levels_used(),
            semis.posterior.ess() / semis.n_cal() as f64,
        );
    }
    Ok(())
}
