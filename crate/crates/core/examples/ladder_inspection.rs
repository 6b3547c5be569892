//! The adaptive ladder of one run: thresholds, acceptance rates, the running
//! normaliser and each level's share of the evidence.

use semis::estimators::mis_variance_diagnostic;
use semis::{run_semis, Benchmark, BenchmarkCase, SemisConfig};

fn main() -> semis::Result<()> {
    let case = BenchmarkCase::new(Benchmark::Nlg, 5)?;
    let res = run_semis(&case.model(), &SemisConfig { seed: 5, ..Default::default() })?;
    let diag = mis_variance_diagnostic(&res.trace)?;
    println!("{:>5} {:>9} {:>11} {:>9} {:>9} {:>6} {:>10}", "level", "ln r", "ln T", "mean β", "ln ρ", "N", "share");
    for (lvl, v) in res.trace.schedule.levels().iter().zip(&diag.levels) {
        println!(
            "{:>5} {:>9.4} {:>11.4} {:>9.4} {:>9.4} {:>6} {:>10.2e}",
            lvl.index,
            lvl.ln_r,
            lvl.ln_threshold,
            lvl.mean_beta,
            lvl.ln_rho_hat,
            lvl.n_samples,
            (v.ln_z - res.ln_z()).exp()
        );
    }
    println!("ln z = {:.4}, relative std (independence approx.) = {:.3}", res.ln_z(), diag.relative_std(res.ln_z()));
    Ok(())
}
