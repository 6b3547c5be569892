//! Gaussian shells in 2 and 10 dimensions: evidence, ladder depth and the
//! fraction of posterior draws on each shell.

use semis::{run_semis, Benchmark, BenchmarkCase, SemisConfig};

fn main() -> semis::Result<()> {
    for dim in [2, 10] {
        let case = BenchmarkCase::new(Benchmark::Shells, dim)?;
        let res = run_semis(&case.model(), &SemisConfig { seed: 11, ..Default::default() })?;
        let left = res.posterior.draws.iter().filter(|d| d[0] < 0.0).count();
        println!(
            "{dim:>2}D  ln z = {:.3} (reference {:.2})  levels = {}  N_cal = {}  left shell share = {:.2}",
            res.ln_z(),
            case.reference_log_evidence().unwrap_or(f64::NAN),
            res.levels_used(),
            res.n_cal(),
            left as f64 / res.posterior.draws.len() as f64
        );
    }
    Ok(())
}
