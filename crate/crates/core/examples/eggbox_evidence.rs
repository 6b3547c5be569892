//! Evidence of the two-dimensional eggbox likelihood, repeated over a few seeds.
//!
//! Run with `cargo run --release --example eggbox_evidence`.

use semis::{run_semis, Benchmark, BenchmarkCase, SemisConfig};

fn main() -> semis::Result<()> {
    let case = BenchmarkCase::new(Benchmark::Eggbox, 2)?;
    let reference = case.reference_log_evidence().expect("tabulated");
    println!("reference ln z = {reference}");
    println!("{:>4} {:>10} {:>10} {:>7} {:>8} {:>7}", "seed", "ln z MIS", "ln z SIS", "levels", "N_cal", "ESS");
    for seed in 0..5 {
        let model = case.model();
        let res = run_semis(&model, &SemisConfig { seed, ..Default::default() })?;
        println!(
            "{seed:>4} {:>10.4} {:>10.4} {:>7} {:>8} {:>7.0}",
            res.ln_z(),
            res.evidence.ln_z_sis.unwrap_or(f64::NAN),
            res.levels_used(),
            res.n_cal(),
            res.posterior.ess()
        );
    }
    Ok(())
}
