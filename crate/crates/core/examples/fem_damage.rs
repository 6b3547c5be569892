//! Damage localisation on a four-story shear building from noisy modal data.
//!
//! `cargo run --release --example fem_damage -- 2` selects damage pattern 2.

use semis::experiment::{fem_command, RunConfig};

fn main() -> semis::Result<()> {
    let pattern: u8 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("pattern must be 0, 1 or 2");
    let report = fem_command(&RunConfig { seed: 1, ..Default::default() }, pattern)?;
    println!("ln z: pattern {pattern} = {:.2}, undamaged = {:.2}", report.ln_z, report.baseline_ln_z);
    println!("{:<4} {:>6} {:>8} {:>7} {:>9}", "", "true", "mean", "std", "change %");
    for r in &report.rows {
        println!("{:<4} {:>6.2} {:>8.3} {:>7.3} {:>9.1}", r.parameter, r.theta_true, r.mean, r.std, 100.0 * r.change);
    }
    Ok(())
}
