//! Plugging in a user likelihood: a linear regression with a Gaussian prior
//! on the intercept and a uniform prior on the slope.

use semis::{run_semis, Marginal, PriorSpec, SemisConfig, TargetModel};

fn main() -> semis::Result<()> {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 2.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.5 + 0.8 * x + 0.3 * (x * 7.0).sin()).collect();
    let sigma = 0.3;

    let prior = PriorSpec::new(vec![Marginal::normal(0.0, 5.0)?, Marginal::uniform(-2.0, 2.0)?])?;
    let model = TargetModel::new(prior, move |t: &[f64]| {
        let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - t[0] - t[1] * x).powi(2)).sum();
        -0.5 * ss / (sigma * sigma) - xs.len() as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
    });

    let res = run_semis(&model, &SemisConfig { seed: 42, ..Default::default() })?;
    let (a, sa) = res.posterior.mean_std(0);
    let (b, sb) = res.posterior.mean_std(1);
    println!("ln z = {:.3} after {} likelihood calls", res.ln_z(), res.n_cal());
    println!("intercept {a:.3} ± {sa:.3}, slope {b:.3} ± {sb:.3}");
    Ok(())
}
