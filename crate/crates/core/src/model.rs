//! Priors, the standard-normal probability transform, target models and the
//! three analytic benchmark likelihoods (Eggbox, Gaussian shells and the
//! Normal/LogGamma mixture).

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_norm_pdf, log_add_exp, norm_cdf, norm_inv_cdf};

/// One independent prior marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, stddev: f64 },
}

impl Marginal {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidInput(format!(
                "uniform marginal needs finite lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Marginal::Uniform { lower, upper })
    }

    pub fn normal(mean: f64, stddev: f64) -> Result<Self> {
        if !(mean.is_finite() && stddev.is_finite() && stddev > 0.0) {
            return Err(Error::InvalidInput(format!(
                "normal marginal needs finite mean and stddev > 0, got ({mean}, {stddev})"
            )));
        }
        Ok(Marginal::Normal { mean, stddev })
    }

    /// `F⁻¹(Φ(u))`. Uniform results are kept strictly inside the support.
    pub fn from_standard(&self, u: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => {
                let width = upper - lower;
                let theta = if u <= 0.0 {
                    lower + width * norm_cdf(u)
                } else {
                    upper - width * norm_cdf(-u)
                };
                if theta <= lower {
                    lower.next_up()
                } else if theta >= upper {
                    upper.next_down()
                } else {
                    theta
                }
            }
            Marginal::Normal { mean, stddev } => mean + stddev * u,
        }
    }

    /// `Φ⁻¹(F(θ))`.
    pub fn to_standard(&self, theta: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => {
                let width = upper - lower;
                let p = (theta - lower) / width;
                if p <= 0.5 {
                    norm_inv_cdf(p)
                } else {
                    -norm_inv_cdf((upper - theta) / width)
                }
            }
            Marginal::Normal { mean, stddev } => (theta - mean) / stddev,
        }
    }

    pub fn ln_density(&self, theta: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => {
                if theta >= lower && theta <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Normal { mean, stddev } => ln_norm_pdf((theta - mean) / stddev) - stddev.ln(),
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        match *self {
            Marginal::Uniform { lower, upper } => theta > lower && theta < upper,
            Marginal::Normal { .. } => theta.is_finite(),
        }
    }
}

/// Independent per-coordinate prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    coords: Vec<Marginal>,
}

impl PriorSpec {
    pub fn new(coords: Vec<Marginal>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("prior needs at least one coordinate".into()));
        }
        for m in &coords {
            // Re-run the constructors' checks for deserialized values.
            match *m {
                Marginal::Uniform { lower, upper } => {
                    Marginal::uniform(lower, upper)?;
                }
                Marginal::Normal { mean, stddev } => {
                    Marginal::normal(mean, stddev)?;
                }
            }
        }
        Ok(Self { coords })
    }

    /// The same uniform marginal on every coordinate.
    pub fn iid_uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![Marginal::uniform(lower, upper)?; dim])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Marginal] {
        &self.coords
    }

    pub fn ln_density(&self, theta: &[f64]) -> f64 {
        self.coords.iter().zip(theta).map(|(m, &t)| m.ln_density(t)).sum()
    }

    pub fn transform(&self) -> ProbTransform<'_> {
        ProbTransform { prior: self }
    }
}

/// Maps standard-normal coordinates to the prior's physical coordinates,
/// `θ_j = F_j⁻¹(Φ(u_j))`.
#[derive(Debug, Clone, Copy)]
pub struct ProbTransform<'a> {
    prior: &'a PriorSpec,
}

impl ProbTransform<'_> {
    fn check(&self, xs: &[f64], what: &str) -> Result<()> {
        if xs.len() != self.prior.dim() {
            return Err(Error::InvalidInput(format!(
                "{what} has length {}, model dimension is {}",
                xs.len(),
                self.prior.dim()
            )));
        }
        if let Some(j) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("{what}[{j}] is not finite")));
        }
        Ok(())
    }

    pub fn to_physical(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u, "u")?;
        let mut theta = vec![0.0; u.len()];
        self.to_physical_into(u, &mut theta);
        Ok(theta)
    }

    /// Unchecked variant for hot loops; `u` must be finite and of the right length.
    pub fn to_physical_into(&self, u: &[f64], theta: &mut [f64]) {
        for ((t, &x), m) in theta.iter_mut().zip(u).zip(&self.prior.coords) {
            *t = m.from_standard(x);
        }
    }

    pub fn to_standard(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, "theta")?;
        for (j, (m, &t)) in self.prior.coords.iter().zip(theta).enumerate() {
            if !m.contains(t) {
                return Err(Error::InvalidInput(format!("theta[{j}] = {t} lies outside the prior support")));
            }
        }
        Ok(self.prior.coords.iter().zip(theta).map(|(m, &t)| m.to_standard(t)).collect())
    }

    /// `Σ_j ln(dT_j/du_j) = Σ_j [ln φ(u_j) − ln π_j(T_j(u_j))]`.
    pub fn log_jacobian(&self, u: &[f64]) -> Result<f64> {
        self.check(u, "u")?;
        Ok(self.log_jacobian_unchecked(u))
    }

    pub(crate) fn log_jacobian_unchecked(&self, u: &[f64]) -> f64 {
        self.prior
            .coords
            .iter()
            .zip(u)
            .map(|(m, &x)| match *m {
                // Closed forms avoid evaluating the density at a rounded θ.
                Marginal::Uniform { lower, upper } => ln_norm_pdf(x) + (upper - lower).ln(),
                Marginal::Normal { stddev, .. } => stddev.ln(),
            })
            .sum()
    }
}

/// A log-likelihood function of the physical parameters.
pub trait LogLikelihood: Send + Sync {
    fn ln_likelihood(&self, theta: &[f64]) -> f64;
}

impl<F> LogLikelihood for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn ln_likelihood(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

/// A prior plus a black-box log-likelihood, with a call counter.
///
/// Every call through [`TargetModel::log_likelihood`] or
/// [`TargetModel::log_likelihood_u`] bumps the counter exactly once, from any
/// number of threads.
pub struct TargetModel {
    prior: PriorSpec,
    loglik: Arc<dyn LogLikelihood>,
    evals: AtomicU64,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModel")
            .field("dim", &self.dim())
            .field("prior", &self.prior)
            .field("evals", &self.eval_count())
            .finish()
    }
}

impl TargetModel {
    pub fn new(prior: PriorSpec, loglik: impl LogLikelihood + 'static) -> Self {
        Self { prior, loglik: Arc::new(loglik), evals: AtomicU64::new(0) }
    }

    pub fn from_arc(prior: PriorSpec, loglik: Arc<dyn LogLikelihood>) -> Self {
        Self { prior, loglik, evals: AtomicU64::new(0) }
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn transform(&self) -> ProbTransform<'_> {
        self.prior.transform()
    }

    /// `ln L(θ)`; counts one evaluation.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.loglik.ln_likelihood(theta)
    }

    /// `ln L(T(u))`; counts one evaluation.
    pub fn log_likelihood_u(&self, u: &[f64]) -> f64 {
        let mut theta = vec![0.0; u.len()];
        self.transform().to_physical_into(u, &mut theta);
        self.log_likelihood(&theta)
    }

    /// Number of likelihood evaluations so far (`N_cal`).
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

// ---------------------------------------------------------------------------
// Benchmarks

/// The analytic benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Eggbox,
    Shells,
    Nlg,
}

impl Benchmark {
    pub fn id(&self) -> &'static str {
        match self {
            Benchmark::Eggbox => "eggbox",
            Benchmark::Shells => "shells",
            Benchmark::Nlg => "nlg",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eggbox" => Ok(Benchmark::Eggbox),
            "shells" | "gaussian-shells" | "gaussianshells" => Ok(Benchmark::Shells),
            "nlg" | "normal-loggamma" => Ok(Benchmark::Nlg),
            other => Err(Error::InvalidInput(format!("unknown example `{other}` (expected eggbox, shells or nlg)"))),
        }
    }
}

/// A benchmark at a given dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenchmarkCase {
    pub id: Benchmark,
    pub dim: usize,
}

impl BenchmarkCase {
    pub fn new(id: Benchmark, dim: usize) -> Result<Self> {
        let ok = match id {
            Benchmark::Eggbox => dim == 2,
            Benchmark::Shells | Benchmark::Nlg => dim >= 2,
        };
        if !ok {
            return Err(Error::InvalidInput(format!("{id} is not defined in dimension {dim}")));
        }
        Ok(Self { id, dim })
    }

    pub fn prior(&self) -> PriorSpec {
        let (lo, hi) = match self.id {
            Benchmark::Eggbox => (0.0, 10.0 * std::f64::consts::PI),
            Benchmark::Shells => (-6.0, 6.0),
            Benchmark::Nlg => (-30.0, 30.0),
        };
        PriorSpec::iid_uniform(self.dim, lo, hi).expect("benchmark priors are valid")
    }

    pub fn model(&self) -> TargetModel {
        let prior = self.prior();
        match self.id {
            Benchmark::Eggbox => TargetModel::new(prior, loglik_eggbox),
            Benchmark::Shells => TargetModel::new(prior, loglik_shells),
            Benchmark::Nlg => TargetModel::new(prior, loglik_nlg),
        }
    }

    pub fn reference_log_evidence(&self) -> Option<f64> {
        reference_log_evidence(self.id, self.dim)
    }
}

/// Eggbox: `ln L = [2 + cos(θ₁/2) cos(θ₂/2)]⁵`.
pub fn loglik_eggbox(theta: &[f64]) -> f64 {
    let c = (theta[0] / 2.0).cos() * (theta[1] / 2.0).cos();
    (2.0 + c).powi(5)
}

const SHELL_RADIUS: f64 = 2.0;
const SHELL_WIDTH: f64 = 0.1;
const SHELL_CENTER: f64 = 3.5;

fn ln_circ(theta: &[f64], center_x: f64) -> f64 {
    let d2: f64 = theta[1..].iter().map(|t| t * t).sum::<f64>() + (theta[0] - center_x).powi(2);
    let dev = d2.sqrt() - SHELL_RADIUS;
    let w2 = SHELL_WIDTH * SHELL_WIDTH;
    -0.5 * (2.0 * std::f64::consts::PI * w2).ln() - dev * dev / (2.0 * w2)
}

/// Two Gaussian shells of radius 2 and width 0.1 centred at `(±3.5, 0, …)`.
pub fn loglik_shells(theta: &[f64]) -> f64 {
    log_add_exp(ln_circ(theta, -SHELL_CENTER), ln_circ(theta, SHELL_CENTER))
}

/// The factor type of coordinate `i` (0-based) in the Normal/LogGamma mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlgFactor {
    /// `0.5 LG(·|−10) + 0.5 LG(·|10)`
    LogGammaMixture,
    /// `0.5 N(·|−10, 1) + 0.5 N(·|10, 1)`
    NormalMixture,
    /// `LG(·|10, 1, 1)`
    LogGamma,
    /// `N(·|10, 1)`
    Normal,
}

/// Coordinates 3 ..= (n+2)/2 (1-based) are LogGamma, the rest Normal.
pub fn nlg_factor(i: usize, n: usize) -> NlgFactor {
    match i {
        0 => NlgFactor::LogGammaMixture,
        1 => NlgFactor::NormalMixture,
        _ if 2 * (i + 1) <= n + 2 => NlgFactor::LogGamma,
        _ => NlgFactor::Normal,
    }
}

const LN_HALF: f64 = -std::f64::consts::LN_2;

/// Log density of the unit-shape, unit-scale LogGamma located at `mu`.
#[inline]
pub fn ln_loggamma_pdf(x: f64, mu: f64) -> f64 {
    let z = x - mu;
    z - z.exp()
}

fn loggamma_cdf(x: f64, mu: f64) -> f64 {
    -(-(x - mu).exp()).exp_m1()
}

/// Per-coordinate contribution `ln L(θ_i)`.
pub fn nlg_factor_ln(i: usize, n: usize, x: f64) -> f64 {
    match nlg_factor(i, n) {
        NlgFactor::LogGammaMixture => log_add_exp(LN_HALF + ln_loggamma_pdf(x, -10.0), LN_HALF + ln_loggamma_pdf(x, 10.0)),
        NlgFactor::NormalMixture => log_add_exp(LN_HALF + ln_norm_pdf(x + 10.0), LN_HALF + ln_norm_pdf(x - 10.0)),
        NlgFactor::LogGamma => ln_loggamma_pdf(x, 10.0),
        NlgFactor::Normal => ln_norm_pdf(x - 10.0),
    }
}

/// Normal/LogGamma mixture: `Σ_i ln L(θ_i)`.
pub fn loglik_nlg(theta: &[f64]) -> f64 {
    let n = theta.len();
    theta.iter().enumerate().map(|(i, &x)| nlg_factor_ln(i, n, x)).sum()
}

fn nlg_factor_cdf(i: usize, n: usize, x: f64) -> f64 {
    match nlg_factor(i, n) {
        NlgFactor::LogGammaMixture => 0.5 * (loggamma_cdf(x, -10.0) + loggamma_cdf(x, 10.0)),
        NlgFactor::NormalMixture => 0.5 * (norm_cdf(x + 10.0) + norm_cdf(x - 10.0)),
        NlgFactor::LogGamma => loggamma_cdf(x, 10.0),
        NlgFactor::Normal => norm_cdf(x - 10.0),
    }
}

/// Exact posterior marginal CDF of coordinate `i` (0-based) for the
/// `n`-dimensional Normal/LogGamma benchmark, renormalised to `[-30, 30]`.
pub fn nlg_marginal_cdf(i: usize, x: f64, n: usize) -> f64 {
    const LO: f64 = -30.0;
    const HI: f64 = 30.0;
    if x <= LO {
        return 0.0;
    }
    if x >= HI {
        return 1.0;
    }
    let base = nlg_factor_cdf(i, n, LO);
    let z = nlg_factor_cdf(i, n, HI) - base;
    ((nlg_factor_cdf(i, n, x) - base) / z).clamp(0.0, 1.0)
}

/// Tabulated reference log evidence.
pub fn reference_log_evidence(id: Benchmark, dim: usize) -> Option<f64> {
    match (id, dim) {
        (Benchmark::Eggbox, 2) => Some(235.86),
        (Benchmark::Shells, 2) => Some(-1.75),
        (Benchmark::Shells, 10) => Some(-14.59),
        (Benchmark::Shells, 30) => Some(-60.13),
        (Benchmark::Nlg, 2) => Some(-8.19),
        (Benchmark::Nlg, 5) => Some(-20.47),
        (Benchmark::Nlg, 10) => Some(-40.94),
        (Benchmark::Nlg, 20) => Some(-81.89),
        _ => None,
    }
}
