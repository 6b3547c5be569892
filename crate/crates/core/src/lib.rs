//! Sequential multiple importance sampling (SeMIS) for Bayesian evidence and
//! posterior sampling.
//!
//! A run builds a ladder of softly truncated priors
//! `q_i ∝ π(θ) · min[L(θ)/T_i, 1]`, samples each level with elliptical slice
//! sampling in standard-normal space, and combines every sample into one
//! balance-heuristic importance sampling estimate of the evidence. Posterior
//! draws come from importance resampling. Subset simulation is included as a
//! baseline, read as the hard-truncation special case of the same estimator.
//!
//! ```
//! use semis::{run_semis, PriorSpec, SemisConfig, TargetModel};
//!
//! // Gaussian likelihood under a uniform prior on [-5, 5]².
//! let prior = PriorSpec::iid_uniform(2, -5.0, 5.0)?;
//! let model = TargetModel::new(prior, |t: &[f64]| -0.5 * (t[0] * t[0] + t[1] * t[1]) / 0.09);
//! let result = run_semis(&model, &SemisConfig { n: 500, seed: 1, ..Default::default() })?;
//! let exact = 2.0 * (0.3 * (2.0 * std::f64::consts::PI).sqrt() / 10.0f64).ln();
//! assert!((result.ln_z() - exact).abs() < 0.5);
//! # Ok::<(), semis::Error>(())
//! ```

pub mod driver;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod fem;
pub mod math;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod sus;

pub use driver::{run_semis, RunStatus, SemisConfig, SemisResult};
pub use error::{Error, Result};
pub use estimators::{EvidenceEstimate, PosteriorDraws, Resampler, RunTrace, Weights};
pub use model::{Benchmark, BenchmarkCase, LogLikelihood, Marginal, PriorSpec, TargetModel};
pub use sus::{run_sus, SusConfig, SusResult};
