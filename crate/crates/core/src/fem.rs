//! Shear-building model updating from modal data.
//!
//! An `n`-story chain with story stiffnesses `k_i` and floor masses `m_i`.
//! Parameters are multipliers: `θ = [stiffness multipliers; mass multipliers]`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LogLikelihood, Marginal, PriorSpec, TargetModel};

/// Nominal story stiffnesses (N/m) and floor masses (kg), bottom to top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearBuilding {
    pub stiffness: Vec<f64>,
    pub mass: Vec<f64>,
}

impl ShearBuilding {
    pub fn new(stiffness: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if stiffness.is_empty() || stiffness.len() != mass.len() {
            return Err(Error::InvalidInput("need one stiffness and one mass per story".into()));
        }
        if stiffness.iter().chain(&mass).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("stiffnesses and masses must be positive".into()));
        }
        Ok(Self { stiffness, mass })
    }

    /// Four-story frame with the story properties of the common
    /// structural-health-monitoring benchmark frame.
    pub fn demo() -> Self {
        Self {
            stiffness: vec![106.6e6, 67.9e6, 67.9e6, 67.9e6],
            mass: vec![3452.4, 2652.4, 2652.4, 1809.9],
        }
    }

    pub fn n_stories(&self) -> usize {
        self.stiffness.len()
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_stories()
    }

    /// Stiffness multipliers `U(0, 1.5)`, mass multipliers `U(0.9, 1.1)`.
    pub fn prior(&self) -> PriorSpec {
        let n = self.n_stories();
        let mut coords = vec![Marginal::Uniform { lower: 0.0, upper: 1.5 }; n];
        coords.extend(vec![Marginal::Uniform { lower: 0.9, upper: 1.1 }; n]);
        PriorSpec::new(coords).expect("fixed bounds are valid")
    }

    /// Stiffness matrix (row-major, `n × n`) and the mass diagonal.
    pub fn assemble(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_stories();
        if theta.len() != 2 * n {
            return Err(Error::InvalidInput(format!("expected {} parameters, got {}", 2 * n, theta.len())));
        }
        if theta.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput("multipliers must be positive".into()));
        }
        let k: Vec<f64> = self.stiffness.iter().zip(&theta[..n]).map(|(k, t)| k * t).collect();
        let m: Vec<f64> = self.mass.iter().zip(&theta[n..]).map(|(m, t)| m * t).collect();
        let mut kk = vec![0.0; n * n];
        for i in 0..n {
            kk[i * n + i] = k[i] + k.get(i + 1).copied().unwrap_or(0.0);
            if i + 1 < n {
                kk[i * n + i + 1] = -k[i + 1];
                kk[(i + 1) * n + i] = -k[i + 1];
            }
        }
        Ok((kk, m))
    }
}

/// Natural frequencies (Hz, ascending) and mass-normalised mode shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    pub frequencies: Vec<f64>,
    pub shapes: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
/// Returns eigenvalues ascending and eigenvectors as columns of the result.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= 1e-12 * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) > 1e-12 * norm {
        return Err(Error::Numerical(format!("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&j| (0..n).map(|i| v[i * n + j]).collect()).collect();
    Ok((values, vectors))
}

/// Solve `K φ = (2πf)² M φ` for diagonal `M`.
pub fn eigensolve(k: &[f64], m: &[f64]) -> Result<Modes> {
    let n = m.len();
    if k.len() != n * n {
        return Err(Error::InvalidInput("stiffness matrix size does not match the mass diagonal".into()));
    }
    if m.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("masses must be positive".into()));
    }
    let s: Vec<f64> = m.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = s[i] * k[i * n + j] * s[j];
        }
    }
    let (values, vectors) = jacobi_eigen(&a, n)?;
    if values.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Numerical("stiffness matrix is not positive definite".into()));
    }
    Ok(Modes {
        frequencies: values.iter().map(|l| l.sqrt() / (2.0 * PI)).collect(),
        shapes: vectors.into_iter().map(|v| v.iter().zip(&s).map(|(x, si)| x * si).collect()).collect(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modal assurance criterion `(aᵀb)² / ((aᵀa)(bᵀb))`.
pub fn mac(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("mode shapes differ in length".into()));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidInput("zero mode shape".into()));
    }
    let ab = dot(a, b);
    Ok(ab * ab / (aa * bb))
}

/// Scale to unit length with the largest-magnitude entry positive.
pub fn normalize_shape(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    let sign = if lead < 0.0 { -1.0 } else { 1.0 };
    v.iter().map(|x| sign * x / norm).collect()
}

/// Pair each data mode with a computed mode, highest MAC first, without
/// replacement. Entry `j` is the computed index matched to data mode `j`.
pub fn greedy_match(data: &[Vec<f64>], computed: &[Vec<f64>]) -> Result<Vec<usize>> {
    if data.len() > computed.len() {
        return Err(Error::InvalidInput("more data modes than computed modes".into()));
    }
    let mut pairs = Vec::with_capacity(data.len() * computed.len());
    for (j, d) in data.iter().enumerate() {
        for (c, v) in computed.iter().enumerate() {
            pairs.push((mac(d, v)?, j, c));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; data.len()];
    let mut used = vec![false; computed.len()];
    for (_, j, c) in pairs {
        if out[j] == usize::MAX && !used[c] {
            out[j] = c;
            used[c] = true;
        }
    }
    Ok(out)
}

/// Identified modal parameters with a diagonal covariance, stored as
/// standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalData {
    pub frequencies: Vec<f64>,
    pub shapes: Vec<Vec<f64>>,
    pub frequency_sd: Vec<f64>,
    pub shape_sd: f64,
}

impl ModalData {
    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }
}

/// `-(ω̂ − ω)ᵀ Ĉ⁻¹ (ω̂ − ω) / 2` after matching and sign alignment.
/// Returns `-∞` where the model cannot be solved.
pub fn modal_loglik(theta: &[f64], building: &ShearBuilding, data: &ModalData) -> f64 {
    let modes = match building.assemble(theta).and_then(|(k, m)| eigensolve(&k, &m)) {
        Ok(m) => m,
        Err(_) => return f64::NEG_INFINITY,
    };
    let shapes: Vec<Vec<f64>> = modes.shapes.iter().map(|s| normalize_shape(s)).collect();
    let matched = match greedy_match(&data.shapes, &shapes) {
        Ok(m) => m,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut q = 0.0;
    for (j, &c) in matched.iter().enumerate() {
        let df = (data.frequencies[j] - modes.frequencies[c]) / data.frequency_sd[j];
        q += df * df;
        let sign = if dot(&data.shapes[j], &shapes[c]) < 0.0 { -1.0 } else { 1.0 };
        for (d, s) in data.shapes[j].iter().zip(&shapes[c]) {
            let e = (d - sign * s) / data.shape_sd;
            q += e * e;
        }
    }
    -0.5 * q
}

/// Modal-data likelihood as a [`LogLikelihood`].
#[derive(Debug, Clone)]
pub struct ModalLikelihood {
    pub building: ShearBuilding,
    pub data: ModalData,
}

impl LogLikelihood for ModalLikelihood {
    fn ln_likelihood(&self, theta: &[f64]) -> f64 {
        modal_loglik(theta, &self.building, &self.data)
    }
}

/// Frequency standard deviation as a fraction of the frequency.
pub const FREQUENCY_COV: f64 = 0.005;
/// Mode-shape entry standard deviation.
pub const SHAPE_SD: f64 = 0.01;
/// Stiffness multiplier of a damaged story.
pub const DAMAGED_MULTIPLIER: f64 = 0.6;

/// Damaged stories (0-based) of each pattern.
pub fn damaged_stories(pattern: u8) -> Result<&'static [usize]> {
    match pattern {
        0 => Ok(&[]),
        1 => Ok(&[0]),
        2 => Ok(&[0, 2]),
        _ => Err(Error::InvalidInput(format!("unknown damage pattern {pattern}"))),
    }
}

/// A synthetic updating problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemCase {
    pub pattern: u8,
    pub building: ShearBuilding,
    pub data: ModalData,
    pub theta_true: Vec<f64>,
}

impl FemCase {
    pub fn model(&self) -> TargetModel {
        let lik = ModalLikelihood { building: self.building.clone(), data: self.data.clone() };
        TargetModel::from_arc(self.building.prior(), Arc::new(lik))
    }
}

/// Build the demo case for `pattern`. Every mode is observed; data are the
/// true modal parameters plus Gaussian noise whose covariance is the
/// assumed `Ĉ` times `noise_cov_scale` (0 gives noiseless data).
pub fn make_case<R: Rng + ?Sized>(pattern: u8, noise_cov_scale: f64, rng: &mut R) -> Result<FemCase> {
    if !(noise_cov_scale >= 0.0 && noise_cov_scale.is_finite()) {
        return Err(Error::InvalidInput("noise covariance scale must be non-negative".into()));
    }
    let building = ShearBuilding::demo();
    let n = building.n_stories();
    let mut theta_true = vec![1.0; 2 * n];
    for &s in damaged_stories(pattern)? {
        theta_true[s] = DAMAGED_MULTIPLIER;
    }
    let (k, m) = building.assemble(&theta_true)?;
    let modes = eigensolve(&k, &m)?;
    let scale = noise_cov_scale.sqrt();
    let mut frequencies = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for (f, shape) in modes.frequencies.iter().zip(&modes.shapes) {
        let z: f64 = StandardNormal.sample(rng);
        frequencies.push(f * (1.0 + scale * FREQUENCY_COV * z));
        let noisy: Vec<f64> = normalize_shape(shape)
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                x + scale * SHAPE_SD * z
            })
            .collect();
        shapes.push(normalize_shape(&noisy));
    }
    let frequency_sd = modes.frequencies.iter().map(|f| FREQUENCY_COV * f).collect();
    let data = ModalData { frequencies, shapes, frequency_sd, shape_sd: SHAPE_SD };
    Ok(FemCase { pattern, building, data, theta_true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn assemble_small_chains() {
        let b = ShearBuilding::new(vec![5.0], vec![2.0]).unwrap();
        assert_eq!(b.assemble(&[1.0, 1.0]).unwrap(), (vec![5.0], vec![2.0]));
        let b = ShearBuilding::new(vec![3.0, 3.0], vec![1.0, 1.0]).unwrap();
        let (k, _) = b.assemble(&[1.0; 4]).unwrap();
        assert_eq!(k, vec![6.0, -3.0, -3.0, 3.0]);
        assert!(b.assemble(&[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn single_story_frequency() {
        let modes = eigensolve(&[400.0], &[4.0]).unwrap();
        assert!((modes.frequencies[0] - 10.0 / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn two_story_spectrum() {
        let (k, m) = (2.5e7, 1.3e3);
        let b = ShearBuilding::new(vec![k, k], vec![m, m]).unwrap();
        let (kk, mm) = b.assemble(&[1.0; 4]).unwrap();
        let modes = eigensolve(&kk, &mm).unwrap();
        let want = [(k / m) * (3.0 - 5f64.sqrt()) / 2.0, (k / m) * (3.0 + 5f64.sqrt()) / 2.0];
        for (f, w) in modes.frequencies.iter().zip(want) {
            let lam = (2.0 * PI * f).powi(2);
            assert!(((lam - w) / w).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_chain_spectrum() {
        let n = 7;
        let b = ShearBuilding::new(vec![2.0; n], vec![0.5; n]).unwrap();
        let (kk, mm) = b.assemble(&vec![1.0; 2 * n]).unwrap();
        let modes = eigensolve(&kk, &mm).unwrap();
        for (j, f) in modes.frequencies.iter().enumerate() {
            let angle = (2 * j + 1) as f64 * PI / (2.0 * (2 * n + 1) as f64);
            let want = 4.0 * 4.0 * angle.sin().powi(2);
            let lam = (2.0 * PI * f).powi(2);
            assert!(((lam - want) / want).abs() < 1e-10, "mode {j}: {lam} vs {want}");
        }
    }

    #[test]
    fn mac_properties() {
        let a = [1.0, 2.0, -0.5];
        assert!((mac(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((mac(&a, &[-1.0, -2.0, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mac(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(mac(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn noiseless_truth_is_the_maximum() {
        let case = make_case(1, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(case.theta_true[0], 0.6);
        assert!(modal_loglik(&case.theta_true, &case.building, &case.data).abs() < 1e-12);
        let mut off = case.theta_true.clone();
        off[1] = 0.9;
        assert!(modal_loglik(&off, &case.building, &case.data) < -1.0);
    }

    #[test]
    fn single_frequency_discrepancy() {
        let mut case = make_case(0, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let delta = 0.03;
        case.data.frequencies[2] += delta;
        let sd = case.data.frequency_sd[2];
        let got = modal_loglik(&case.theta_true, &case.building, &case.data);
        assert!((got + delta * delta / (2.0 * sd * sd)).abs() < 1e-9);
    }

    #[test]
    fn matching_ignores_sign_and_order() {
        let case = make_case(2, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let theta = [0.7, 1.1, 0.5, 0.9, 1.0, 1.05, 0.95, 1.0];
        let base = modal_loglik(&theta, &case.building, &case.data);
        let mut flipped = case.data.clone();
        flipped.shapes[1].iter_mut().for_each(|x| *x = -*x);
        assert_eq!(modal_loglik(&theta, &case.building, &flipped), base);
        let mut reordered = case.data.clone();
        reordered.frequencies.swap(0, 3);
        reordered.shapes.swap(0, 3);
        reordered.frequency_sd.swap(0, 3);
        assert!((modal_loglik(&theta, &case.building, &reordered) - base).abs() < 1e-9 * base.abs());
    }

    #[test]
    fn loglik_outside_support() {
        let case = make_case(0, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut theta = case.theta_true.clone();
        theta[0] = 0.0;
        assert_eq!(modal_loglik(&theta, &case.building, &case.data), f64::NEG_INFINITY);
    }

    fn residuals(k: &[f64], m: &[f64], modes: &Modes) -> (f64, f64) {
        let n = m.len();
        let (mut res, mut orth) = (0.0f64, 0.0f64);
        for (a, (fa, pa)) in modes.frequencies.iter().zip(&modes.shapes).enumerate() {
            let lam = (2.0 * PI * fa).powi(2);
            let kp: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j] * pa[j]).sum()).collect();
            let r: f64 = (0..n).map(|i| (kp[i] - lam * m[i] * pa[i]).powi(2)).sum::<f64>().sqrt();
            res = res.max(r / dot(&kp, &kp).sqrt());
            for (b, pb) in modes.shapes.iter().enumerate() {
                let g: f64 = (0..n).map(|i| pa[i] * m[i] * pb[i]).sum();
                orth = orth.max((g - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
        (res, orth)
    }

    proptest! {
        #[test]
        fn random_chains_solve_accurately(
            k in prop::collection::vec(1e6f64..2e8, 1..9),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<f64> = k.iter().map(|_| Rng::random_range(&mut rng, 500.0..5000.0)).collect();
            let b = ShearBuilding::new(k.clone(), m).unwrap();
            let theta: Vec<f64> = (0..b.n_params()).map(|_| Rng::random_range(&mut rng, 0.2..1.5)).collect();
            let (kk, mm) = b.assemble(&theta).unwrap();
            for i in 0..k.len() {
                for j in 0..k.len() {
                    prop_assert_eq!(kk[i * k.len() + j], kk[j * k.len() + i]);
                }
            }
            let modes = eigensolve(&kk, &mm).unwrap();
            let (res, orth) = residuals(&kk, &mm, &modes);
            prop_assert!(res <= 1e-8, "residual {}", res);
            prop_assert!(orth <= 1e-10, "orthonormality {}", orth);
            prop_assert!(modes.frequencies.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
