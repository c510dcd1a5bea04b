//! Analytic Gaussian-mixture prior with an exact denoiser.
//!
//! Under the noising kernel `x_t = α x₀ + σ ε`, component `j` of
//! `Σ wⱼ N(μⱼ, τⱼ² I)` gives `x_t | j ~ N(α μⱼ, (α² τⱼ² + σ²) I)`, so
//! `E[x₀ | x_t]` and `Cov[x₀ | x_t]` are available in closed form.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::spectral::SpectralOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance `τ²`. Zero is allowed and gives a point mass.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    dim: usize,
    components: Vec<Component>,
}

/// `m₀|t` and the scalar posterior variance `r_t² = tr Cov[x₀|x_t] / d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub mean: Vec<f64>,
    pub scalar_var: f64,
}

/// Exact Gaussian posterior of `x₀ | y` for a single-Gaussian prior, with the
/// covariance diagonal in the operator's `V` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub mean: Vec<f64>,
    /// Posterior variance of each represented mode.
    pub mode_variances: Vec<f64>,
    /// Variance along every null-space direction (equals the prior `τ²`).
    pub null_variance: f64,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(invalid("component mean must be non-empty"));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            check_len("component mean", dim, c.mean.len())?;
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(invalid(format!("component {j} weight {} invalid", c.weight)));
            }
            if !(c.variance >= 0.0) || !c.variance.is_finite() {
                return Err(invalid(format!("component {j} variance {} invalid", c.variance)));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("component {j} mean is non-finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { dim, components })
    }

    /// Weights are normalized before validation.
    pub fn with_unnormalized_weights(mut components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(invalid("weights must have positive sum"));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components)
    }

    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![Component {
            weight: 1.0,
            mean,
            variance,
        }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }

    /// Full mixture covariance, row-major `d × d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mu = self.mean();
        let mut cov = vec![0.0; d * d];
        for c in &self.components {
            for i in 0..d {
                cov[i * d + i] += c.weight * c.variance;
                let di = c.mean[i] - mu[i];
                for k in 0..d {
                    cov[i * d + k] += c.weight * di * (c.mean[k] - mu[k]);
                }
            }
        }
        cov
    }

    /// Component posterior probabilities given `x_t`.
    pub fn responsibilities(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Result<Vec<f64>> {
        check_len("x_t", self.dim, x_t.len())?;
        check_noise_level(alpha, sigma)?;
        Ok(self.responsibilities_raw(x_t, alpha, sigma))
    }

    fn responsibilities_raw(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
        let d = self.dim as f64;
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                if c.weight == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let v = alpha * alpha * c.variance + sigma * sigma;
                let dist2: f64 = x_t
                    .iter()
                    .zip(&c.mean)
                    .map(|(x, m)| (x - alpha * m).powi(2))
                    .sum();
                c.weight.ln() - 0.5 * d * v.ln() - 0.5 * dist2 / v
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= total;
        }
        w
    }

    /// Exact `E[x₀ | x_t]` and `tr Cov[x₀ | x_t] / d`.
    pub fn denoise(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Result<DenoiserOutput> {
        check_len("x_t", self.dim, x_t.len())?;
        check_noise_level(alpha, sigma)?;
        let resp = self.responsibilities_raw(x_t, alpha, sigma);
        let d = self.dim;
        let s2 = sigma * sigma;
        let mut mean = vec![0.0; d];
        let mut within = 0.0;
        let mut comp_means = Vec::with_capacity(self.components.len());
        for (c, &g) in self.components.iter().zip(&resp) {
            let v = alpha * alpha * c.variance + s2;
            let gain = alpha * c.variance / v;
            let mj: Vec<f64> = x_t
                .iter()
                .zip(&c.mean)
                .map(|(x, m)| m + gain * (x - alpha * m))
                .collect();
            if g > 0.0 {
                for (o, v) in mean.iter_mut().zip(&mj) {
                    *o += g * v;
                }
                within += g * c.variance * s2 / v;
            }
            comp_means.push(mj);
        }
        let mut between = 0.0;
        for (mj, &g) in comp_means.iter().zip(&resp) {
            if g > 0.0 {
                between += g * mj.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        Ok(DenoiserOutput {
            mean,
            scalar_var: within + between / d as f64,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = if self.components.len() == 1 {
            0
        } else {
            let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
            WeightedIndex::new(&weights)
                .expect("validated weights")
                .sample(rng)
        };
        let c = &self.components[j];
        if c.variance == 0.0 {
            return c.mean.clone();
        }
        let tau = c.variance.sqrt();
        c.mean
            .iter()
            .map(|m| m + tau * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Posterior of `x₀ | y` under `y = Hx₀ + N(0, σ_y² I)` for a one-component prior.
    pub fn exact_linear_posterior(&self, op: &SpectralOperator, y: &[f64], sigma_y: f64) -> Result<ExactPosterior> {
        if self.components.len() != 1 {
            return Err(invalid("exact posterior requires a single-Gaussian prior"));
        }
        if !(sigma_y > 0.0) {
            return Err(invalid("sigma_y must be positive"));
        }
        check_len("prior dimension", op.in_dim(), self.dim)?;
        let c = &self.components[0];
        let tau2 = c.variance;
        let s2y = sigma_y * sigma_y;
        let hm = op.apply(&c.mean)?;
        let resid: Vec<f64> = y.iter().zip(&hm).map(|(a, b)| a - b).collect();
        let mut z = op.ut(&resid)?;
        let mut mode_variances = Vec::with_capacity(z.len());
        for (zi, &s) in z.iter_mut().zip(op.singulars()) {
            let denom = tau2 * s * s + s2y;
            *zi *= tau2 * s / denom;
            mode_variances.push(tau2 * s2y / denom);
        }
        let delta = op.v(&z)?;
        Ok(ExactPosterior {
            mean: c.mean.iter().zip(&delta).map(|(a, b)| a + b).collect(),
            mode_variances,
            null_variance: tau2,
        })
    }

    /// Equal-weight mixture centered on procedurally generated smooth images.
    pub fn template_bank<R: Rng + ?Sized>(shape: Shape, count: usize, variance: f64, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(invalid("template bank needs at least one template"));
        }
        let components = (0..count)
            .map(|i| Component {
                weight: 1.0 / count as f64,
                mean: smooth_template(shape, i, rng),
                variance,
            })
            .collect();
        Self::with_unnormalized_weights(components)
    }

    /// Loads a prior from its JSON description. Relative mean-image paths are
    /// resolved against the JSON file's directory.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let desc: PriorDescription = serde_json::from_str(&text)?;
        desc.build(path.parent().unwrap_or(Path::new(".")))
    }
}

fn check_noise_level(alpha: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("denoiser needs sigma_t > 0, got {sigma}")));
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("denoiser needs alpha_t > 0, got {alpha}")));
    }
    Ok(())
}

/// On-disk prior bank description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDescription {
    pub weights: Vec<f64>,
    pub means: Vec<MeanSource>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSource {
    Inline(Vec<f64>),
    /// Path to a PGM/PPM image.
    File(String),
}

impl PriorDescription {
    pub fn build(&self, base: &Path) -> Result<GaussianMixturePrior> {
        let n = self.weights.len();
        if self.means.len() != n || self.variances.len() != n {
            return Err(Error::Config {
                path: "prior".into(),
                message: format!(
                    "weights/means/variances lengths differ: {}/{}/{}",
                    n,
                    self.means.len(),
                    self.variances.len()
                ),
            });
        }
        let mut components = Vec::with_capacity(n);
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            let mean = match m {
                MeanSource::Inline(values) => values.clone(),
                MeanSource::File(p) => ImageTensor::read_pnm(&base.join(p))?.into_data(),
            };
            components.push(Component {
                weight: *w,
                mean,
                variance: *v,
            });
        }
        GaussianMixturePrior::with_unnormalized_weights(components)
    }
}

/// A smooth image with values in about [0.1, 0.9]; the pattern family cycles
/// with `index`, parameters come from `rng`.
pub fn smooth_template<R: Rng + ?Sized>(shape: Shape, index: usize, rng: &mut R) -> Vec<f64> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut img = vec![0.0; shape.len()];
    let base: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(0.2..0.5)).collect();
    let amp: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(0.25..0.4)).collect();
    let kind = index % 4;
    let (p0, p1, p2, p3) = (
        rng.random_range(0.0..1.0f64),
        rng.random_range(0.0..1.0f64),
        rng.random_range(0.0..1.0f64),
        rng.random_range(0.0..1.0f64),
    );
    for r in 0..shape.height {
        for col in 0..shape.width {
            let (u, v) = ((r as f64 + 0.5) / h, (col as f64 + 0.5) / w);
            let t = match kind {
                // Linear gradient along a random direction.
                0 => {
                    let ang = p0 * std::f64::consts::TAU;
                    (0.5 + (u - 0.5) * ang.cos() + (v - 0.5) * ang.sin()).clamp(0.0, 1.0)
                }
                // Soft disk.
                1 => {
                    let (cu, cv, rad) = (0.3 + 0.4 * p0, 0.3 + 0.4 * p1, 0.15 + 0.2 * p2);
                    let dist = ((u - cu).powi(2) + (v - cv).powi(2)).sqrt();
                    1.0 / (1.0 + ((dist - rad) / 0.04).exp())
                }
                // Soft rectangle.
                2 => {
                    let (u0, v0) = (0.1 + 0.3 * p0, 0.1 + 0.3 * p1);
                    let (u1, v1) = (u0 + 0.3 + 0.2 * p2, v0 + 0.3 + 0.2 * p3);
                    let s = |a: f64| 1.0 / (1.0 + (-a / 0.03).exp());
                    s(u - u0) * s(u1 - u) * s(v - v0) * s(v1 - v)
                }
                // Low-frequency stripes.
                _ => {
                    let ang = p0 * std::f64::consts::PI;
                    let freq = 1.0 + 2.0 * p1;
                    0.5 + 0.5 * (std::f64::consts::TAU * freq * (u * ang.cos() + v * ang.sin()) + p2 * 6.0).sin()
                }
            };
            for c in 0..shape.channels {
                img[shape.index(c, r, col)] = base[c] + amp[c] * t;
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_conditioning_example() {
        let p = GaussianMixturePrior::single(vec![0.0], 1.0).unwrap();
        let out = p.denoise(&[2.0], 1.0, 1.0).unwrap();
        assert!((out.mean[0] - 1.0).abs() < 1e-15);
        assert!((out.scalar_var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn point_mass_ignores_input() {
        let p = GaussianMixturePrior::single(vec![0.3, -0.2], 0.0).unwrap();
        let out = p.denoise(&[5.0, 7.0], 0.5, 0.1).unwrap();
        assert_eq!(out.mean, vec![0.3, -0.2]);
        assert_eq!(out.scalar_var, 0.0);
        let tiny = GaussianMixturePrior::single(vec![0.3, -0.2], 1e-14).unwrap();
        let out = tiny.denoise(&[5.0, 7.0], 0.5, 0.1).unwrap();
        assert!((out.mean[0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn midpoint_has_equal_responsibilities() {
        let p = GaussianMixturePrior::new(vec![
            Component { weight: 0.5, mean: vec![-1.0, 0.0], variance: 0.2 },
            Component { weight: 0.5, mean: vec![1.0, 0.0], variance: 0.2 },
        ])
        .unwrap();
        let r = p.responsibilities(&[0.0, 0.3], 0.8, 0.4).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn responsibilities_survive_tiny_sigma() {
        let p = GaussianMixturePrior::new(vec![
            Component { weight: 0.3, mean: vec![0.0; 4], variance: 0.01 },
            Component { weight: 0.7, mean: vec![1.0; 4], variance: 0.01 },
        ])
        .unwrap();
        let r = p.responsibilities(&[0.9; 4], 1.0, 1e-6).unwrap();
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r[1] > 0.999);
    }

    #[test]
    fn denoise_rejects_zero_sigma() {
        let p = GaussianMixturePrior::single(vec![0.0], 1.0).unwrap();
        assert!(p.denoise(&[0.0], 1.0, 0.0).is_err());
        assert!(p.denoise(&[0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = GaussianMixturePrior::new(vec![Component { weight: 0.9, mean: vec![0.0], variance: 1.0 }]);
        assert!(bad.is_err());
    }

    #[test]
    fn sampling_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GaussianMixturePrior::single(vec![0.25, 0.5], 0.0).unwrap();
        assert_eq!(p.sample(&mut rng), vec![0.25, 0.5]);
        let p = GaussianMixturePrior::new(vec![
            Component { weight: 1.0, mean: vec![3.0], variance: 0.0 },
            Component { weight: 0.0, mean: vec![-3.0], variance: 0.0 },
        ])
        .unwrap();
        for _ in 0..100 {
            assert_eq!(p.sample(&mut rng), vec![3.0]);
        }
    }

    #[test]
    fn sample_mean_obeys_law_of_large_numbers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tau2 = 0.5f64;
        let p = GaussianMixturePrior::single(vec![1.5], tau2).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| p.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 4.0 * tau2.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn exact_posterior_trivial_cases() {
        let p = GaussianMixturePrior::single(vec![0.2, 0.4], 0.09).unwrap();
        let op = SpectralOperator::identity(Shape::new(1, 1, 2)).unwrap();
        let post = p.exact_linear_posterior(&op, &[1.0, -1.0], 0.3).unwrap();
        assert!((post.mean[0] - 0.6).abs() < 1e-12 && (post.mean[1] + 0.3).abs() < 1e-12);
        let far = p.exact_linear_posterior(&op, &[1.0, -1.0], 1e9).unwrap();
        assert!((far.mean[0] - 0.2).abs() < 1e-12);
        let mix = GaussianMixturePrior::new(vec![
            Component { weight: 0.5, mean: vec![0.0, 0.0], variance: 1.0 },
            Component { weight: 0.5, mean: vec![1.0, 0.0], variance: 1.0 },
        ])
        .unwrap();
        assert!(mix.exact_linear_posterior(&op, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn template_bank_is_deterministic_and_bounded() {
        let shape = Shape::new(3, 16, 16);
        let a = GaussianMixturePrior::template_bank(shape, 6, 0.01, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = GaussianMixturePrior::template_bank(shape, 6, 0.01, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for c in a.components() {
            assert!(c.mean.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn prior_json_with_inline_and_file_means() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::new(Shape::new(1, 1, 2), vec![0.0, 1.0]).unwrap();
        img.write_pnm(&dir.path().join("m.pgm")).unwrap();
        let json = r#"{"weights":[1,3],"means":[[0.5,0.5],"m.pgm"],"variances":[0.1,0.2]}"#;
        let path = dir.path().join("prior.json");
        std::fs::write(&path, json).unwrap();
        let p = GaussianMixturePrior::load_json(&path).unwrap();
        assert_eq!(p.components()[1].mean, vec![0.0, 1.0]);
        assert!((p.components()[1].weight - 0.75).abs() < 1e-15);
        std::fs::write(&path, r#"{"weights":[1],"means":[[0.5]],"variances":[0.1],"extra":1}"#).unwrap();
        assert!(GaussianMixturePrior::load_json(&path).is_err());
    }
}
