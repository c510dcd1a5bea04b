//! Noise budgets for noisy measurements.
//!
//! With known Gaussian noise the measurement term leaks
//! `a_t·Y⁻¹HᵀW⁻¹ε_y` into the next iterate. On mode `i` its standard deviation
//! is `τᵢ = a_t σ_y sᵢ / ((η₁+1)sᵢ² + η₂)`. The budget damps that term by `λᵢ`
//! and tops up with fresh noise of variance `γᵢ` so that `(τᵢλᵢ)² + γᵢ = c_t²`,
//! keeping `λᵢ` as close to 1 as possible.
//!
//! With unknown noise nothing can be budgeted; instead `η₂ = k·a_t/c_t` grows as
//! sampling proceeds and fresh noise stays `N(0, c_t² I)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::posterior::{add, mode_coefficients, MasWeights};
use crate::spectral::SpectralOperator;

/// Default factor applied to the nominal `σ_y` in the known-noise budget.
pub const DEFAULT_INFLATION: f64 = 1.2;

/// Allowed range for the unknown-noise baseline `η₁`.
pub const ETA1_BASE_RANGE: (f64, f64) = (-0.4, 0.1);

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBudget {
    /// Damping per represented mode, in `(0, 1]`.
    pub lambdas: Vec<f64>,
    /// Fresh-noise variance per represented mode.
    pub gammas: Vec<f64>,
    /// Fresh-noise variance on null-space directions (`c_t²`).
    pub null_gamma: f64,
}

impl ModeBudget {
    pub fn min_lambda(&self) -> f64 {
        self.lambdas.iter().copied().fold(1.0, f64::min)
    }

    pub fn mean_lambda(&self) -> f64 {
        if self.lambdas.is_empty() {
            1.0
        } else {
            self.lambdas.iter().sum::<f64>() / self.lambdas.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoisePolicy {
    NoiseFree,
    KnownGaussian {
        sigma_y: f64,
        #[serde(default = "default_inflation")]
        inflation: f64,
    },
    Unknown {
        k: f64,
        #[serde(default)]
        eta1_base: f64,
    },
}

fn default_inflation() -> f64 {
    DEFAULT_INFLATION
}

impl NoisePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoisePolicy::NoiseFree => Ok(()),
            NoisePolicy::KnownGaussian { sigma_y, inflation } => {
                if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
                    return Err(invalid(format!("sigma_y must be >= 0, got {sigma_y}")));
                }
                if !(inflation >= 1.0) || !inflation.is_finite() {
                    return Err(invalid(format!("inflation must be >= 1, got {inflation}")));
                }
                Ok(())
            }
            NoisePolicy::Unknown { k, eta1_base } => {
                if !(k >= 0.0) || !k.is_finite() {
                    return Err(invalid(format!("k must be >= 0, got {k}")));
                }
                let (lo, hi) = ETA1_BASE_RANGE;
                if !(lo..=hi).contains(&eta1_base) {
                    return Err(invalid(format!(
                        "eta1_base {eta1_base} outside [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `inflation · σ_y` for the known-Gaussian policy.
    pub fn sigma_y_eff(&self) -> Option<f64> {
        match *self {
            NoisePolicy::KnownGaussian { sigma_y, inflation } => Some(sigma_y * inflation),
            _ => None,
        }
    }
}

/// Per-mode `(λᵢ, γᵢ)` for the known-Gaussian policy.
pub fn known_gaussian_budget(
    op: &SpectralOperator,
    w: &MasWeights,
    a_t: f64,
    c_t: f64,
    sigma_y_eff: f64,
) -> Result<ModeBudget> {
    for (name, v) in [("a_t", a_t), ("c_t", c_t), ("sigma_y", sigma_y_eff)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let tol = op.zero_threshold();
    let c2 = c_t * c_t;
    let n = op.rank_bound();
    let mut lambdas = Vec::with_capacity(n);
    let mut gammas = Vec::with_capacity(n);
    for (i, &s) in op.singulars().iter().enumerate() {
        if s <= tol {
            lambdas.push(1.0);
            gammas.push(c2);
            continue;
        }
        let denom = w.denominator(s);
        if !(denom > 0.0) {
            return Err(Error::Unstable {
                mode: i,
                singular: s,
                denominator: denom,
            });
        }
        let leak = a_t * sigma_y_eff * s / denom;
        if c_t >= leak {
            lambdas.push(1.0);
            gammas.push(c2 - leak * leak);
        } else {
            lambdas.push(c_t * denom / (a_t * sigma_y_eff * s));
            gammas.push(0.0);
        }
    }
    Ok(ModeBudget {
        lambdas,
        gammas,
        null_gamma: c2,
    })
}

/// Budget-damped posterior mean `m + Σ_t(x₀*_MAS − m)` with `Σ_t = V diag(λ) Vᵀ`
/// (identity on the null space), together with the per-mode fresh-noise
/// variances `γ`.
pub fn apply_budget(
    op: &SpectralOperator,
    m0t: &[f64],
    y: &[f64],
    w: &MasWeights,
    budget: &ModeBudget,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("m0|t", op.in_dim(), m0t.len())?;
    check_len("measurement", op.out_dim(), y.len())?;
    check_len("budget lambdas", op.rank_bound(), budget.lambdas.len())?;
    check_len("budget gammas", op.rank_bound(), budget.gammas.len())?;
    let coeffs = mode_coefficients(op, w)?;
    let mt = op.vt_raw(m0t);
    let yt = op.ut_raw(y);
    let delta: Vec<f64> = coeffs
        .iter()
        .zip(&budget.lambdas)
        .zip(mt.iter().zip(&yt))
        .map(|((c, lam), (m, y))| lam * ((c.prior - 1.0) * m + c.measurement * y))
        .collect();
    Ok((add(m0t, &op.v_raw(&delta)), budget.gammas.clone()))
}

/// `η₁ = η₁_base`, `η₂ = k·a_t/c_t`.
pub fn unknown_noise_weights(policy: &NoisePolicy, a_t: f64, c_t: f64) -> Result<MasWeights> {
    let NoisePolicy::Unknown { k, eta1_base } = *policy else {
        return Err(invalid("unknown_noise_weights needs an unknown-noise policy"));
    };
    if !(c_t > 0.0) {
        return Err(invalid(format!("unknown-noise schedule needs c_t > 0, got {c_t}")));
    }
    let eta2 = if a_t == 0.0 || k == 0.0 { 0.0 } else { k * a_t / c_t };
    MasWeights::new(eta1_base, eta2)
}

/// Draws `ε ~ N(0, V diag(γ) Vᵀ + c²(I − VVᵀ))` with `c² = null_gamma`.
pub fn colored_noise<R: Rng + ?Sized>(op: &SpectralOperator, budget: &ModeBudget, rng: &mut R) -> Vec<f64> {
    let c = budget.null_gamma.sqrt();
    let z: Vec<f64> = (0..op.in_dim()).map(|_| rng.sample(StandardNormal)).collect();
    let mut zt = op.vt_raw(&z);
    for (zi, g) in zt.iter_mut().zip(&budget.gammas) {
        *zi *= g.max(0.0).sqrt() - c;
    }
    let corr = op.v_raw(&zt);
    z.iter().zip(&corr).map(|(a, b)| c * a + b).collect()
}
