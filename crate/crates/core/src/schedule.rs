//! Discrete diffusion schedules and per-step sampler coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Training horizon of the linear-β reference schedule.
pub const TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// DDIM stochasticity used for baseline comparisons.
pub const BASELINE_DDIM_ETA: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    /// `x_{n-1} ~ N(α_{n-1} x₀*, σ_{n-1}² I)`.
    SimpleAncestral,
    /// DDIM with stochasticity `eta ∈ [0, 1]`; `eta = 1` is ancestral DDPM.
    DdimEta { eta: f64 },
}

/// `x_{t-Δt} ~ N(a·x₀* + b·x_t, c² I)`; `c` is a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    variant: Variant,
}

impl DiffusionSchedule {
    /// Validates `α₀ = 1`, `σ₀ = 0`, `α` nonincreasing in `(0, 1]`, `σ` nondecreasing.
    pub fn from_tables(alpha: Vec<f64>, sigma: Vec<f64>, variant: Variant) -> Result<Self> {
        if alpha.len() < 2 || alpha.len() != sigma.len() {
            return Err(invalid("schedule tables need equal length >= 2"));
        }
        if alpha[0] != 1.0 || sigma[0] != 0.0 {
            return Err(invalid("schedule must start at alpha = 1, sigma = 0"));
        }
        for n in 1..alpha.len() {
            if !(alpha[n] > 0.0 && alpha[n] <= alpha[n - 1]) {
                return Err(invalid(format!("alpha must be nonincreasing in (0,1] at step {n}")));
            }
            if !(sigma[n] >= sigma[n - 1]) || !sigma[n].is_finite() {
                return Err(invalid(format!("sigma must be nondecreasing at step {n}")));
            }
        }
        if let Variant::DdimEta { eta } = variant {
            if !(0.0..=1.0).contains(&eta) {
                return Err(invalid(format!("DDIM eta {eta} outside [0, 1]")));
            }
        }
        Ok(Self {
            alpha,
            sigma,
            variant,
        })
    }

    /// Variance-preserving schedule from a linear β ramp over
    /// [`TRAIN_STEPS`] steps, subsampled at `steps` evenly spaced times.
    pub fn vp_linear(steps: usize, variant: Variant) -> Result<Self> {
        if steps == 0 || steps > TRAIN_STEPS {
            return Err(invalid(format!("steps must be in 1..={TRAIN_STEPS}, got {steps}")));
        }
        let mut alpha_bar = Vec::with_capacity(TRAIN_STEPS + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..TRAIN_STEPS {
            let beta = BETA_START + (BETA_END - BETA_START) * i as f64 / (TRAIN_STEPS - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let (mut alpha, mut sigma) = (Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1));
        for n in 0..=steps {
            let t = (n * TRAIN_STEPS + steps / 2) / steps;
            let ab: f64 = alpha_bar[t];
            alpha.push(ab.sqrt());
            sigma.push((1.0 - ab).sqrt());
        }
        Self::from_tables(alpha, sigma, variant)
    }

    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n]
    }

    pub fn sigma(&self, n: usize) -> f64 {
        self.sigma[n]
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Coefficients for the transition `n → n−1`, `1 ≤ n ≤ N`.
    pub fn step_coeffs(&self, n: usize) -> Result<StepCoeffs> {
        if n == 0 || n > self.steps() {
            return Err(invalid(format!("step {n} outside 1..={}", self.steps())));
        }
        let (a_prev, s_prev) = (self.alpha[n - 1], self.sigma[n - 1]);
        let (a_n, s_n) = (self.alpha[n], self.sigma[n]);
        Ok(match self.variant {
            Variant::SimpleAncestral => StepCoeffs {
                a: a_prev,
                b: 0.0,
                c: s_prev,
            },
            Variant::DdimEta { eta } => {
                let inner = s_n * s_n - (a_n * s_prev / a_prev).powi(2);
                let c = if s_n > 0.0 {
                    (eta * s_prev / s_n * inner.max(0.0).sqrt()).max(0.0)
                } else {
                    0.0
                };
                let b = if s_n > 0.0 {
                    (s_prev * s_prev - c * c).max(0.0).sqrt() / s_n
                } else {
                    0.0
                };
                StepCoeffs {
                    a: a_prev - b * a_n,
                    b,
                    c,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vp_tables_are_consistent() {
        let s = DiffusionSchedule::vp_linear(20, Variant::SimpleAncestral).unwrap();
        assert_eq!(s.steps(), 20);
        for n in 0..=20 {
            let (a, sg) = (s.alpha(n), s.sigma(n));
            assert!((a * a + sg * sg - 1.0).abs() < 1e-12);
        }
        assert!(s.sigma(20) > 0.9999);
    }

    #[test]
    fn simple_final_step_is_deterministic() {
        let s = DiffusionSchedule::vp_linear(10, Variant::SimpleAncestral).unwrap();
        assert_eq!(s.step_coeffs(1).unwrap(), StepCoeffs { a: 1.0, b: 0.0, c: 0.0 });
        assert!(s.step_coeffs(0).is_err());
        assert!(s.step_coeffs(11).is_err());
    }

    #[test]
    fn ddim_eta_zero_is_deterministic() {
        let s = DiffusionSchedule::vp_linear(25, Variant::DdimEta { eta: 0.0 }).unwrap();
        for n in 1..=25 {
            assert_eq!(s.step_coeffs(n).unwrap().c, 0.0);
        }
    }

    #[test]
    fn ddim_eta_one_matches_ddpm_posterior_variance() {
        let s = DiffusionSchedule::vp_linear(50, Variant::DdimEta { eta: 1.0 }).unwrap();
        for n in 1..=50 {
            let ab = s.alpha(n).powi(2);
            let ab_prev = s.alpha(n - 1).powi(2);
            let beta = 1.0 - ab / ab_prev;
            let posterior_var = (1.0 - ab_prev) / (1.0 - ab) * beta;
            let c = s.step_coeffs(n).unwrap().c;
            assert!((c * c - posterior_var).abs() < 1e-12, "step {n}");
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DiffusionSchedule::from_tables(vec![0.9, 0.5], vec![0.0, 0.8], Variant::SimpleAncestral).is_err());
        assert!(DiffusionSchedule::from_tables(vec![1.0, 1.1], vec![0.0, 0.8], Variant::SimpleAncestral).is_err());
        assert!(DiffusionSchedule::from_tables(vec![1.0, 0.5], vec![0.0, 0.8], Variant::DdimEta { eta: 2.0 }).is_err());
    }
}
