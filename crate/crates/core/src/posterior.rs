//! Measurement-aligned posterior mean
//!
//! `x₀* = argmin ‖x₀ − m‖² + ‖y − Hx₀‖²_{W⁻¹}` with `W = η₁HHᵀ + η₂I`, i.e.
//! `x₀* = Y⁻¹[m + HᵀW⁻¹y]`, `Y = I + HᵀW⁻¹H`.
//!
//! In the SVD basis both `W` and `Y` are diagonal. Combining the two scalings
//! gives, on a mode with singular value `s`,
//!
//! ```text
//! z = ((η₁s² + η₂)·m̃ + s·ỹ) / ((η₁+1)s² + η₂)
//! ```
//!
//! where `m̃ = Vᵀm`, `ỹ = Uᵀy`. Null modes keep `m̃`. The combined form stays
//! finite when `η₁s² + η₂ = 0` and then equals the DDNM projection on that mode.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Error, Result};
use crate::spectral::SpectralOperator;

/// Largest `d` accepted by [`dense_posterior_mean`].
pub const DENSE_ORACLE_MAX_DIM: usize = 512;

/// Relative size of `|η₁s² + η₂|` below which a near-cancellation warning is logged.
pub const CANCELLATION_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasWeights {
    eta1: f64,
    eta2: f64,
}

impl MasWeights {
    /// `eta1` may be negative (overshooting); `eta2` must be `≥ 0`.
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        if eta2 < 0.0 {
            return Err(invalid(format!(
                "eta2 = {eta2} is negative; use MasWeights::with_negative_eta2 to opt in"
            )));
        }
        Self::with_negative_eta2(eta1, eta2)
    }

    /// Unchecked sign for `eta2`. `W` may lose positivity.
    pub fn with_negative_eta2(eta1: f64, eta2: f64) -> Result<Self> {
        if !eta1.is_finite() || !eta2.is_finite() {
            return Err(invalid(format!("weights must be finite, got ({eta1}, {eta2})")));
        }
        Ok(Self { eta1, eta2 })
    }

    /// `η₁ = σ_ε²/r²`, `η₂ = σ_y²/r²`.
    pub fn from_variances(sigma_eps2: f64, sigma_y2: f64, r_t2: f64) -> Result<Self> {
        if !(r_t2 > 0.0) {
            return Err(invalid(format!("r_t^2 must be positive, got {r_t2}")));
        }
        Self::new(sigma_eps2 / r_t2, sigma_y2 / r_t2)
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    /// `(η₁+1)s² + η₂`, the denominator shared by both scalings.
    #[inline]
    pub fn denominator(&self, s: f64) -> f64 {
        (self.eta1 + 1.0) * s * s + self.eta2
    }
}

/// Per-mode scalings of `Vᵀm` and `Uᵀy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoefficients {
    pub prior: f64,
    pub measurement: f64,
}

/// Mode-wise coefficients of the MAS solve. Fails if a nonzero mode has a
/// non-positive denominator.
pub fn mode_coefficients(op: &SpectralOperator, w: &MasWeights) -> Result<Vec<ModeCoefficients>> {
    let tol = op.zero_threshold();
    let mut warned = false;
    op.singulars()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s <= tol {
                return Ok(ModeCoefficients {
                    prior: 1.0,
                    measurement: 0.0,
                });
            }
            let denom = w.denominator(s);
            if !(denom > 0.0) {
                return Err(Error::Unstable {
                    mode: i,
                    singular: s,
                    denominator: denom,
                });
            }
            let wdiag = w.eta1 * s * s + w.eta2;
            if !warned && wdiag != 0.0 && wdiag.abs() < CANCELLATION_GUARD * s * s {
                log::warn!(
                    "near-cancelling weights at mode {i}: eta1*s^2 + eta2 = {wdiag:e} (s = {s})"
                );
                warned = true;
            }
            Ok(ModeCoefficients {
                prior: wdiag / denom,
                measurement: s / denom,
            })
        })
        .collect()
}

/// `x₀* = Y⁻¹[m₀|t + HᵀW⁻¹y]` via diagonal scalings in the SVD basis.
pub fn mas_posterior_mean(op: &SpectralOperator, m0t: &[f64], y: &[f64], w: &MasWeights) -> Result<Vec<f64>> {
    check_len("m0|t", op.in_dim(), m0t.len())?;
    check_len("measurement", op.out_dim(), y.len())?;
    let coeffs = mode_coefficients(op, w)?;
    let mt = op.vt_raw(m0t);
    let yt = op.ut_raw(y);
    let delta: Vec<f64> = coeffs
        .iter()
        .zip(mt.iter().zip(&yt))
        .map(|(c, (m, y))| (c.prior - 1.0) * m + c.measurement * y)
        .collect();
    Ok(add(m0t, &op.v_raw(&delta)))
}

/// `m₀|t + H†(y − H m₀|t)`.
pub fn ddnm_projection(op: &SpectralOperator, m0t: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_len("measurement", op.out_dim(), y.len())?;
    let hm = op.apply(m0t)?;
    let resid = sub(y, &hm);
    Ok(add(m0t, &op.pinv_apply(&resid)?))
}

/// `m + r²Hᵀ(r²HHᵀ + σ_y²I)⁻¹(y − Hm)`, the scalar-covariance Tweedie moment
/// projection.
pub fn tmpd_scalar_posterior_mean(
    op: &SpectralOperator,
    m0t: &[f64],
    r_t2: f64,
    y: &[f64],
    sigma_y: f64,
) -> Result<Vec<f64>> {
    if !(r_t2 > 0.0) {
        return Err(invalid(format!("r_t^2 must be positive, got {r_t2}")));
    }
    if !(sigma_y >= 0.0) {
        return Err(invalid(format!("sigma_y must be nonnegative, got {sigma_y}")));
    }
    check_len("measurement", op.out_dim(), y.len())?;
    let hm = op.apply(m0t)?;
    let mut z = op.ut_raw(&sub(y, &hm));
    let tol = op.zero_threshold();
    let s2y = sigma_y * sigma_y;
    for (zi, &s) in z.iter_mut().zip(op.singulars()) {
        *zi *= if s > tol { r_t2 * s / (r_t2 * s * s + s2y) } else { 0.0 };
    }
    Ok(add(m0t, &op.v_raw(&z)))
}

/// Brute-force reference: materializes `W` and `Y` and solves densely.
///
/// When `η₂ = 0` and `η₁ ≠ 0`, `W⁻¹` is replaced by the Moore-Penrose
/// pseudo-inverse. `η₁ = η₂ = 0` has no dense meaning and is rejected.
pub fn dense_posterior_mean(h: &DMatrix<f64>, m0t: &[f64], y: &[f64], w: &MasWeights) -> Result<Vec<f64>> {
    let (m, d) = h.shape();
    if d > DENSE_ORACLE_MAX_DIM {
        return Err(invalid(format!(
            "dense oracle limited to d <= {DENSE_ORACLE_MAX_DIM}, got {d}"
        )));
    }
    check_len("m0|t", d, m0t.len())?;
    check_len("measurement", m, y.len())?;
    let hht = h * h.transpose();
    let wmat = &hht * w.eta1 + DMatrix::identity(m, m) * w.eta2;
    let w_inv = if w.eta2 == 0.0 {
        if w.eta1 == 0.0 {
            return Err(Error::Singular("W = 0 when eta1 = eta2 = 0".into()));
        }
        symmetric_pinv(&wmat)
    } else {
        wmat.clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("W is not invertible".into()))?
    };
    let ht_winv = h.transpose() * &w_inv;
    let ymat = DMatrix::identity(d, d) + &ht_winv * h;
    let rhs = DVector::from_column_slice(m0t) + &ht_winv * DVector::from_column_slice(y);
    let x = ymat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Y is not invertible".into()))?;
    Ok(x.iter().copied().collect())
}

/// Moore-Penrose inverse of a symmetric matrix through its eigendecomposition.
fn symmetric_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l.abs() > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

pub(crate) fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
