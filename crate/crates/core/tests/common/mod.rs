//! Independent dense oracles and random instances shared by the test targets.
#![allow(dead_code)]

use mas::image::Shape;
use mas::spectral::{box_mask, random_mask, Kernel, SpectralOperator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Product of two Gaussian factors: rank at most `rank`.
pub fn low_rank_matrix<R: Rng>(rows: usize, cols: usize, rank: usize, rng: &mut R) -> DMatrix<f64> {
    gaussian_matrix(rows, rank, rng) * gaussian_matrix(rank, cols, rng)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pseudo-inverse of a symmetric matrix from its eigendecomposition.
pub fn symmetric_pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let tol = rel_tol * eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l.abs() > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// `H⁺ = (HᵀH)⁺Hᵀ`. Squaring the spectrum costs accuracy, so this is only
/// meant for the well-conditioned random instances used in tests.
pub fn pinv(h: &DMatrix<f64>) -> DMatrix<f64> {
    symmetric_pinv(&(h.transpose() * h), 1e-10) * h.transpose()
}

/// `(I + HᵀW⁺H)⁻¹ (m + HᵀW⁺y)` with `W = η₁HHᵀ + η₂I`, evaluated densely.
pub fn closed_form_oracle(h: &DMatrix<f64>, m: &[f64], y: &[f64], eta1: f64, eta2: f64) -> Vec<f64> {
    let (rows, d) = h.shape();
    let w = eta1 * h * h.transpose() + eta2 * DMatrix::identity(rows, rows);
    let w_inv = symmetric_pinv(&w, 1e-12);
    let y_mat = DMatrix::identity(d, d) + h.transpose() * &w_inv * h;
    let rhs = DVector::from_column_slice(m) + h.transpose() * &w_inv * DVector::from_column_slice(y);
    y_mat.lu().solve(&rhs).expect("Y invertible").as_slice().to_vec()
}

/// Gaussian conditioning with prior `N(m, r²I)` and likelihood
/// `N(Hx, σ_y²I + σ_ε²HHᵀ)`, in information form.
pub fn bayes_oracle(h: &DMatrix<f64>, m: &[f64], y: &[f64], r2: f64, sigma_eps2: f64, sigma_y2: f64) -> Vec<f64> {
    let (rows, d) = h.shape();
    let r = sigma_y2 * DMatrix::identity(rows, rows) + sigma_eps2 * h * h.transpose();
    let r_inv = r.try_inverse().expect("R invertible");
    let prec = DMatrix::identity(d, d) / r2 + h.transpose() * &r_inv * h;
    let rhs = DVector::from_column_slice(m) / r2 + h.transpose() * &r_inv * DVector::from_column_slice(y);
    prec.cholesky().expect("SPD").solve(&rhs).as_slice().to_vec()
}

/// `m + H⁺(y − Hm)`.
pub fn ddnm_oracle(h: &DMatrix<f64>, m: &[f64], y: &[f64]) -> Vec<f64> {
    let mv = DVector::from_column_slice(m);
    let r = DVector::from_column_slice(y) - h * &mv;
    (mv + pinv(h) * r).as_slice().to_vec()
}

/// Singular values of `h`, descending.
pub fn dense_singulars(h: &DMatrix<f64>) -> Vec<f64> {
    let gram = if h.nrows() <= h.ncols() { h * h.transpose() } else { h.transpose() * h };
    let mut s: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Row-space projector `H⁺H`.
pub fn row_projector(h: &DMatrix<f64>) -> DMatrix<f64> {
    pinv(h) * h
}

/// Every structured operator family, at small sizes, plus dense examples.
pub fn catalog<R: Rng>(rng: &mut R) -> Vec<(&'static str, SpectralOperator)> {
    let s1 = Shape::new(1, 5, 6);
    let asym: Vec<f64> = {
        let raw: Vec<f64> = (0..15).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    vec![
        ("identity", SpectralOperator::identity(Shape::new(2, 3, 4)).unwrap()),
        (
            "random_mask",
            SpectralOperator::mask(s1, &random_mask(s1, 0.7, rng).unwrap()).unwrap(),
        ),
        (
            "box_mask",
            SpectralOperator::mask(Shape::new(3, 6, 6), &box_mask(Shape::new(3, 6, 6), 1, 2, 3, 3).unwrap()).unwrap(),
        ),
        ("block_downsample", SpectralOperator::block_downsample(2, 4, 6, 2).unwrap()),
        ("channel_average", SpectralOperator::channel_average(4, 5).unwrap()),
        (
            "blur_uniform",
            SpectralOperator::circular_blur(1, 6, 8, &Kernel::uniform(3).unwrap()).unwrap(),
        ),
        (
            "blur_asymmetric",
            SpectralOperator::circular_blur(2, 5, 7, &Kernel::new(3, 5, asym).unwrap()).unwrap(),
        ),
        ("dense_wide", SpectralOperator::dense(&gaussian_matrix(5, 7, rng)).unwrap()),
        ("dense_tall", SpectralOperator::dense(&gaussian_matrix(9, 4, rng)).unwrap()),
        (
            "dense_rank_deficient",
            SpectralOperator::dense(&low_rank_matrix(6, 8, 3, rng)).unwrap(),
        ),
        (
            "diagonal",
            SpectralOperator::diagonal(vec![2.0, 1.0, 0.5, 0.0]).unwrap(),
        ),
    ]
}

/// Draws η from the given ranges, rejecting draws that put any nonzero mode
/// near `η₁s² + η₂ = 0` or near instability.
pub fn guarded_eta<R: Rng>(
    singulars: &[f64],
    eta1_range: (f64, f64),
    eta2_range: (f64, f64),
    rng: &mut R,
) -> (f64, f64) {
    let s_max = singulars.iter().copied().fold(0.0, f64::max);
    loop {
        let e1 = rng.random_range(eta1_range.0..=eta1_range.1);
        let e2 = if eta2_range.0 == eta2_range.1 {
            eta2_range.0
        } else {
            rng.random_range(eta2_range.0..=eta2_range.1)
        };
        let ok = singulars
            .iter()
            .filter(|&&s| s > 1e-10 * s_max)
            .all(|&s| (e1 * s * s + e2).abs() > 1e-2 * s * s && (e1 + 1.0) * s * s + e2 > 1e-2 * s * s);
        if ok {
            return (e1, e2);
        }
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
