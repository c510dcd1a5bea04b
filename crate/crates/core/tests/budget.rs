mod common;

use common::*;
use mas::budget::{apply_budget, colored_noise, known_gaussian_budget, unknown_noise_weights, NoisePolicy};
use mas::posterior::mas_posterior_mean;
use mas::spectral::SpectralOperator;
use mas::MasWeights;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn budget_identity_for_every_catalog_mode() {
    let mut r = rng(20);
    for (name, op) in catalog(&mut r) {
        for _ in 0..20 {
            let a = r.random_range(0.0..1.0);
            let c = r.random_range(0.0..1.0);
            let sy = r.random_range(0.0..0.5);
            let (e1, e2) = guarded_eta(op.singulars(), (-0.4, 2.0), (0.0, 2.0), &mut r);
            let w = MasWeights::new(e1, e2).unwrap();
            let b = known_gaussian_budget(&op, &w, a, c, sy).unwrap();
            let tol = op.zero_threshold();
            for (i, &s) in op.singulars().iter().enumerate() {
                let (lam, g) = (b.lambdas[i], b.gammas[i]);
                assert!(lam > 0.0 && lam <= 1.0 && g >= 0.0, "{name}");
                let leak = if s > tol { a * sy * s * lam / ((e1 + 1.0) * s * s + e2) } else { 0.0 };
                assert!((leak * leak + g - c * c).abs() <= 1e-12, "{name} mode {i}");
            }
            assert_eq!(b.null_gamma, c * c);
        }
    }
}

/// Dense reference for the budgeted estimate: the damping acts through the
/// eigenvectors of `HᵀH`, one λ per distinct singular value.
#[test]
fn apply_budget_matches_dense_construction() {
    let mut r = rng(21);
    for _ in 0..20 {
        let (m, d) = (r.random_range(1..6), r.random_range(2..8));
        let h = gaussian_matrix(m, d, &mut r);
        let op = SpectralOperator::dense(&h).unwrap();
        let (e1, e2) = guarded_eta(op.singulars(), (-0.3, 1.0), (0.0, 1.0), &mut r);
        let w = MasWeights::new(e1, e2).unwrap();
        let (a, c, sy) = (r.random_range(0.2..1.0), r.random_range(0.0..0.3), r.random_range(0.05..0.5));
        let b = known_gaussian_budget(&op, &w, a, c, sy).unwrap();
        let m0 = gaussian_vec(d, &mut r);
        let y = gaussian_vec(m, &mut r);
        let (ours, gammas) = apply_budget(&op, &m0, &y, &w, &b).unwrap();
        assert_eq!(gammas, b.gammas);

        let eig = (h.transpose() * &h).symmetric_eigen();
        let lam_max = eig.eigenvalues.amax();
        let mut sigma = DMatrix::<f64>::zeros(d, d);
        for k in 0..d {
            let s2 = eig.eigenvalues[k];
            let lam = if s2 > 1e-12 * lam_max {
                let s = s2.sqrt();
                let leak = a * sy * s / ((e1 + 1.0) * s2 + e2);
                if c >= leak { 1.0 } else { c / leak }
            } else {
                1.0
            };
            let v = eig.eigenvectors.column(k);
            sigma += lam * v * v.transpose();
        }
        let x_mas = DVector::from_vec(closed_form_oracle(&h, &m0, &y, e1, e2));
        let m0v = DVector::from_column_slice(&m0);
        let oracle = &m0v + sigma * (x_mas - &m0v);
        assert!(max_abs_diff(&ours, oracle.as_slice()) <= 1e-9 * (1.0 + oracle.norm()));
    }
}

#[test]
fn all_lambdas_one_reproduces_mas() {
    let mut r = rng(22);
    for (_, op) in catalog(&mut r) {
        let w = MasWeights::new(0.3, 0.2).unwrap();
        // Huge c_t: nothing leaks past the budget.
        let b = known_gaussian_budget(&op, &w, 0.5, 10.0, 0.1).unwrap();
        assert!(b.lambdas.iter().all(|&l| l == 1.0));
        let m0 = gaussian_vec(op.in_dim(), &mut r);
        let y = gaussian_vec(op.out_dim(), &mut r);
        let (x, _) = apply_budget(&op, &m0, &y, &w, &b).unwrap();
        let mas = mas_posterior_mean(&op, &m0, &y, &w).unwrap();
        assert!(max_abs_diff(&x, &mas) <= 1e-12 * (1.0 + norm(&mas)));
    }
}

/// Per V-mode variance of `a·(x₀*(y + ε) − x₀*(y)) + ε_new` should be `c²`.
#[test]
fn injected_noise_variance_monte_carlo() {
    let mut r = rng(23);
    let h = gaussian_matrix(6, 16, &mut r) * 0.4;
    let op = SpectralOperator::dense(&h).unwrap();
    let w = MasWeights::new(-0.2, 0.05).unwrap();
    let (a, c, sy) = (0.8, 0.3, 0.4);
    let b = known_gaussian_budget(&op, &w, a, c, sy).unwrap();
    assert!(b.lambdas.iter().any(|&l| l < 1.0) && b.lambdas.contains(&1.0));
    let m0 = gaussian_vec(16, &mut r);
    let y = gaussian_vec(6, &mut r);
    let (base, _) = apply_budget(&op, &m0, &y, &w, &b).unwrap();

    let draws = 100_000;
    let k = op.rank_bound();
    let mut sum2 = vec![0.0; k + 1];
    for _ in 0..draws {
        let noisy: Vec<f64> = y.iter().map(|v| v + sy * r.sample::<f64, _>(StandardNormal)).collect();
        let (x, _) = apply_budget(&op, &m0, &noisy, &w, &b).unwrap();
        let fresh = colored_noise(&op, &b, &mut r);
        let total: Vec<f64> = x.iter().zip(&base).zip(&fresh).map(|((x, b0), f)| a * (x - b0) + f).collect();
        let t = op.vt(&total).unwrap();
        for i in 0..k {
            sum2[i] += t[i] * t[i];
        }
        // One null-space direction.
        let p = op.project_row_space(&total).unwrap();
        let null: f64 = total.iter().zip(&p).map(|(a, b)| a - b).sum::<f64>() / 4.0;
        sum2[k] += null * null;
    }
    let c2 = c * c;
    let se = c2 * (2.0 / draws as f64).sqrt();
    for (i, s) in sum2.iter().take(k).enumerate() {
        let var = s / draws as f64;
        assert!((var - c2).abs() <= 3.0 * se, "mode {i}: {var} vs {c2}");
    }
    // The null probe has variance c²·‖(I − P)1‖²/16; checked against its own projection.
    let ones = vec![1.0; 16];
    let p = op.project_row_space(&ones).unwrap();
    let scale: f64 = ones.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 16.0;
    let var = sum2[k] / draws as f64;
    assert!((var - c2 * scale).abs() <= 3.0 * c2 * scale * (2.0 / draws as f64).sqrt());
}

#[test]
fn unknown_schedule_is_continuous_in_time() {
    let policy = NoisePolicy::Unknown { k: 0.5, eta1_base: 0.0 };
    let mut prev: Option<f64> = None;
    for i in 1..=1000 {
        let t = i as f64 / 1000.0;
        let (a, c) = ((1.0 - t).max(1e-3), t);
        let e2 = unknown_noise_weights(&policy, a, c).unwrap().eta2();
        if let Some(p) = prev {
            // Lipschitz on [δ, 1] away from c = 0.
            if t > 0.05 {
                assert!((e2 - p).abs() < 0.5);
            }
        }
        prev = Some(e2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lambda_monotone_in_c_and_sigma(
        s in 0.05f64..2.0, e1 in -0.4f64..1.0, e2 in 0.0f64..1.0,
        a in 0.01f64..1.0, c in 0.0f64..1.0, dc in 0.0f64..0.5,
        sy in 0.01f64..1.0, ds in 0.0f64..0.5,
    ) {
        let op = SpectralOperator::diagonal(vec![s]).unwrap();
        prop_assume!((e1 + 1.0) * s * s + e2 > 1e-3);
        let w = MasWeights::new(e1, e2).unwrap();
        let lam = |c: f64, sy: f64| known_gaussian_budget(&op, &w, a, c, sy).unwrap().lambdas[0];
        let base = lam(c, sy);
        prop_assert!(base <= 1.0);
        prop_assert!(lam(c + dc, sy) >= base - 1e-15);
        prop_assert!(lam(c, sy + ds) <= base + 1e-15);
    }
}
