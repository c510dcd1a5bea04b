//! PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when the images are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(reference: &ImageTensor, estimate: &ImageTensor) -> Result<Self> {
        let p = psnr(reference, estimate, 1.0)?;
        Ok(Self {
            psnr_db: p.is_finite().then_some(p),
            ssim: ssim(reference, estimate)?,
        })
    }

    pub fn identical(&self) -> bool {
        self.psnr_db.is_none()
    }
}

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`; `+∞` for identical images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM with the standard 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1. Windows are evaluated at valid positions only;
/// channels are averaged.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_K1, SSIM_K2)
}

pub fn ssim_with(a: &ImageTensor, b: &ImageTensor, window: usize, k1: f64, k2: f64) -> Result<f64> {
    same_shape(a, b)?;
    let shape = a.shape();
    if shape.height < window || shape.width < window {
        return Err(invalid(format!(
            "image {}x{} smaller than SSIM window {window}",
            shape.height, shape.width
        )));
    }
    let g = gaussian_window(window, SSIM_SIGMA);
    let (c1, c2) = ((k1 * 1.0f64).powi(2), (k2 * 1.0f64).powi(2));
    let (oh, ow) = (shape.height - window + 1, shape.width - window + 1);
    let mut total = 0.0;
    for c in 0..shape.channels {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let mut sum = 0.0;
        for r0 in 0..oh {
            for c0 in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..window {
                    for j in 0..window {
                        let wgt = g[i] * g[j];
                        let idx = (r0 + i) * shape.width + c0 + j;
                        let (x, y) = (pa[idx], pb[idx]);
                        ma += wgt * x;
                        mb += wgt * y;
                        saa += wgt * x * x;
                        sbb += wgt * y * y;
                        sab += wgt * x * y;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / shape.channels as f64)
}
