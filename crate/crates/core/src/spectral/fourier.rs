//! Real orthonormal 2-D Fourier coordinates.
//!
//! Every frequency `k` of an `h × w` plane is paired with its conjugate
//! partner `-k`. Self-conjugate frequencies contribute one real coordinate,
//! every other pair contributes two (`√2·Re`, `√2·Im`), so the map is an
//! orthogonal change of basis on `ℝ^{h·w}`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Coord {
    /// Self-conjugate frequency: coordinate is `Re X_k / √n`.
    Real(usize),
    /// First frequency of a conjugate pair: two coordinates `√2 Re`, `√2 Im`.
    Pair(usize, usize),
}

#[derive(Clone)]
pub(crate) struct RealFourier2d {
    pub h: usize,
    pub w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    /// One entry per frequency group, in mode order.
    pub coords: Vec<Coord>,
}

impl std::fmt::Debug for RealFourier2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFourier2d")
            .field("h", &self.h)
            .field("w", &self.w)
            .finish()
    }
}

impl RealFourier2d {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        let mut coords = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let idx = r * w + c;
                let p = ((h - r) % h) * w + (w - c) % w;
                if idx == p {
                    coords.push(Coord::Real(idx));
                } else if idx < p {
                    coords.push(Coord::Pair(idx, p));
                }
            }
        }
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    /// Unnormalized 2-D DFT in place.
    pub fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for chunk in buf.chunks_exact_mut(self.w) {
            row.process(chunk);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.h];
        for c in 0..self.w {
            for r in 0..self.h {
                column[r] = buf[r * self.w + c];
            }
            col.process(&mut column);
            for r in 0..self.h {
                buf[r * self.w + c] = column[r];
            }
        }
    }

    /// Spectrum values (complex) of a real plane, one per frequency group.
    /// `phase` optionally rotates each group by the conjugate of a unit phasor.
    pub fn forward(&self, x: &[f64], phase: Option<&[Complex64]>, out: &mut Vec<f64>) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, false);
        let scale = 1.0 / (self.len() as f64).sqrt();
        let root2 = std::f64::consts::SQRT_2;
        for (g, coord) in self.coords.iter().enumerate() {
            match *coord {
                Coord::Real(i) => {
                    let mut z = buf[i];
                    if let Some(ph) = phase {
                        z *= ph[g].conj();
                    }
                    out.push(z.re * scale);
                }
                Coord::Pair(i, _) => {
                    let mut z = buf[i];
                    if let Some(ph) = phase {
                        z *= ph[g].conj();
                    }
                    out.push(root2 * z.re * scale);
                    out.push(root2 * z.im * scale);
                }
            }
        }
    }

    /// Inverse of [`forward`](Self::forward); consumes `self.len()` coordinates.
    pub fn inverse(&self, coords: &[f64], phase: Option<&[Complex64]>, out: &mut [f64]) {
        let n = self.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = (n as f64).sqrt();
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let mut k = 0;
        for (g, coord) in self.coords.iter().enumerate() {
            match *coord {
                Coord::Real(i) => {
                    let mut z = Complex64::new(coords[k] * scale, 0.0);
                    if let Some(ph) = phase {
                        z *= ph[g];
                    }
                    buf[i] = z;
                    k += 1;
                }
                Coord::Pair(i, p) => {
                    let mut z = Complex64::new(coords[k], coords[k + 1]) * (scale * half);
                    if let Some(ph) = phase {
                        z *= ph[g];
                    }
                    buf[i] = z;
                    buf[p] = z.conj();
                    k += 2;
                }
            }
        }
        self.fft2(&mut buf, true);
        let inv_n = 1.0 / n as f64;
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re * inv_n;
        }
    }
}
