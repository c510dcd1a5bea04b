//! Forward operators held in SVD form, `H = U Σ Vᵀ`.
//!
//! Factors are thin: `U` is `m × r`, `V` is `d × r` with `r = min(m, d)`, both
//! with orthonormal columns. Directions orthogonal to the columns of `V` are in
//! the null space of `H` and are never represented explicitly; every MAS solve
//! leaves them untouched, so the thin factors are all the solvers need.
//!
//! Each catalog operator has a structured applier that never materializes `H`.
//! [`SpectralOperator::dense`] is the explicit, size-capped fallback.

mod fourier;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::image::Shape;
use fourier::{Coord, RealFourier2d};

/// Singular values at or below `RANK_TOL · s_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Default cap on `m · d` for [`SpectralOperator::dense`].
pub const DENSE_ENTRY_CAP: usize = 4096 * 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Identity,
    Mask,
    BlockDownsample,
    CircularBlur,
    ChannelAverage,
    Dense,
}

#[derive(Debug, Clone)]
enum Factors {
    Identity,
    /// `U = I`, `Vᵀ` picks the kept coordinates.
    Selection { kept: Vec<usize> },
    /// Output `g` is the mean of `members[g*n .. (g+1)*n]`.
    /// `V` column `g` is the normalized indicator of that group.
    GroupMean { members: Vec<usize>, group: usize },
    Circulant(Box<Circulant>),
    Dense { u: DMatrix<f64>, vt: DMatrix<f64> },
}

#[derive(Debug, Clone)]
struct Circulant {
    channels: usize,
    fourier: RealFourier2d,
    /// Unit phasor of the kernel spectrum per frequency group.
    phase: Vec<Complex64>,
}

/// A linear map `ℝᵈ → ℝᵐ` with known SVD factors.
///
/// Immutable once built and `Send + Sync`.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    structure: Structure,
    in_dim: usize,
    out_dim: usize,
    singulars: Vec<f64>,
    factors: Factors,
    in_shape: Option<Shape>,
    out_shape: Option<Shape>,
}

/// Odd-sized 2-D convolution kernel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("kernel data", rows * cols, data.len())?;
        if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
            return Err(invalid(format!("kernel size must be odd, got {rows}x{cols}")));
        }
        let sum: f64 = data.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("kernel must sum to 1, sums to {sum}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// `size × size` box filter.
    pub fn uniform(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(size, size, vec![1.0 / n as f64; n])
    }

    /// `1 × size` box filter, acting along rows only.
    pub fn uniform_1d(size: usize) -> Result<Self> {
        Self::new(1, size, vec![1.0 / size as f64; size])
    }
}

impl SpectralOperator {
    pub fn identity(shape: Shape) -> Result<Self> {
        let d = shape.len();
        if d == 0 {
            return Err(invalid("identity operator needs positive dimension"));
        }
        Ok(Self {
            structure: Structure::Identity,
            in_dim: d,
            out_dim: d,
            singulars: vec![1.0; d],
            factors: Factors::Identity,
            in_shape: Some(shape),
            out_shape: Some(shape),
        })
    }

    /// Inpainting operator. `mask[i] == true` keeps entry `i`; the output lists
    /// the kept entries in index order.
    pub fn mask(shape: Shape, mask: &[bool]) -> Result<Self> {
        check_len("mask", shape.len(), mask.len())?;
        let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if kept.is_empty() {
            return Err(invalid("mask keeps no entries"));
        }
        Ok(Self {
            structure: Structure::Mask,
            in_dim: shape.len(),
            out_dim: kept.len(),
            singulars: vec![1.0; kept.len()],
            factors: Factors::Selection { kept },
            in_shape: Some(shape),
            out_shape: None,
        })
    }

    /// `f × f` block averaging per channel; every mode has singular value `1/f`.
    pub fn block_downsample(channels: usize, height: usize, width: usize, factor: usize) -> Result<Self> {
        if factor == 0 || !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
            return Err(invalid(format!(
                "downsample factor {factor} must divide {height}x{width}"
            )));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid("downsample needs positive dimensions"));
        }
        let shape = Shape::new(channels, height, width);
        let (oh, ow) = (height / factor, width / factor);
        let mut members = Vec::with_capacity(shape.len());
        for c in 0..channels {
            for br in 0..oh {
                for bc in 0..ow {
                    for r in 0..factor {
                        for cc in 0..factor {
                            members.push(shape.index(c, br * factor + r, bc * factor + cc));
                        }
                    }
                }
            }
        }
        let m = channels * oh * ow;
        Ok(Self {
            structure: Structure::BlockDownsample,
            in_dim: shape.len(),
            out_dim: m,
            singulars: vec![1.0 / factor as f64; m],
            factors: Factors::GroupMean {
                members,
                group: factor * factor,
            },
            in_shape: Some(shape),
            out_shape: Some(Shape::new(channels, oh, ow)),
        })
    }

    /// Per-pixel RGB → gray averaging; every mode has singular value `1/√3`.
    pub fn channel_average(height: usize, width: usize) -> Result<Self> {
        Self::channel_average_for(Shape::new(3, height, width))
    }

    /// Same as [`channel_average`](Self::channel_average), validating the input shape.
    pub fn channel_average_for(shape: Shape) -> Result<Self> {
        if shape.channels != 3 {
            return Err(invalid(format!(
                "channel average needs 3 channels, got {}",
                shape.channels
            )));
        }
        if shape.plane() == 0 {
            return Err(invalid("channel average needs positive dimensions"));
        }
        let p = shape.plane();
        let members: Vec<usize> = (0..p).flat_map(|i| [i, i + p, i + 2 * p]).collect();
        Ok(Self {
            structure: Structure::ChannelAverage,
            in_dim: 3 * p,
            out_dim: p,
            singulars: vec![1.0 / 3f64.sqrt(); p],
            factors: Factors::GroupMean { members, group: 3 },
            in_shape: Some(shape),
            out_shape: Some(Shape::new(1, shape.height, shape.width)),
        })
    }

    /// Circular (periodic boundary) 2-D filtering, same kernel on every channel:
    /// `y[r, c] = Σ k[a, b] · x[(r + a - a₀) mod h, (c + b - b₀) mod w]` with
    /// `(a₀, b₀)` the kernel center.
    pub fn circular_blur(channels: usize, height: usize, width: usize, kernel: &Kernel) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid("blur needs positive dimensions"));
        }
        if kernel.rows.is_multiple_of(2) || kernel.cols.is_multiple_of(2) {
            return Err(invalid("kernel size must be odd"));
        }
        if kernel.rows > height || kernel.cols > width {
            return Err(invalid(format!(
                "kernel {}x{} larger than image {height}x{width}",
                kernel.rows, kernel.cols
            )));
        }
        let fourier = RealFourier2d::new(height, width);
        // Kernel laid out as a convolution image so that y = x ⊛ kimg.
        let (cr, cc) = (kernel.rows / 2, kernel.cols / 2);
        let mut spec = vec![Complex64::new(0.0, 0.0); height * width];
        for a in 0..kernel.rows {
            for b in 0..kernel.cols {
                let r = (cr + height - a) % height;
                let c = (cc + width - b) % width;
                spec[r * width + c] += kernel.data[a * kernel.cols + b];
            }
        }
        fourier.fft2(&mut spec, false);
        let mut plane_singulars = Vec::with_capacity(height * width);
        let mut phase = Vec::with_capacity(fourier.coords.len());
        for coord in &fourier.coords {
            let (i, reps) = match *coord {
                Coord::Real(i) => (i, 1),
                Coord::Pair(i, _) => (i, 2),
            };
            let mag = spec[i].norm();
            phase.push(if mag > 0.0 {
                spec[i] / mag
            } else {
                Complex64::new(1.0, 0.0)
            });
            plane_singulars.extend(std::iter::repeat_n(mag, reps));
        }
        let shape = Shape::new(channels, height, width);
        let singulars = plane_singulars.repeat(channels);
        Ok(Self {
            structure: Structure::CircularBlur,
            in_dim: shape.len(),
            out_dim: shape.len(),
            singulars,
            factors: Factors::Circulant(Box::new(Circulant {
                channels,
                fourier,
                phase,
            })),
            in_shape: Some(shape),
            out_shape: Some(shape),
        })
    }

    /// Arbitrary `m × d` matrix via numeric SVD, capped at [`DENSE_ENTRY_CAP`] entries.
    pub fn dense(matrix: &DMatrix<f64>) -> Result<Self> {
        Self::dense_with_cap(matrix, DENSE_ENTRY_CAP)
    }

    pub fn dense_with_cap(matrix: &DMatrix<f64>, cap: usize) -> Result<Self> {
        let (m, d) = matrix.shape();
        if m == 0 || d == 0 {
            return Err(invalid("dense operator needs positive dimensions"));
        }
        if m.saturating_mul(d) > cap {
            return Err(invalid(format!("dense operator {m}x{d} exceeds cap of {cap} entries")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dense operator has non-finite entries"));
        }
        // faer rather than nalgebra: nalgebra's SVD with vectors can lose
        // accuracy badly on rank-deficient inputs.
        let fm = faer::Mat::<f64>::from_fn(m, d, |i, j| matrix[(i, j)]);
        let svd = fm
            .thin_svd()
            .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
        let r = m.min(d);
        let (fu, fv, fs) = (svd.U(), svd.V(), svd.S().column_vector());
        let u = DMatrix::from_fn(m, r, |i, j| fu[(i, j)]);
        let vt = DMatrix::from_fn(r, d, |i, j| fv[(j, i)]);
        Ok(Self {
            structure: Structure::Dense,
            in_dim: d,
            out_dim: m,
            singulars: (0..r).map(|i| fs[i]).collect(),
            factors: Factors::Dense { u, vt },
            in_shape: None,
            out_shape: None,
        })
    }

    /// Operator with prescribed singular values and identity factors, `m = d = s.len()`.
    pub fn diagonal(singulars: Vec<f64>) -> Result<Self> {
        if singulars.is_empty() || singulars.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(invalid("diagonal singular values must be finite and nonnegative"));
        }
        let n = singulars.len();
        Ok(Self {
            structure: Structure::Dense,
            in_dim: n,
            out_dim: n,
            singulars,
            factors: Factors::Dense {
                u: DMatrix::identity(n, n),
                vt: DMatrix::identity(n, n),
            },
            in_shape: None,
            out_shape: None,
        })
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Number of represented modes, `min(m, d)`.
    pub fn rank_bound(&self) -> usize {
        self.singulars.len()
    }

    pub fn singulars(&self) -> &[f64] {
        &self.singulars
    }

    pub fn in_shape(&self) -> Option<Shape> {
        self.in_shape
    }

    pub fn out_shape(&self) -> Option<Shape> {
        self.out_shape
    }

    pub fn s_max(&self) -> f64 {
        self.singulars.iter().copied().fold(0.0, f64::max)
    }

    /// Threshold below which a singular value counts as zero.
    pub fn zero_threshold(&self) -> f64 {
        RANK_TOL * self.s_max()
    }

    /// Per-mode flag: singular value is numerically nonzero.
    pub fn nonzero_modes(&self) -> Vec<bool> {
        let tol = self.zero_threshold();
        self.singulars.iter().map(|&s| s > tol).collect()
    }

    pub fn rank(&self) -> usize {
        self.nonzero_modes().iter().filter(|&&b| b).count()
    }

    /// `Vᵀx`, length `r`.
    pub fn vt(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Vᵀ input", self.in_dim, x.len())?;
        Ok(self.vt_raw(x))
    }

    /// `Vz`, length `d`.
    pub fn v(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("V input", self.rank_bound(), z.len())?;
        Ok(self.v_raw(z))
    }

    /// `Uᵀy`, length `r`.
    pub fn ut(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("Uᵀ input", self.out_dim, y.len())?;
        Ok(self.ut_raw(y))
    }

    /// `Uz`, length `m`.
    pub fn u(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("U input", self.rank_bound(), z.len())?;
        Ok(self.u_raw(z))
    }

    /// `Hx = U Σ Vᵀ x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.in_dim, x.len())?;
        let mut z = self.vt_raw(x);
        for (zi, s) in z.iter_mut().zip(&self.singulars) {
            *zi *= s;
        }
        Ok(self.u_raw(&z))
    }

    /// `Hᵀv = V Σ Uᵀ v`.
    pub fn adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.out_dim, v.len())?;
        let mut z = self.ut_raw(v);
        for (zi, s) in z.iter_mut().zip(&self.singulars) {
            *zi *= s;
        }
        Ok(self.v_raw(&z))
    }

    /// `H†v`, scaling mode `i` by `1/sᵢ` on nonzero modes and by 0 otherwise.
    pub fn pinv_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("pseudo-inverse input", self.out_dim, v.len())?;
        let tol = self.zero_threshold();
        let mut z = self.ut_raw(v);
        for (zi, &s) in z.iter_mut().zip(&self.singulars) {
            *zi = if s > tol { *zi / s } else { 0.0 };
        }
        Ok(self.v_raw(&z))
    }

    /// Orthogonal projection onto the row space (span of nonzero-mode `V` columns).
    pub fn project_row_space(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.vt(x)?;
        for (zi, nz) in z.iter_mut().zip(self.nonzero_modes()) {
            if !nz {
                *zi = 0.0;
            }
        }
        Ok(self.v_raw(&z))
    }

    /// Explicit `m × d` matrix, built column by column from [`apply`](Self::apply).
    pub fn materialize(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.out_dim, self.in_dim);
        let mut e = vec![0.0; self.in_dim];
        for j in 0..self.in_dim {
            e[j] = 1.0;
            let col = self.apply(&e).expect("length matches");
            h.set_column(j, &nalgebra::DVector::from_vec(col));
            e[j] = 0.0;
        }
        h
    }

    pub(crate) fn vt_raw(&self, x: &[f64]) -> Vec<f64> {
        match &self.factors {
            Factors::Identity => x.to_vec(),
            Factors::Selection { kept } => kept.iter().map(|&i| x[i]).collect(),
            Factors::GroupMean { members, group } => {
                let norm = 1.0 / (*group as f64).sqrt();
                members
                    .chunks_exact(*group)
                    .map(|g| g.iter().map(|&i| x[i]).sum::<f64>() * norm)
                    .collect()
            }
            Factors::Circulant(c) => {
                let p = c.fourier.len();
                let mut out = Vec::with_capacity(self.in_dim);
                for ch in 0..c.channels {
                    c.fourier.forward(&x[ch * p..(ch + 1) * p], None, &mut out);
                }
                out
            }
            Factors::Dense { vt, .. } => (vt * nalgebra::DVector::from_column_slice(x)).iter().copied().collect(),
        }
    }

    pub(crate) fn v_raw(&self, z: &[f64]) -> Vec<f64> {
        match &self.factors {
            Factors::Identity => z.to_vec(),
            Factors::Selection { kept } => {
                let mut x = vec![0.0; self.in_dim];
                for (&i, &v) in kept.iter().zip(z) {
                    x[i] = v;
                }
                x
            }
            Factors::GroupMean { members, group } => {
                let norm = 1.0 / (*group as f64).sqrt();
                let mut x = vec![0.0; self.in_dim];
                for (g, &v) in members.chunks_exact(*group).zip(z) {
                    for &i in g {
                        x[i] = v * norm;
                    }
                }
                x
            }
            Factors::Circulant(c) => {
                let p = c.fourier.len();
                let mut x = vec![0.0; self.in_dim];
                for ch in 0..c.channels {
                    c.fourier
                        .inverse(&z[ch * p..(ch + 1) * p], None, &mut x[ch * p..(ch + 1) * p]);
                }
                x
            }
            Factors::Dense { vt, .. } => (vt.transpose() * nalgebra::DVector::from_column_slice(z))
                .iter()
                .copied()
                .collect(),
        }
    }

    pub(crate) fn ut_raw(&self, y: &[f64]) -> Vec<f64> {
        match &self.factors {
            Factors::Identity | Factors::Selection { .. } | Factors::GroupMean { .. } => y.to_vec(),
            Factors::Circulant(c) => {
                let p = c.fourier.len();
                let mut out = Vec::with_capacity(self.out_dim);
                for ch in 0..c.channels {
                    c.fourier
                        .forward(&y[ch * p..(ch + 1) * p], Some(&c.phase), &mut out);
                }
                out
            }
            Factors::Dense { u, .. } => (u.transpose() * nalgebra::DVector::from_column_slice(y))
                .iter()
                .copied()
                .collect(),
        }
    }

    pub(crate) fn u_raw(&self, z: &[f64]) -> Vec<f64> {
        match &self.factors {
            Factors::Identity | Factors::Selection { .. } | Factors::GroupMean { .. } => z.to_vec(),
            Factors::Circulant(c) => {
                let p = c.fourier.len();
                let mut y = vec![0.0; self.out_dim];
                for ch in 0..c.channels {
                    c.fourier.inverse(
                        &z[ch * p..(ch + 1) * p],
                        Some(&c.phase),
                        &mut y[ch * p..(ch + 1) * p],
                    );
                }
                y
            }
            Factors::Dense { u, .. } => (u * nalgebra::DVector::from_column_slice(z)).iter().copied().collect(),
        }
    }
}

/// Per-pixel mask with exactly `round(masked_fraction · h · w)` pixels masked
/// (`false`), broadcast over channels.
pub fn random_mask<R: Rng + ?Sized>(shape: Shape, masked_fraction: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&masked_fraction) {
        return Err(invalid(format!("masked fraction {masked_fraction} outside [0,1]")));
    }
    let p = shape.plane();
    let n_masked = (masked_fraction * p as f64).round() as usize;
    let mut pixel = vec![true; p];
    for i in sample(rng, p, n_masked) {
        pixel[i] = false;
    }
    Ok(broadcast_pixels(shape, &pixel))
}

/// Masks (sets `false`) a `size_h × size_w` box with top-left corner `(top, left)`.
pub fn box_mask(shape: Shape, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Vec<bool>> {
    if top + size_h > shape.height || left + size_w > shape.width {
        return Err(invalid("box mask exceeds image bounds"));
    }
    let mut pixel = vec![true; shape.plane()];
    for r in top..top + size_h {
        for c in left..left + size_w {
            pixel[r * shape.width + c] = false;
        }
    }
    Ok(broadcast_pixels(shape, &pixel))
}

/// Box of half the image side, centered.
pub fn centered_box_mask(shape: Shape) -> Result<Vec<bool>> {
    let (bh, bw) = (shape.height / 2, shape.width / 2);
    box_mask(shape, (shape.height - bh) / 2, (shape.width - bw) / 2, bh, bw)
}

fn broadcast_pixels(shape: Shape, pixel: &[bool]) -> Vec<bool> {
    pixel.repeat(shape.channels)
}
