//! Measurement synthesis: `y = Hx₀` followed by a corruption in measurement space.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::image::{ImageTensor, Shape};
use crate::spectral::SpectralOperator;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Pattern varies down the rows, constant along each row.
    #[default]
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionSpec {
    None,
    Gaussian {
        sigma_y: f64,
    },
    SaltPepper {
        fraction: f64,
        /// Clip the ±1 values into [0, 1].
        #[serde(default)]
        clip: bool,
    },
    Periodic {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        axis: Axis,
    },
    Quantize {
        bits: u32,
    },
    DctQuantize {
        quality_proxy: f64,
    },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::Gaussian { sigma_y } if !(sigma_y >= 0.0) => {
                Err(invalid(format!("sigma_y must be >= 0, got {sigma_y}")))
            }
            CorruptionSpec::SaltPepper { fraction, .. } if !(0.0..=1.0).contains(&fraction) => {
                Err(invalid(format!("salt-pepper fraction {fraction} outside [0,1]")))
            }
            CorruptionSpec::Periodic { amplitude, .. } if !(amplitude >= 0.0) => {
                Err(invalid(format!("amplitude must be >= 0, got {amplitude}")))
            }
            CorruptionSpec::Quantize { bits } if !(1..=16).contains(&bits) => {
                Err(invalid(format!("bits must be in 1..=16, got {bits}")))
            }
            CorruptionSpec::DctQuantize { quality_proxy } if !(quality_proxy >= 0.0) => {
                Err(invalid(format!("quality proxy must be >= 0, got {quality_proxy}")))
            }
            _ => Ok(()),
        }
    }
}

/// `y = corrupt(Hx₀)`.
pub fn measure<R: Rng + ?Sized>(
    op: &SpectralOperator,
    x0: &[f64],
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut y = op.apply(x0)?;
    let shape = op
        .out_shape()
        .unwrap_or_else(|| Shape::new(1, op.out_dim(), 1));
    match *spec {
        CorruptionSpec::None => {}
        CorruptionSpec::Gaussian { sigma_y } => {
            for v in &mut y {
                *v += sigma_y * rng.sample::<f64, _>(StandardNormal);
            }
        }
        CorruptionSpec::SaltPepper { fraction, clip } => salt_pepper(&mut y, fraction, clip, rng),
        CorruptionSpec::Periodic {
            amplitude,
            frequency,
            axis,
        } => {
            let field = periodic_noise(shape, amplitude, frequency, axis);
            for (v, f) in y.iter_mut().zip(&field) {
                *v += f;
            }
        }
        CorruptionSpec::Quantize { bits } => y = quantize(&y, bits),
        CorruptionSpec::DctQuantize { quality_proxy } => {
            let img = ImageTensor::new(shape, y)?;
            y = dct_quantize(&img, quality_proxy).into_data();
        }
    }
    Ok(y)
}

/// Replaces exactly `round(fraction · len)` entries by ±1 with equal odds.
pub fn salt_pepper<R: Rng + ?Sized>(y: &mut [f64], fraction: f64, clip: bool, rng: &mut R) {
    let count = (fraction * y.len() as f64).round() as usize;
    for i in sample(rng, y.len(), count.min(y.len())) {
        let v: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        y[i] = if clip { v.clamp(0.0, 1.0) } else { v };
    }
}

/// `A·sin(2π f · row / height)` (or along columns), broadcast over the other
/// axis and all channels, zero phase.
pub fn periodic_noise(shape: Shape, amplitude: f64, frequency: f64, axis: Axis) -> Vec<f64> {
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        for r in 0..shape.height {
            for col in 0..shape.width {
                let phase = match axis {
                    Axis::Rows => r as f64 / shape.height as f64,
                    Axis::Cols => col as f64 / shape.width as f64,
                };
                out[shape.index(c, r, col)] =
                    amplitude * (std::f64::consts::TAU * frequency * phase).sin();
            }
        }
    }
    out
}

/// Uniform quantizer on [0,1] with `2^bits` levels `k/(L−1)`; values are
/// clipped first, ties go to the lower level.
pub fn quantize(v: &[f64], bits: u32) -> Vec<f64> {
    let top = ((1u64 << bits) - 1) as f64;
    v.iter()
        .map(|&x| {
            let q = x.clamp(0.0, 1.0) * top;
            (q - 0.5).ceil().clamp(0.0, top) / top
        })
        .collect()
}

/// Standard JPEG luminance quantization table (row-major 8×8).
pub const LUMA_QUANT: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Table multiplier corresponding to a JPEG quality factor (IJG scaling).
pub fn jpeg_quality_scale(quality: u32) -> f64 {
    let q = quality.clamp(1, 100) as f64;
    if q < 50.0 {
        50.0 / q
    } else {
        (200.0 - 2.0 * q) / 100.0
    }
}

fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Orthonormal 8×8 2-D DCT-II (`inverse = false`) or its inverse.
pub fn dct8x8(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    // rows
    for r in 0..8 {
        for k in 0..8 {
            let mut s = 0.0;
            for n in 0..8 {
                s += if inverse { m[n][k] } else { m[k][n] } * block[r * 8 + n];
            }
            tmp[r * 8 + k] = s;
        }
    }
    // columns
    for c in 0..8 {
        for k in 0..8 {
            let mut s = 0.0;
            for n in 0..8 {
                s += if inverse { m[n][k] } else { m[k][n] } * tmp[n * 8 + c];
            }
            out[k * 8 + c] = s;
        }
    }
    out
}

/// Block-DCT coefficient quantization, a stand-in for JPEG compression.
///
/// Works in 8-bit units with a −128 level shift. Each 8×8 block per channel is
/// transformed, divided by `LUMA_QUANT · quality_proxy`, rounded, rescaled and
/// inverted. Dimensions not divisible by 8 are edge-padded and cropped back.
/// `quality_proxy = 0` disables quantization.
pub fn dct_quantize(image: &ImageTensor, quality_proxy: f64) -> ImageTensor {
    if quality_proxy <= 0.0 {
        return image.clone();
    }
    let shape = image.shape();
    let ph = shape.height.div_ceil(8) * 8;
    let pw = shape.width.div_ceil(8) * 8;
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        let plane = image.channel(c);
        for br in (0..ph).step_by(8) {
            for bc in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for r in 0..8 {
                    for col in 0..8 {
                        let sr = (br + r).min(shape.height - 1);
                        let sc = (bc + col).min(shape.width - 1);
                        block[r * 8 + col] = plane[sr * shape.width + sc] * 255.0 - 128.0;
                    }
                }
                let mut coef = dct8x8(&block, false);
                for (v, q) in coef.iter_mut().zip(LUMA_QUANT.iter()) {
                    let step = q * quality_proxy;
                    *v = (*v / step).round() * step;
                }
                let rec = dct8x8(&coef, true);
                for r in 0..8 {
                    for col in 0..8 {
                        let (rr, cc) = (br + r, bc + col);
                        if rr < shape.height && cc < shape.width {
                            out[shape.index(c, rr, cc)] = (rec[r * 8 + col] + 128.0) / 255.0;
                        }
                    }
                }
            }
        }
    }
    ImageTensor::new(shape, out).expect("shape preserved")
}

/// Convenience: corrupt an image directly (identity operator).
pub fn corrupt_image<R: Rng + ?Sized>(image: &ImageTensor, spec: &CorruptionSpec, rng: &mut R) -> Result<Vec<f64>> {
    let op = SpectralOperator::identity(image.shape())?;
    check_len("image", op.in_dim(), image.data().len())?;
    measure(&op, image.data(), spec, rng)
}
