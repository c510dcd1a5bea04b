//! Planar image tensors and binary PGM/PPM I/O.
//!
//! Data is stored channel-major: index = `c * height * width + row * width + col`.
//! This is the vector layout every operator in [`crate::spectral`] works on.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(invalid(format!("image dimensions must be positive: {shape:?}")));
        }
        check_len("image data", shape.len(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image data contains non-finite values"));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn clipped(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Encodes as binary PGM (1 channel) or PPM (3 channels), 8-bit, clipping to [0,1].
    pub fn to_pnm(&self) -> Result<Vec<u8>> {
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        let magic = match channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Format(format!("cannot write {c}-channel image as PNM"))),
        };
        let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
        out.reserve(self.data.len());
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    out.push(to_u8(self.data[self.shape.index(c, row, col)]));
                }
            }
        }
        Ok(out)
    }

    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let magic = next_token(&mut reader)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
        };
        let width = parse_usize(&next_token(&mut reader)?)?;
        let height = parse_usize(&next_token(&mut reader)?)?;
        let maxval = parse_usize(&next_token(&mut reader)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let shape = Shape::new(channels, height, width);
        let mut raw = vec![0u8; shape.len()];
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::Format("truncated pixel data".into()))?;
        let mut data = vec![0.0; shape.len()];
        let mut it = raw.iter();
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data[shape.index(c, row, col)] = *it.next().unwrap() as f64 / maxval as f64;
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pnm()?)?;
        Ok(())
    }

    pub fn read_pnm(path: &Path) -> Result<Self> {
        Self::from_pnm(&std::fs::read(path)?)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ascii header".into()))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad header number {s:?}")))
}
