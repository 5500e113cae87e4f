use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{GrayImage, RgbImage};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    RawF32,
    /// Tiles of `(height, width, channels)` images, near-square grid.
    PngGrid((usize, usize, usize)),
}

impl FromStr for ExportFormat {
    type Err = Error;

    /// `raw` or `png:h,w,c`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "raw" {
            return Ok(ExportFormat::RawF32);
        }
        let shape = s
            .strip_prefix("png:")
            .ok_or_else(|| Error::InvalidArgument(format!("unknown export format {s:?}")))?;
        let dims: Vec<usize> = shape
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad image shape {shape:?}")))?;
        match dims[..] {
            [h, w, c] => Ok(ExportFormat::PngGrid((h, w, c))),
            _ => Err(Error::InvalidArgument(format!("bad image shape {shape:?}"))),
        }
    }
}

pub fn export_samples(x: ArrayView2<f64>, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::RawF32 => write_raw_f32(x, path),
        ExportFormat::PngGrid(shape) => write_png_grid(x, shape, path),
    }
}

/// Rows as little-endian `f32`, row-major.
pub fn write_raw_f32(x: ArrayView2<f64>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * x.len());
    for &v in x.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes every row as one tile; values are clamped to `[0, 1]`.
pub fn write_png_grid(x: ArrayView2<f64>, shape: (usize, usize, usize), path: &Path) -> Result<()> {
    let (h, w, c) = shape;
    if h * w * c != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "image shape h*w*c",
            expected: x.ncols(),
            actual: h * w * c,
        });
    }
    if c != 1 && c != 3 {
        return Err(Error::InvalidArgument(format!("PNG export needs 1 or 3 channels, got {c}")));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples to export".into()));
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut buf = vec![0u8; gw * gh * c];
    for (i, sample) in x.rows().into_iter().enumerate() {
        let (ty, tx) = (i / cols * h, i % cols * w);
        for (j, &v) in sample.iter().enumerate() {
            let ch = j % c;
            let px = j / c;
            let (y, xx) = (ty + px / w, tx + px % w);
            buf[(y * gw + xx) * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let result = if c == 1 {
        GrayImage::from_raw(gw as u32, gh as u32, buf).expect("sized").save(path)
    } else {
        RgbImage::from_raw(gw as u32, gh as u32, buf).expect("sized").save(path)
    };
    result.map_err(Error::from)
}
