//! Sharpness score: `log(sum hp^2) - log(sum img^2)` where `img` is the
//! mean-subtracted luminance and `hp = img - gaussian_blur(img)`.
//!
//! Images are flat rows in height-width-channel order. The score does not
//! change when all pixels are scaled or shifted by a constant.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessConfig {
    pub kernel_sigma: f64,
    /// Defaults to `ceil(3 sigma)`.
    pub kernel_radius: Option<usize>,
    /// Only the first `sample_count` images of a set are scored.
    pub sample_count: usize,
    /// `(height, width, channels)`.
    pub image_shape: (usize, usize, usize),
}

impl SharpnessConfig {
    pub fn new(image_shape: (usize, usize, usize)) -> Self {
        Self {
            kernel_sigma: 1.0,
            kernel_radius: None,
            sample_count: 2000,
            image_shape,
        }
    }

    pub fn radius(&self) -> usize {
        self.kernel_radius
            .unwrap_or_else(|| default_radius(self.kernel_sigma))
    }

    fn validate(&self) -> Result<()> {
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return Err(Error::InvalidArgument("kernel sigma must be positive".into()));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let (h, w, c) = self.image_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidArgument("image shape must be non-zero".into()));
        }
        Ok(())
    }

    fn pixels(&self) -> usize {
        let (h, w, c) = self.image_shape;
        h * w * c
    }
}

fn default_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-D Gaussian taps `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Symmetric reflection of an out-of-range index (`... b a | a b c ... | c b ...`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Separable Gaussian blur of one channel with reflected borders.
/// `sigma == 0` returns the input.
pub fn gaussian_blur(img: ArrayView2<f64>, sigma: f64, radius: usize) -> Array2<f64> {
    if sigma == 0.0 || radius == 0 {
        return img.to_owned();
    }
    let taps = gaussian_kernel(sigma, radius);
    let (h, w) = img.dim();
    let r = radius as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * img[[y, reflect(x as isize + k as isize - r, w)]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[[reflect(y as isize + k as isize - r, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Blurs every channel of a flat HWC image.
pub fn blur_image(pixels: ArrayView1<f64>, shape: (usize, usize, usize), sigma: f64) -> Result<Array1<f64>> {
    let (h, w, c) = shape;
    ensure_dim("image pixels", h * w * c, pixels.len())?;
    let mut out = Array1::zeros(pixels.len());
    for ch in 0..c {
        let plane = Array2::from_shape_fn((h, w), |(y, x)| pixels[(y * w + x) * c + ch]);
        let blurred = gaussian_blur(plane.view(), sigma, default_radius(sigma));
        for ((y, x), &v) in blurred.indexed_iter() {
            out[(y * w + x) * c + ch] = v;
        }
    }
    Ok(out)
}

/// Unweighted channel mean as an `h x w` plane.
pub fn luminance(pixels: ArrayView1<f64>, shape: (usize, usize, usize)) -> Result<Array2<f64>> {
    let (h, w, c) = shape;
    ensure_dim("image pixels", h * w * c, pixels.len())?;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let base = (y * w + x) * c;
        (0..c).map(|ch| pixels[base + ch]).sum::<f64>() / c as f64
    }))
}

/// Sharpness of one image; `-inf` for an image that is constant.
pub fn image_sharpness(pixels: ArrayView1<f64>, cfg: &SharpnessConfig) -> Result<f64> {
    cfg.validate()?;
    if !pixels.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("image pixels".into()));
    }
    let mut lum = luminance(pixels, cfg.image_shape)?;
    let mean = lum.mean().expect("non-empty");
    lum.mapv_inplace(|v| v - mean);
    let energy: f64 = lum.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let low = gaussian_blur(lum.view(), cfg.kernel_sigma, cfg.radius());
    let high: f64 = lum.iter().zip(low.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(high.ln() - energy.ln())
}

/// Mean sharpness over the first `sample_count` rows. Constant images are
/// skipped with a warning.
pub fn set_sharpness(images: ArrayView2<f64>, cfg: &SharpnessConfig) -> Result<f64> {
    cfg.validate()?;
    ensure_dim("image pixels", cfg.pixels(), images.ncols())?;
    if images.nrows() == 0 {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for row in images.rows().into_iter().take(cfg.sample_count) {
        let s = image_sharpness(row, cfg)?;
        if s.is_finite() {
            total += s;
            used += 1;
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("{skipped} constant images excluded from the sharpness average");
    }
    if used == 0 {
        return Err(Error::InvalidArgument("every image is constant".into()));
    }
    Ok(total / used as f64)
}
