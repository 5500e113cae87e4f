//! Dataset loaders, the `MFA1`/`NDB1` binary containers and sample export.
//!
//! Every loader returns 64-bit rows and rejects non-finite values. Pixel
//! formats (IDX bytes, PNG) are scaled to `[0, 1]` on ingestion.

mod container;
mod export;
mod loaders;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

pub use container::{
    load_bins, load_model, load_model_with_meta, save_bins, save_model, save_model_with_meta, ModelMeta,
    BINS_MAGIC, CONTAINER_VERSION, MODEL_MAGIC,
};
pub use export::{export_samples, write_png_grid, write_raw_f32, ExportFormat};
pub use loaders::{load_csv, load_idx, load_image_dir, load_raw_f32};

use crate::error::{Error, Result};

/// Directory searched for relative data paths that do not exist as given.
pub const DATA_DIR_ENV: &str = "MFA_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    Csv,
    /// Little-endian `f32` rows of the given width.
    Raw(usize),
    ImageDir,
}

impl DataFormat {
    /// Parses `idx`, `csv`, `raw` or `imgdir`; `raw` takes its width from `dim`.
    pub fn parse(name: &str, dim: Option<usize>) -> Result<Self> {
        match name {
            "idx" => Ok(DataFormat::Idx),
            "csv" => Ok(DataFormat::Csv),
            "imgdir" => Ok(DataFormat::ImageDir),
            "raw" => match dim {
                Some(d) if d > 0 => Ok(DataFormat::Raw(d)),
                _ => Err(Error::InvalidArgument("raw data needs a positive row width".into())),
            },
            other => Err(Error::InvalidArgument(format!("unknown data format {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DataFormat::Idx => "idx",
            DataFormat::Csv => "csv",
            DataFormat::Raw(_) => "raw",
            DataFormat::ImageDir => "imgdir",
        }
    }

    /// Whether values were scaled from 8-bit pixels.
    pub fn is_pixel_scaled(&self) -> bool {
        matches!(self, DataFormat::Idx | DataFormat::ImageDir)
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, None)
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a [`Dataset`] came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub path: PathBuf,
    pub format: DataFormat,
}

impl DataSource {
    /// Value recorded as `scaling` in model headers.
    pub fn scaling(&self) -> &'static str {
        if self.format.is_pixel_scaled() {
            "pixel/255"
        } else {
            "none"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d`.
    pub data: Array2<f64>,
    /// `(height, width, channels)` for image data.
    pub shape_hint: Option<(usize, usize, usize)>,
    pub source: DataSource,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        if n < self.data.nrows() {
            self.data = self.data.slice(ndarray::s![..n, ..]).to_owned();
        }
    }
}

/// `path` itself if it exists, otherwise `$MFA_DATA_DIR/path` for relative paths.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                candidate
            } else {
                path.to_path_buf()
            }
        }
        None => path.to_path_buf(),
    }
}

/// Loads `path` in the given format, resolving it against the data directory.
pub fn load(path: &Path, format: DataFormat) -> Result<Dataset> {
    let path = resolve_data_path(path);
    match format {
        DataFormat::Idx => load_idx(&path),
        DataFormat::Csv => load_csv(&path),
        DataFormat::Raw(d) => load_raw_f32(&path, d),
        DataFormat::ImageDir => load_image_dir(&path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names() {
        assert_eq!(DataFormat::parse("raw", Some(3)).unwrap(), DataFormat::Raw(3));
        assert!(DataFormat::parse("raw", None).is_err());
        assert!("jpeg".parse::<DataFormat>().is_err());
        for f in ["idx", "csv", "imgdir"] {
            assert_eq!(f.parse::<DataFormat>().unwrap().to_string(), f);
        }
    }
}
