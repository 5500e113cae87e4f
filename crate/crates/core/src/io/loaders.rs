use std::fs;
use std::path::Path;

use image::{ColorType, DynamicImage};
use ndarray::Array2;

use super::{DataFormat, DataSource, Dataset};
use crate::error::{Error, Result};
use crate::model::check_finite;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn source(path: &Path, format: DataFormat) -> DataSource {
    DataSource {
        path: path.to_path_buf(),
        format,
    }
}

/// Reads an IDX tensor of unsigned bytes. Rank-3 tensors become one row per
/// image with a `(h, w, 1)` shape hint; rank 1 is a single column.
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = read(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        let found = bytes.iter().take(4).map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ");
        return Err(Error::BadMagic {
            expected: "00 00 <dtype> <rank>".into(),
            found,
        });
    }
    if bytes[2] != 0x08 {
        return Err(Error::UnsupportedDtype(bytes[2]));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(Error::Format("IDX rank must be at least 1".into()));
    }
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = dims[0];
    let d: usize = dims[1..].iter().product();
    let expected = header_len + n * d;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let data = Array2::from_shape_vec((n, d), bytes[header_len..].iter().map(|&b| b as f64 / 255.0).collect())
        .expect("length checked");
    let shape_hint = (rank == 3).then(|| (dims[1], dims[2], 1));
    Ok(Dataset {
        data,
        shape_hint,
        source: source(path, DataFormat::Idx),
    })
}

/// Comma-separated decimal floats, one sample per line, no header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format(format!(
                    "{}: ragged CSV, line {} has {} fields, expected {w}",
                    path.display(),
                    line + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("{}: line {}: {field:?} is not a number", path.display(), line + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Format(format!("{}: no rows", path.display())))?;
    let data = Array2::from_shape_vec((rows, width), values).expect("rows are rectangular");
    check_finite(data.view(), "CSV data")?;
    Ok(Dataset {
        data,
        shape_hint: None,
        source: source(path, DataFormat::Csv),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Little-endian `f32` values, row-major, `d` per row.
pub fn load_raw_f32(path: &Path, d: usize) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::InvalidArgument("row width must be positive".into()));
    }
    let bytes = read(path)?;
    if bytes.len() % (4 * d) != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {d}-float rows",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((values.len() / d, d), values).expect("length checked");
    check_finite(data.view(), "raw data")?;
    Ok(Dataset {
        data,
        shape_hint: None,
        source: source(path, DataFormat::Raw(d)),
    })
}

/// Grayscale images keep one channel; everything else is decoded as RGB.
fn image_pixels(img: &DynamicImage) -> ((usize, usize, usize), Vec<f64>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            let px = img.to_luma8().into_raw();
            ((h, w, 1), px.into_iter().map(|b| b as f64 / 255.0).collect())
        }
        _ => {
            let px = img.to_rgb8().into_raw();
            ((h, w, 3), px.into_iter().map(|b| b as f64 / 255.0).collect())
        }
    }
}

/// All `*.png` files of a directory in lexicographic order, one row each.
pub fn load_image_dir(path: &Path) -> Result<Dataset> {
    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("{}: no PNG images", path.display())));
    }
    let mut shape = None;
    let mut values = Vec::new();
    for file in &files {
        let img = image::open(file)?;
        let (s, px) = image_pixels(&img);
        match shape {
            None => shape = Some(s),
            Some(first) if first != s => {
                return Err(Error::Format(format!(
                    "{}: shape {s:?} differs from {first:?}",
                    file.display()
                )))
            }
            _ => {}
        }
        values.extend(px);
    }
    let (h, w, c) = shape.expect("at least one image");
    let data = Array2::from_shape_vec((files.len(), h * w * c), values).expect("shapes checked");
    Ok(Dataset {
        data,
        shape_hint: shape,
        source: source(path, DataFormat::ImageDir),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn minimal_idx() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 51, 102, 255, 255, 0, 0, 0]);
        let ds = load_idx(&write(&dir, "a.idx", &bytes)).unwrap();
        assert_eq!(ds.data.dim(), (2, 4));
        assert_eq!(ds.data[[0, 1]], 0.2);
        assert_eq!(ds.data[[0, 3]], 1.0);
        assert_eq!(ds.shape_hint, Some((2, 2, 1)));

        let short = &bytes[..bytes.len() - 1];
        match load_idx(&write(&dir, "b.idx", short)) {
            Err(Error::Truncated { expected, actual }) => assert_eq!((expected, actual), (24, 23)),
            other => panic!("{other:?}"),
        }
        let mut float = bytes.clone();
        float[2] = 0x0d;
        assert!(matches!(load_idx(&write(&dir, "c.idx", &float)), Err(Error::UnsupportedDtype(0x0d))));
        let mut magic = bytes;
        magic[0] = 1;
        assert!(matches!(load_idx(&write(&dir, "d.idx", &magic)), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(&write(&dir, "a.csv", b"1,2\n3,4")).unwrap();
        assert_eq!(ds.data, ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(matches!(load_csv(&write(&dir, "b.csv", b"1,2\n3\n")), Err(Error::Format(_))));
        assert!(load_csv(&write(&dir, "c.csv", b"1,x\n")).is_err());
        assert!(matches!(load_csv(&write(&dir, "d.csv", b"1,inf\n")), Err(Error::NonFinite(_))));
    }

    #[test]
    fn raw_rows() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let ds = load_raw_f32(&write(&dir, "a.raw", &bytes), 4).unwrap();
        assert_eq!(ds.data.dim(), (2, 4));
        assert_eq!(ds.data[[1, 3]], 7.0);
        assert!(load_raw_f32(&write(&dir, "b.raw", &bytes), 3).is_err());
    }

    #[test]
    fn empty_image_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_dir(dir.path()).is_err());
    }
}
