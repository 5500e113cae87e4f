//! Binary containers:
//!
//! ```text
//! magic (4 bytes) | header length (u32 LE) | header | payload
//! ```
//!
//! The header is UTF-8 `key=value` lines. The payload holds 64-bit
//! little-endian values; its byte length and CRC32 are stored in the header.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{FaComponent, MfaModel};
use crate::ndb::BinningModel;

pub const MODEL_MAGIC: &[u8; 4] = b"MFA1";
pub const BINS_MAGIC: &[u8; 4] = b"NDB1";
pub const CONTAINER_VERSION: u32 = 1;

/// Free-form header fields of a model file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub creator: String,
    /// How training data was scaled, e.g. `pixel/255` or `none`.
    pub scaling: String,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            creator: format!("mfa {}", env!("CARGO_PKG_VERSION")),
            scaling: "none".into(),
        }
    }
}

struct Header {
    fields: Vec<(String, String)>,
}

impl Header {
    fn new() -> Self {
        Self { fields: Vec::new() }
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        self.fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parse(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(map)
    }
}

fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("header lacks {key:?}")))
}

fn number<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = field(map, key)?;
    v.parse()
        .map_err(|_| Error::Format(format!("header field {key}={v:?} is not a number")))
}

fn write_container(path: &Path, magic: &[u8; 4], mut header: Header, payload: &[u8]) -> Result<()> {
    header.push("payload_bytes", payload.len());
    header.push("crc32", format!("{:08x}", crc32fast::hash(payload)));
    let text = header.render();
    let mut out = Vec::with_capacity(8 + text.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Checks magic, version, length and checksum; returns header and payload.
fn read_container(path: &Path, magic: &[u8; 4]) -> Result<(BTreeMap<String, String>, Vec<u8>)> {
    let mut bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Truncated {
            expected: 8 + header_len,
            actual: bytes.len(),
        });
    }
    let text = std::str::from_utf8(&bytes[8..8 + header_len])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let map = Header::parse(text)?;
    let version: u32 = number(&map, "version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::Version(version));
    }
    if field(&map, "dtype")? != "f64" || field(&map, "endian")? != "little" {
        return Err(Error::Format("payload must be little-endian f64".into()));
    }
    let payload_len: usize = number(&map, "payload_bytes")?;
    let payload = bytes.split_off(8 + header_len);
    if payload.len() != payload_len {
        return Err(Error::Truncated {
            expected: payload_len,
            actual: payload.len(),
        });
    }
    let expected = u32::from_str_radix(field(&map, "crc32")?, 16)
        .map_err(|_| Error::Format("bad crc32 field".into()))?;
    let actual = crc32fast::hash(&payload);
    if expected != actual {
        return Err(Error::Checksum { expected, actual });
    }
    Ok((map, payload))
}

fn put(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.bytes.len() < 8 * n {
            return Err(Error::Truncated {
                expected: 8 * n,
                actual: self.bytes.len(),
            });
        }
        let (head, rest) = self.bytes.split_at(8 * n);
        self.bytes = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} unexpected trailing payload bytes", self.bytes.len())))
        }
    }
}

pub fn save_model(model: &MfaModel, path: &Path) -> Result<()> {
    save_model_with_meta(model, path, &ModelMeta::default())
}

pub fn save_model_with_meta(model: &MfaModel, path: &Path, meta: &ModelMeta) -> Result<()> {
    let (k, d, l) = (model.n_components(), model.dim(), model.latent_dim());
    for text in [&meta.creator, &meta.scaling] {
        if text.contains('\n') {
            return Err(Error::InvalidArgument("header values must be single-line".into()));
        }
    }
    let mut header = Header::new();
    header.push("version", CONTAINER_VERSION);
    header.push("dim", d);
    header.push("latent_dim", l);
    header.push("components", k);
    header.push("dtype", "f64");
    header.push("endian", "little");
    header.push("creator", &meta.creator);
    header.push("scaling", &meta.scaling);
    let mut payload = Vec::with_capacity(8 * (k + k * d * (l + 2)));
    put(&mut payload, model.log_pi().iter().copied());
    for c in model.components() {
        put(&mut payload, c.mean.iter().copied());
        put(&mut payload, c.loadings.iter().copied());
        put(&mut payload, c.noise_var.iter().copied());
    }
    write_container(path, MODEL_MAGIC, header, &payload)
}

pub fn load_model(path: &Path) -> Result<MfaModel> {
    Ok(load_model_with_meta(path)?.0)
}

pub fn load_model_with_meta(path: &Path) -> Result<(MfaModel, ModelMeta)> {
    let (map, payload) = read_container(path, MODEL_MAGIC)?;
    let d: usize = number(&map, "dim")?;
    let l: usize = number(&map, "latent_dim")?;
    let k: usize = number(&map, "components")?;
    let expected = 8 * (k + k * d * (l + 2));
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let mut cur = Cursor { bytes: &payload };
    let log_pi = Array1::from(cur.take(k)?);
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let mean = Array1::from(cur.take(d)?);
        let loadings = Array2::from_shape_vec((d, l), cur.take(d * l)?).expect("sized");
        let noise = Array1::from(cur.take(d)?);
        components.push(FaComponent::new(mean, loadings, noise)?);
    }
    cur.finish()?;
    let meta = ModelMeta {
        creator: field(&map, "creator")?.to_string(),
        scaling: field(&map, "scaling")?.to_string(),
    };
    Ok((MfaModel::new(components, log_pi)?, meta))
}

/// Payload: centroids, reference proportions, optional whitening scale,
/// optional dimension subset (as f64), significance.
pub fn save_bins(bins: &BinningModel, path: &Path) -> Result<()> {
    let (k, d) = bins.centroids.dim();
    let mut header = Header::new();
    header.push("version", CONTAINER_VERSION);
    header.push("bins", k);
    header.push("dim", d);
    header.push("n_ref", bins.n_ref);
    header.push("whiten", bins.whiten_scale.is_some() as u8);
    header.push("subsample", bins.subsample_idx.as_ref().map_or(0, Vec::len));
    header.push("dtype", "f64");
    header.push("endian", "little");
    let mut payload = Vec::new();
    put(&mut payload, bins.centroids.iter().copied());
    put(&mut payload, bins.ref_proportions.iter().copied());
    if let Some(w) = &bins.whiten_scale {
        put(&mut payload, w.iter().copied());
    }
    if let Some(idx) = &bins.subsample_idx {
        put(&mut payload, idx.iter().map(|&i| i as f64));
    }
    put(&mut payload, [bins.significance]);
    write_container(path, BINS_MAGIC, header, &payload)
}

pub fn load_bins(path: &Path) -> Result<BinningModel> {
    let (map, payload) = read_container(path, BINS_MAGIC)?;
    let k: usize = number(&map, "bins")?;
    let d: usize = number(&map, "dim")?;
    let whiten: u8 = number(&map, "whiten")?;
    let subsample: usize = number(&map, "subsample")?;
    let mut cur = Cursor { bytes: &payload };
    let centroids = Array2::from_shape_vec((k, d), cur.take(k * d)?).expect("sized");
    let ref_proportions = Array1::from(cur.take(k)?);
    let whiten_scale = if whiten != 0 { Some(Array1::from(cur.take(d)?)) } else { None };
    let subsample_idx = if subsample > 0 {
        let raw = cur.take(subsample)?;
        if raw.iter().any(|&v| v < 0.0 || v.fract() != 0.0 || v >= d as f64) {
            return Err(Error::Format("bad dimension index in bins file".into()));
        }
        Some(raw.into_iter().map(|v| v as usize).collect())
    } else {
        None
    };
    let significance = cur.take(1)?[0];
    cur.finish()?;
    Ok(BinningModel {
        centroids,
        ref_proportions,
        n_ref: number(&map, "n_ref")?,
        whiten_scale,
        subsample_idx,
        significance,
    })
}
