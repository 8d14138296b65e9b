//! Raw volume format: a JSON header plus a sibling payload file of
//! little-endian f32 values in x-fastest order. Label maps use the same
//! payload encoding with integral values and carry a class count.

use super::{LabelVolume, Result, Volume, VolumeError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Intensity,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
    pub kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

impl RawHeader {
    fn new(dims: [usize; 3], spacing: [f64; 3], kind: RawKind) -> Self {
        Self {
            dims,
            spacing,
            dtype: "f32".into(),
            byte_order: "little".into(),
            kind,
            class_count: None,
            data_file: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let h: RawHeader =
            serde_json::from_str(text).map_err(|e| VolumeError::BadHeader(e.to_string()))?;
        if h.dtype != "f32" {
            return Err(VolumeError::BadHeader(format!("unsupported dtype {:?}", h.dtype)));
        }
        if h.byte_order != "little" {
            return Err(VolumeError::BadHeader(format!(
                "unsupported byte order {:?}",
                h.byte_order
            )));
        }
        Ok(h)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("header serializes") + "\n"
    }
}

fn encode(values: impl Iterator<Item = f32>, n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n * 4);
    for x in values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode(h: &RawHeader, data: &[u8]) -> Result<Vec<f32>> {
    let expected: usize = h.dims.iter().product();
    if data.len() != expected * 4 {
        return Err(VolumeError::LengthMismatch {
            expected,
            found: data.len() / 4,
        });
    }
    Ok(data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_raw(v: &Volume) -> (RawHeader, Vec<u8>) {
    (
        RawHeader::new(v.dims(), v.spacing(), RawKind::Intensity),
        encode(v.data().iter().copied(), v.len()),
    )
}

pub fn save_raw_labels(l: &LabelVolume) -> (RawHeader, Vec<u8>) {
    let mut h = RawHeader::new(l.dims(), l.spacing(), RawKind::Labels);
    h.class_count = Some(l.class_count());
    (h, encode(l.labels().iter().map(|&x| x as f32), l.labels().len()))
}

/// Decodes an intensity volume. Label files load as intensities too.
pub fn load_raw(header: &str, data: &[u8]) -> Result<Volume> {
    let h = RawHeader::parse(header)?;
    Volume::new(h.dims, h.spacing, decode(&h, data)?)
}

pub fn load_raw_labels(header: &str, data: &[u8]) -> Result<LabelVolume> {
    let h = RawHeader::parse(header)?;
    let c = match (h.kind, h.class_count) {
        (RawKind::Labels, Some(c)) => c,
        _ => return Err(VolumeError::BadHeader("not a label file".into())),
    };
    let values = decode(&h, data)?;
    let mut labels = Vec::with_capacity(values.len());
    for x in values {
        if !(x.fract() == 0.0 && (0.0..256.0).contains(&x)) {
            return Err(VolumeError::BadHeader(format!("non-integral label value {x}")));
        }
        labels.push(x as u8);
    }
    LabelVolume::new(h.dims, h.spacing, labels, c)
}

fn payload_path(header_path: &Path, h: &RawHeader) -> PathBuf {
    match &h.data_file {
        Some(f) => header_path.with_file_name(f),
        None => header_path.with_extension("raw"),
    }
}

fn write_pair(header_path: &Path, mut h: RawHeader, bytes: &[u8]) -> Result<()> {
    let data_path = header_path.with_extension("raw");
    h.data_file = data_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned());
    fs::write(header_path, h.to_text())?;
    fs::write(data_path, bytes)?;
    Ok(())
}

/// Writes `<stem>.json` and its payload `<stem>.raw`.
pub fn save_raw_file(header_path: &Path, v: &Volume) -> Result<()> {
    let (h, bytes) = save_raw(v);
    write_pair(header_path, h, &bytes)
}

pub fn save_raw_labels_file(header_path: &Path, l: &LabelVolume) -> Result<()> {
    let (h, bytes) = save_raw_labels(l);
    write_pair(header_path, h, &bytes)
}

fn read_pair(header_path: &Path) -> Result<(String, Vec<u8>)> {
    let text = fs::read_to_string(header_path)?;
    let h = RawHeader::parse(&text)?;
    let bytes = fs::read(payload_path(header_path, &h))?;
    Ok((text, bytes))
}

pub fn load_raw_file(header_path: &Path) -> Result<Volume> {
    let (text, bytes) = read_pair(header_path)?;
    load_raw(&text, &bytes)
}

pub fn load_raw_labels_file(header_path: &Path) -> Result<LabelVolume> {
    let (text, bytes) = read_pair(header_path)?;
    load_raw_labels(&text, &bytes)
}
