//! Single-file NIfTI-1 (`.nii`) ingestion.
//!
//! Only what the segmentation pipeline consumes is decoded: the first three
//! dims, the first three pixdims, the voxel payload (uint8, int16 or float32)
//! and the `scl_slope`/`scl_inter` rescale. Orientation (qform/sform) is ignored.
//! Gzip-wrapped files must be decompressed by the caller.

use super::{LabelVolume, Volume};
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("stream holds {0} bytes, shorter than the 348-byte header")]
    ShortHeader(usize),
    #[error("sizeof_hdr is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("bad magic {0:?}, expected \"n+1\\0\"")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid dim field {0:?}")]
    BadDim([i16; 8]),
    #[error("non-positive or non-finite pixdim {0:?}")]
    NonPositivePixdim([f32; 3]),
    #[error("invalid vox_offset {0}")]
    BadVoxOffset(f32),
    #[error("data section truncated: need {expected} bytes after vox_offset, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn from_code(code: i16) -> Result<Self, NiftiError> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            16 => Ok(Self::Float32),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Float32 => 16,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Float32 => 4,
        }
    }
}

/// A decoded NIfTI-1 image.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub volume: Volume,
    pub datatype: NiftiDatatype,
}

impl NiftiImage {
    /// Interprets the voxel values as a label map when every value is a
    /// non-negative integer below 256. `class_count` defaults to `max + 1`
    /// (at least 2).
    pub fn as_labels(&self, class_count: Option<usize>) -> Option<LabelVolume> {
        let data = self.volume.data();
        if data
            .iter()
            .any(|&x| !(x.fract() == 0.0 && (0.0..256.0).contains(&x)))
        {
            return None;
        }
        let labels: Vec<u8> = data.iter().map(|&x| x as u8).collect();
        let max = labels.iter().copied().max().unwrap_or(0) as usize;
        let c = class_count.unwrap_or((max + 1).max(2));
        LabelVolume::new(self.volume.dims(), self.volume.spacing(), labels, c).ok()
    }
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn raw<const N: usize>(&self, at: usize) -> [u8; N] {
        self.bytes[at..at + N].try_into().unwrap()
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.raw(at)),
            Endian::Big => i16::from_be_bytes(self.raw(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.raw(at)),
            Endian::Big => f32::from_be_bytes(self.raw(at)),
        }
    }
}

/// Decodes a single-file NIfTI-1 stream. Byte order is detected from
/// `sizeof_hdr`. Extra dimensions beyond the third are ignored and only the
/// first 3-D volume is read.
pub fn load_nifti(bytes: &[u8]) -> Result<NiftiImage, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::ShortHeader(bytes.len()));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let endian = if le == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(NiftiError::BadHeaderSize(le));
    };
    let h = Fields { bytes, endian };

    let magic: [u8; 4] = h.raw(344);
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }

    let dim: [i16; 8] = std::array::from_fn(|i| h.i16(40 + 2 * i));
    if !(3..=7).contains(&dim[0]) || dim[1..4].iter().any(|&d| d < 1) {
        return Err(NiftiError::BadDim(dim));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = NiftiDatatype::from_code(h.i16(70))?;

    let pix = [h.f32(80), h.f32(84), h.f32(88)];
    if pix.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(NiftiError::NonPositivePixdim(pix));
    }

    let vox_offset = h.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(NiftiError::BadVoxOffset(vox_offset));
    }
    let offset = vox_offset as usize;
    let n: usize = dims.iter().product();
    let expected = n * datatype.bytes();
    let found = bytes.len().saturating_sub(offset);
    if found < expected {
        return Err(NiftiError::Truncated { expected, found });
    }
    let payload = &bytes[offset..offset + expected];

    let slope = h.f32(112);
    let inter = h.f32(116);
    let rescale = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);

    let p = Fields {
        bytes: payload,
        endian,
    };
    let mut data: Vec<f32> = match datatype {
        NiftiDatatype::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => (0..n).map(|i| p.i16(2 * i) as f32).collect(),
        NiftiDatatype::Float32 => (0..n).map(|i| p.f32(4 * i)).collect(),
    };
    if rescale {
        for x in &mut data {
            *x = slope * *x + inter;
        }
    }

    let spacing = pix.map(|p| p as f64);
    let volume = Volume::new(dims, spacing, data).map_err(|_| NiftiError::BadDim(dim))?;
    Ok(NiftiImage { volume, datatype })
}

/// Encodes a volume as a little-endian float32 `.nii` stream with the
/// payload at offset 352.
pub fn write_nifti_f32(v: &Volume) -> Vec<u8> {
    let mut out = vec![0u8; 352];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let d = v.dims();
    let dim: [i16; 8] = [3, d[0] as i16, d[1] as i16, d[2] as i16, 1, 1, 1, 1];
    for (i, x) in dim.iter().enumerate() {
        out[40 + 2 * i..42 + 2 * i].copy_from_slice(&x.to_le_bytes());
    }
    out[70..72].copy_from_slice(&NiftiDatatype::Float32.code().to_le_bytes());
    out[72..74].copy_from_slice(&32i16.to_le_bytes());
    let s = v.spacing();
    let pixdim = [1.0f32, s[0] as f32, s[1] as f32, s[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, x) in pixdim.iter().enumerate() {
        out[76 + 4 * i..80 + 4 * i].copy_from_slice(&x.to_le_bytes());
    }
    out[108..112].copy_from_slice(&352f32.to_le_bytes());
    out[112..116].copy_from_slice(&1f32.to_le_bytes());
    out[344..348].copy_from_slice(MAGIC);
    out.reserve(v.len() * 4);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}
