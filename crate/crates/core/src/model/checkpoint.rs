//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SPSG" | version u32
//! class_count, grid_proj_width, model_width, heads, n_residual_blocks,
//!   n_encoder_layers, variant: u32 each | seed u64
//! tensor count u32
//! per tensor: name length u32, UTF-8 name, rank u32, dims u32 × rank,
//!   f32 payload
//! ```

use super::{ModelConfig, ModelError, ResidualTransformer, Variant};
use std::collections::HashSet;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SPSG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid config record: {0}")]
    BadConfig(String),
    #[error("checkpoint has {found} tensors, config implies {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("tensor {0:?} appears twice")]
    DuplicateTensor(String),
    #[error("tensor {name:?} has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Self::Truncated
        } else {
            Self::Io(e.to_string())
        }
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl ResidualTransformer<f32> {
    pub fn save(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let c = self.config();
        w.write_all(MAGIC)?;
        put_u32(&mut w, FORMAT_VERSION as usize)?;
        for v in [
            c.class_count,
            c.grid_proj_width,
            c.model_width,
            c.heads,
            c.n_residual_blocks,
            c.n_encoder_layers,
            c.variant.code() as usize,
        ] {
            put_u32(&mut w, v)?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        let params = self.params();
        put_u32(&mut w, params.len())?;
        let mut buf = Vec::new();
        for p in params {
            put_u32(&mut w, p.name.len())?;
            w.write_all(p.name.as_bytes())?;
            put_u32(&mut w, p.shape().len())?;
            for &d in p.shape() {
                put_u32(&mut w, d)?;
            }
            buf.clear();
            buf.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = get_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut f = [0usize; 7];
        for v in &mut f {
            *v = get_u32(&mut r)? as usize;
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let variant = Variant::from_code(f[6] as u32)
            .ok_or_else(|| CheckpointError::BadConfig(format!("variant code {}", f[6])))?;
        let config = ModelConfig {
            class_count: f[0],
            grid_proj_width: f[1],
            model_width: f[2],
            heads: f[3],
            n_residual_blocks: f[4],
            n_encoder_layers: f[5],
            variant,
            seed: u64::from_le_bytes(seed),
        };
        let mut model = ResidualTransformer::new(config).map_err(|e| match e {
            ModelError::BadConfig(m) => CheckpointError::BadConfig(m),
            other => CheckpointError::BadConfig(other.to_string()),
        })?;
        let count = get_u32(&mut r)? as usize;
        let expected = model.params().len();
        if count != expected {
            return Err(CheckpointError::TensorCount { expected, found: count });
        }
        let mut seen = HashSet::new();
        let mut params = model.params_mut();
        for _ in 0..count {
            let len = get_u32(&mut r)? as usize;
            let mut name = vec![0u8; len.min(1 << 16)];
            if len > name.len() {
                return Err(CheckpointError::BadConfig(format!("tensor name length {len}")));
            }
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::BadConfig("tensor name is not UTF-8".into()))?;
            let p = params
                .iter_mut()
                .find(|p| p.name == name)
                .ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateTensor(name));
            }
            let rank = get_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: p.shape().to_vec(),
                    found: vec![0; rank.min(9)],
                });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(get_u32(&mut r)? as usize);
            }
            if dims != p.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: p.shape().to_vec(),
                    found: dims,
                });
            }
            let mut bytes = vec![0u8; p.len() * 4];
            r.read_exact(&mut bytes)?;
            for (v, b) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        drop(params);
        Ok(model)
    }

    pub fn save_file(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        let f = std::fs::File::create(path)?;
        self.save(io::BufWriter::new(f))
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        let f = std::fs::File::open(path)?;
        Self::load(io::BufReader::new(f))
    }
}
