//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSSN" | u32 version | u32 len, NetConfig JSON | u32 param count
//! per param: u32 len, UTF-8 name | u32 rank | u32 dims[rank] | f32 values
//! ```

use std::path::Path;

use thiserror::Error;

use crate::autograd::Param;
use crate::error::Result;
use crate::net::{NetConfig, Network};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"DSSN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("parameter {name}: checkpoint has dims {found:?}, network expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parameter {index}: checkpoint has {found:?}, network expects {expected:?}")]
    NameMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("checkpoint has {found} parameters, network expects {expected}")]
    ParamCount { expected: usize, found: usize },

    #[error("checkpoint config is invalid: {0}")]
    Config(String),

    #[error("{0} trailing bytes after the last parameter")]
    TrailingBytes(usize),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &[u8]) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s);
}

/// Everything up to and including the parameter count.
pub fn encode_header(config: &NetConfig, param_count: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(config).expect("NetConfig serializes");
    put_str(&mut out, &json);
    put_u32(&mut out, param_count as u32);
    out
}

/// Serializes a network; values are stored as 32-bit floats.
pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let params = net.params();
    let mut out = encode_header(net.config(), params.len());
    for p in params.iter() {
        put_str(&mut out, p.name.as_bytes());
        let dims = p.dims();
        put_u32(&mut out, dims.len() as u32);
        for d in dims {
            put_u32(&mut out, d as u32);
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }
}

/// Rebuilds the network described by the embedded config and installs the
/// stored values. Nothing is returned unless every parameter matches.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Network<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let json = r.string("config")?;
    let config: NetConfig =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut net =
        Network::<T>::build(&config).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let count = r.u32("parameter count")? as usize;
    if count != net.params().len() {
        return Err(CheckpointError::ParamCount {
            expected: net.params().len(),
            found: count,
        });
    }
    let mut values = Vec::with_capacity(count);
    for (index, p) in net.params().iter().enumerate() {
        let name = String::from_utf8_lossy(r.string("parameter name")?).into_owned();
        if name != p.name {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: p.name.clone(),
                found: name,
            });
        }
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank.min(8))
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let expected = p.dims();
        if rank != expected.len() || dims != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: dims,
            });
        }
        let len = p.value.len();
        let raw = r.take(len * 4, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect::<Vec<_>>();
        values.push(data);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    for (p, data) in net.params_mut().iter_mut().zip(values) {
        let shape = p.value.shape();
        *p = Param::new(
            p.name.clone(),
            p.kind,
            Tensor::from_vec(shape, data).expect("length checked"),
        );
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}
