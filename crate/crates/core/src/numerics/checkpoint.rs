//! Binary model checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ADVSELM1"
//! activation   u8       0 = relu
//! n_dims       u32
//! dims         n_dims x u32
//! per layer    weights (out x in, row-major) then biases, each as f64 bits
//! ```
//!
//! Values are written as raw IEEE-754 bits so a save/load round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::matrix::Matrix;
use super::model::{Activation, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVSELM1";

pub fn write_model<W: Write>(model: &Model, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u8(model.activation().tag())?;
    w.write_u32::<LittleEndian>(model.layer_dims().len() as u32)?;
    for &d in model.layer_dims() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for layer in model.layers() {
        for &v in layer.weights().as_slice() {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
        for &v in layer.biases() {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
    }
    Ok(())
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let truncated = |needed: usize| Error::Truncated {
        what: "checkpoint",
        needed,
        found: bytes.len(),
    };
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| truncated(8))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            detail: "bad magic".into(),
        });
    }
    let tag = r.read_u8().map_err(|_| truncated(9))?;
    let activation = Activation::from_tag(tag).ok_or_else(|| Error::Format {
        what: "checkpoint",
        detail: format!("unknown activation tag {tag}"),
    })?;
    let n = r.read_u32::<LittleEndian>().map_err(|_| truncated(13))? as usize;
    let header = 13 + 4 * n;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..n)
        .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
        .collect::<std::io::Result<_>>()
        .map_err(|_| truncated(header))?;
    let needed = dims
        .windows(2)
        .try_fold(0usize, |acc, w| w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc))
        .and_then(|params| params.checked_mul(8)?.checked_add(header))
        .ok_or_else(|| Error::Format {
            what: "checkpoint",
            detail: "layer sizes overflow".into(),
        })?;
    if bytes.len() != needed {
        return Err(if bytes.len() < needed {
            truncated(needed)
        } else {
            Error::Format {
                what: "checkpoint",
                detail: format!("{} trailing bytes", bytes.len() - needed),
            }
        });
    }
    let mut read_f64 = || f64::from_bits(r.read_u64::<LittleEndian>().expect("length checked"));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| read_f64()).collect();
        weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
        biases.push((0..fan_out).map(|_| read_f64()).collect());
    }
    let model = Model::from_parameters(weights, biases)?;
    debug_assert_eq!(model.activation(), activation);
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
