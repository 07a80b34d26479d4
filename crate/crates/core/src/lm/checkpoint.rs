//! Binary parameter checkpoint.
//!
//! All integers and floats are little-endian. Field order:
//!
//! ```text
//! magic          4 bytes  "BALM"
//! version        u32      1
//! family         u8       0 = transformer, 1 = ssm
//! n_layers       u32
//! hidden_size    u32
//! n_heads        u32
//! vocab_size     u32
//! max_positions  u32
//! seed           u64
//! tensor_count   u32
//! per tensor, in canonical order:
//!   name_len     u32
//!   name         name_len bytes, UTF-8
//!   rank         u32
//!   dims         rank x u64
//!   values       prod(dims) x f64
//! ```

use std::io::{Read, Write};

use super::config::{Family, ModelConfig};
use super::params::ModelParams;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BALM";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams, out: &mut impl Write) -> Result<()> {
    let c = &params.config;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[match c.family {
        Family::Transformer => 0u8,
        Family::Ssm => 1u8,
    }])?;
    for v in [c.n_layers, c.hidden_size, c.n_heads, c.vocab_size, c.max_positions] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&c.seed.to_le_bytes())?;
    let named = params.weights.named();
    out.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint and checks names and shapes against the layout implied
/// by its own config.
pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut fam = [0u8; 1];
    r.read_exact(&mut fam)?;
    let family = match fam[0] {
        0 => Family::Transformer,
        1 => Family::Ssm,
        other => return Err(Error::Format(format!("unknown model family tag {other}"))),
    };
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = read_u32(r)? as usize;
    }
    let config = ModelConfig {
        family,
        n_layers: dims[0],
        hidden_size: dims[1],
        n_heads: dims[2],
        vocab_size: dims[3],
        max_positions: dims[4],
        seed: read_u64(r)?,
    };
    let template = ModelParams::init(&config)?;
    let expected = template.weights.named();
    let count = read_u32(r)? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want) in expected {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Format(format!("expected tensor {want_name}, found {name}")));
        }
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != want.shape() {
            return Err(Error::Format(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                want.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, values)?);
    }
    let weights = template.weights.from_flat(tensors)?;
    Ok(ModelParams { config, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for family in [Family::Transformer, Family::Ssm] {
            let cfg = ModelConfig {
                family,
                n_layers: 3,
                hidden_size: 4,
                n_heads: 2,
                vocab_size: 9,
                max_positions: 5,
                seed: 11,
            };
            let p = ModelParams::init(&cfg).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let back = read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_corruption() {
        let p = ModelParams::init(&ModelConfig {
            n_layers: 3,
            hidden_size: 4,
            n_heads: 1,
            vocab_size: 5,
            max_positions: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint(&mut &truncated[..]).is_err());
    }
}
