//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SMCKPT\0\0"
//! version    u32
//! count      u32
//! count x {
//!     name_len u32, name (UTF-8), rows u32, cols u32, rows*cols f64
//! }
//! ```

use std::io::{Read, Write};

use super::params::{ParamView, Parameters};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"SMCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[ParamView<'_>]) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, tensors.len() as u32)?;
    for t in tensors {
        write_u32(w, t.name.len() as u32)?;
        w.write_all(t.name.as_bytes())?;
        write_u32(w, t.shape.0 as u32)?;
        write_u32(w, t.shape.1 as u32)?;
        let mut buf = Vec::with_capacity(t.data.len() * 8);
        for v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(NamedTensor {
            name,
            shape: (rows, cols),
            data,
        });
    }
    Ok(out)
}

/// Copies tensors named `prefix + view name` into `target`, checking shapes.
pub fn load_into<P: Parameters>(target: &mut P, tensors: &[NamedTensor], prefix: &str) -> Result<(), NnError> {
    for view in target.params_mut() {
        let full = format!("{prefix}{}", view.name);
        let t = tensors
            .iter()
            .find(|t| t.name == full)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {full}")))?;
        if t.shape != view.shape {
            return Err(NnError::Shape(format!(
                "tensor {full}: checkpoint {:?}, model {:?}",
                t.shape, view.shape
            )));
        }
        view.data.copy_from_slice(&t.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::init(4, 3, Activation::Relu, &mut rng);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &layer.params()).unwrap();
        let tensors = read_tensors(&mut buf.as_slice()).unwrap();
        let mut back = DenseLayer::zeros(4, 3, Activation::Relu);
        load_into(&mut back, &tensors, "").unwrap();
        assert_eq!(back, layer);
    }

    #[test]
    fn shape_mismatch_detected() {
        let layer = DenseLayer::zeros(4, 3, Activation::Relu);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &layer.params()).unwrap();
        let tensors = read_tensors(&mut buf.as_slice()).unwrap();
        let mut other = DenseLayer::zeros(5, 3, Activation::Relu);
        assert!(matches!(load_into(&mut other, &tensors, ""), Err(NnError::Shape(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTACKPT\x01\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(read_tensors(&mut buf.as_slice()), Err(NnError::Checkpoint(_))));
    }
}
