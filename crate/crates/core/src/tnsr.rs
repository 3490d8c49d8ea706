//! `.tnsr` tensor dumps.
//!
//! A dump is a TOML header, an empty line, then the raw little-endian values:
//!
//! ```text
//! dtype = "f64"
//! shape = [2, 3]
//! byte_order = "little"
//!
//! <2*3*8 bytes>
//! ```
//!
//! `dtype` is `"f32"` or `"f64"`; `byte_order` is always `"little"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
    byte_order: String,
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let header = Header {
        dtype,
        shape: t.shape().to_vec(),
        byte_order: "little".into(),
    };
    let mut out = toml::to_string(&header)?.into_bytes();
    out.push(b'\n');
    match dtype {
        Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("tnsr: missing header terminator".into()))?;
    let text = std::str::from_utf8(&bytes[..split])
        .map_err(|e| Error::Format(format!("tnsr header is not UTF-8: {e}")))?;
    let header: Header = toml::from_str(text)?;
    if header.byte_order != "little" {
        return Err(Error::Format(format!("tnsr: unsupported byte order {:?}", header.byte_order)));
    }
    let body = &bytes[split + 2..];
    let numel: usize = header.shape.iter().product();
    let width = match header.dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if body.len() != numel * width {
        return Err(Error::Format(format!(
            "tnsr: expected {} payload bytes, found {}",
            numel * width,
            body.len()
        )));
    }
    let data = match header.dtype {
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
    };
    Ok((Tensor::new(header.shape, data)?, header.dtype))
}

pub fn write(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode(t, dtype)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(decode(&fs::read(path)?)?.0)
}
