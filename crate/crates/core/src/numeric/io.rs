//! Tensor files: `<name>.bin` holds little-endian `f64` values in row-major
//! order, `<name>.json` holds `{"name": ..., "shape": [...]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_tensor(shape: Vec<usize>, bytes: &[u8]) -> Result<Tensor> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::InvalidTensor(format!(
            "payload of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape, data)
}

fn file_stem(name: &str) -> String {
    name.replace(['/', '\\'], "_")
}

pub fn write_tensor(dir: &Path, name: &str, t: &Tensor) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_stem(name);
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, encode_tensor(t)).map_err(|e| Error::io(&bin, e))?;
    let sidecar = TensorSidecar {
        name: name.to_string(),
        shape: t.shape().to_vec(),
    };
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar)? + "\n";
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_tensor(dir: &Path, name: &str) -> Result<Tensor> {
    let stem = file_stem(name);
    let json: PathBuf = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: TensorSidecar = serde_json::from_str(&text)?;
    if sidecar.name != name {
        return Err(Error::InvalidTensor(format!(
            "{} names tensor `{}`, expected `{name}`",
            json.display(),
            sidecar.name
        )));
    }
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    decode_tensor(sidecar.shape, &bytes)
}
