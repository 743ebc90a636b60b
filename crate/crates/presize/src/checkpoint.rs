//! Binary container shared by model, training and embedding-cache files:
//! 8-byte magic, little-endian `u32` version, `u64` header length, a JSON
//! header, then tensors as little-endian `f32` in header order.

use std::path::Path;

use presize_nn::{Scalar, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    header: H,
    tensors: Vec<TensorEntry>,
}

pub fn encode<H: Serialize, T: Scalar>(magic: &[u8; 8], header: &H, tensors: &[(String, &Tensor<T>)]) -> Result<Vec<u8>> {
    let env = Envelope {
        header,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&env)?;
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * total);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub struct Decoded<H> {
    pub header: H,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<Decoded<H>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(bad("unrecognized file type"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let env: Envelope<H> = serde_json::from_slice(&body[..hlen])?;
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(env.tensors.len());
    for e in env.tensors {
        let n: usize = e.shape.iter().product();
        if data.len() < 4 * n {
            return Err(Error::Checkpoint(format!("truncated tensor {}", e.name)));
        }
        let vals = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data = &data[4 * n..];
        tensors.push((e.name, Tensor::new(e.shape, vals)?));
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Decoded {
        header: env.header,
        tensors,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Copies named tensors into a parameter structure, requiring the exact
/// same names, order and shapes.
pub fn assign<T: Scalar, P: presize_nn::Parameters<T>>(target: &mut P, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut i = 0;
    let mut err = None;
    target.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match tensors.get(i) {
            Some((n, src)) if n == name && src.shape() == t.shape() => {
                for (d, &s) in t.data_mut().iter_mut().zip(src.data()) {
                    *d = T::from_f64_lossy(s as f64);
                }
            }
            Some((n, src)) => {
                err = Some(Error::Checkpoint(format!(
                    "expected tensor {name} {:?}, found {n} {:?}",
                    t.shape(),
                    src.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != tensors.len() {
        return Err(Error::Checkpoint(format!("{} unexpected extra tensors", tensors.len() - i)));
    }
    Ok(())
}
