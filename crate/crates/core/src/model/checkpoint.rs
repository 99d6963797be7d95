//! Binary checkpoint: magic `GFUS`, u32 version, u32 header length, JSON
//! header, little-endian payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{ParamSet, Real, Tensor};

const MAGIC: &[u8; 4] = b"GFUS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    vocab_fingerprint: String,
    n_words: usize,
    dtype: String,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn all_tensors<T: Real>(p: &ModelParams<T>) -> Vec<(String, &Tensor<T>)> {
    let mut v: Vec<(String, &Tensor<T>)> = (0..p.tensor_count())
        .map(|i| (p.tensor_name(i), p.tensor(i)))
        .collect();
    v.push(("bn_running_mean".into(), &p.bn.running_mean));
    v.push(("bn_running_var".into(), &p.bn.running_var));
    v
}

pub fn encode<T: Real>(p: &ModelParams<T>) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in all_tensors(p) {
        let offset = payload.len();
        for &x in t.data() {
            x.write_le(&mut payload);
        }
        entries.push(Entry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
    }
    let header = Header {
        arch: p.arch.clone(),
        vocab_fingerprint: p.vocab_fingerprint.clone(),
        n_words: p.word_emb.rows(),
        dtype: T::DTYPE.into(),
        tensors: entries,
    };
    let hjson = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + hjson.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn read_values<T: Real, S: Real>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(S::BYTES)
        .map(|c| T::of(S::read_le(c).f64()))
        .collect()
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[12..hend]).map_err(|e| Error::Format(format!("header: {e}")))?;
    let payload = &bytes[hend..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        d => return Err(Error::Format(format!("unknown dtype {d}"))),
    };
    let mut p = ModelParams::<T>::zeroed(&header.arch, header.n_words, &header.vocab_fingerprint)?;
    let names: Vec<String> = all_tensors(&p).into_iter().map(|(n, _)| n).collect();
    if names.len() != header.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, architecture needs {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut decoded = Vec::with_capacity(names.len());
    for (e, expected) in header.tensors.iter().zip(&names) {
        if &e.name != expected {
            return Err(Error::Format(format!("expected tensor {expected}, found {}", e.name)));
        }
        let end = e
            .len
            .checked_mul(width)
            .and_then(|n| n.checked_add(e.offset))
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::Format(format!("tensor {} exceeds payload", e.name)))?;
        let raw = &payload[e.offset..end];
        let data: Vec<T> = if width == 4 {
            read_values::<T, f32>(raw)
        } else {
            read_values::<T, f64>(raw)
        };
        decoded.push(Tensor::new(e.shape.clone(), data)?);
    }
    let check = |dst: &Tensor<T>, t: &Tensor<T>, name: &str| {
        if dst.shape() == t.shape() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "tensor {name} has shape {:?}, architecture needs {:?}",
                t.shape(),
                dst.shape()
            )))
        }
    };
    let running_var = decoded.pop().expect("two running tensors");
    let running_mean = decoded.pop().expect("two running tensors");
    for ((dst, t), name) in p.tensors_mut().into_iter().zip(decoded).zip(&names) {
        check(dst, &t, name)?;
        *dst = t;
    }
    check(&p.bn.running_mean, &running_mean, "bn_running_mean")?;
    check(&p.bn.running_var, &running_var, "bn_running_var")?;
    p.bn.running_mean = running_mean;
    p.bn.running_var = running_var;
    Ok(p)
}

pub fn save_checkpoint<T: Real>(p: &ModelParams<T>, path: &Path) -> Result<()> {
    io::atomic_write(path, &encode(p)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
