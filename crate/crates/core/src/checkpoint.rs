//! Model checkpoint format.
//!
//! Layout: one JSON header line (format version, hyperparameters, vocabulary,
//! training seed, tensor names and shapes), then each parameter tensor as raw
//! little-endian `f64` bytes in declared order, then a little-endian CRC32 of
//! every preceding byte. Loading validates the checksum, the header, and
//! every shape before the model is handed back.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::captioner::{CaptionModel, Hyper, Params, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    hyper: Hyper,
    vocab: Vocabulary,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serialize a model (and the seed that trained it) to `path`.
pub fn save_model(model: &CaptionModel, seed: u64, path: &Path) -> Result<()> {
    let tensors = model.params.tensors();
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        hyper: model.hyper.clone(),
        vocab: model.vocab.clone(),
        seed,
        tensors: Params::NAMES
            .iter()
            .zip(&tensors)
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };

    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for t in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a model; returns the model and the training seed recorded with it.
pub fn load_model(path: &Path) -> Result<(CaptionModel, u64)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Format("checkpoint shorter than its checksum".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum(format!(
            "stored {stored:#010x}, computed {computed:#010x}"
        )));
    }

    let newline = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
    let header: Header = serde_json::from_slice(&body[..newline])?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {} unsupported",
            header.format_version
        )));
    }
    if header.tensors.len() != Params::NAMES.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, expected {}",
            header.tensors.len(),
            Params::NAMES.len()
        )));
    }
    for (entry, name) in header.tensors.iter().zip(Params::NAMES) {
        if entry.name != *name {
            return Err(Error::Format(format!(
                "tensor {:?} out of order, expected {name:?}",
                entry.name
            )));
        }
    }

    let payload = &body[newline + 1..];
    let expected_f64s: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected_f64s * 8 {
        return Err(Error::Format(format!(
            "payload of {} bytes, header implies {}",
            payload.len(),
            expected_f64s * 8
        )));
    }

    let mut offset = 0usize;
    let mut read_tensor = |shape: &[usize]| -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let data: Vec<f64> = payload[offset..offset + count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        offset += count * 8;
        Tensor::new(shape.to_vec(), data)
    };

    let shapes: Vec<Vec<usize>> = header.tensors.iter().map(|t| t.shape.clone()).collect();
    let mut it = shapes.iter();
    let mut next = || -> Result<Tensor> { read_tensor(it.next().expect("count checked")) };
    let params = Params {
        enc_embed_w: next()?,
        enc_embed_b: next()?,
        enc_fc1_w: next()?,
        enc_fc1_b: next()?,
        enc_fc2_w: next()?,
        enc_fc2_b: next()?,
        tok_embed: next()?,
        gru_wz: next()?,
        gru_uz: next()?,
        gru_bz: next()?,
        gru_wr: next()?,
        gru_ur: next()?,
        gru_br: next()?,
        gru_wc: next()?,
        gru_uc: next()?,
        gru_bc: next()?,
        att_w1: next()?,
        att_w2: next()?,
        att_v: next()?,
        out_w: next()?,
        out_b: next()?,
    };

    // from_parts re-validates hyper, vocab, and every shape
    let model = CaptionModel::from_parts(header.hyper, header.vocab, params)?;
    Ok((model, header.seed))
}
