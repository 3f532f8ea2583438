//! Checkpoint files: one newline-terminated JSON header line followed by a
//! raw little-endian f32 blob.
//!
//! The header lists every stored tensor as `{name, shape, offset, len}`
//! with offset/len counted in f32 elements from the start of the blob,
//! plus the network configuration and the iteration the checkpoint was
//! taken at. Momentum tensors are stored alongside values under
//! `<name>.m`. Parameters are kept f32-representable during training, so
//! a save/load round trip is lossless.

use crate::net::{NetConfig, ParamEntry, ParamStore};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint blob truncated: need {need} f32 values, found {found}")]
    Truncated { need: usize, found: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    entries: Vec<HeaderEntry>,
    config: NetConfig,
    iter: usize,
}

pub fn save(
    path: &Path,
    params: &ParamStore,
    cfg: &NetConfig,
    iter: usize,
) -> Result<(), CheckpointError> {
    let mut entries = Vec::new();
    let mut blob: Vec<f32> = Vec::with_capacity(2 * params.total_len());
    for e in &params.entries {
        for (name, tensor) in [(e.name.clone(), &e.values), (format!("{}.m", e.name), &e.momentum)]
        {
            entries.push(HeaderEntry {
                name,
                shape: tensor.shape().to_vec(),
                offset: blob.len(),
                len: tensor.len(),
            });
            blob.extend(tensor.data().iter().map(|&v| v as f32));
        }
    }
    let header = Header {
        entries,
        config: *cfg,
        iter,
    };
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut file, &header)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    file.write_all(b"\n")?;
    for v in &blob {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, NetConfig, usize), CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let newline = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Header("missing header terminator".into()))?;
    let header: Header = serde_json::from_slice(&raw[..newline])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let blob_bytes = &raw[newline + 1..];
    let found = blob_bytes.len() / 4;
    let read_tensor = |he: &HeaderEntry| -> Result<Tensor, CheckpointError> {
        if he.shape.iter().product::<usize>() != he.len {
            return Err(CheckpointError::Header(format!(
                "entry {} shape/len mismatch",
                he.name
            )));
        }
        if he.offset + he.len > found {
            return Err(CheckpointError::Truncated {
                need: he.offset + he.len,
                found,
            });
        }
        let mut data = Vec::with_capacity(he.len);
        for i in 0..he.len {
            let at = (he.offset + i) * 4;
            let v = f32::from_le_bytes([
                blob_bytes[at],
                blob_bytes[at + 1],
                blob_bytes[at + 2],
                blob_bytes[at + 3],
            ]);
            data.push(v as f64);
        }
        Ok(Tensor::from_vec(&he.shape, data))
    };

    let mut entries = Vec::new();
    for he in &header.entries {
        if he.name.ends_with(".m") {
            continue;
        }
        let values = read_tensor(he)?;
        let mname = format!("{}.m", he.name);
        let mentry = header
            .entries
            .iter()
            .find(|e| e.name == mname)
            .ok_or_else(|| CheckpointError::Header(format!("missing momentum for {}", he.name)))?;
        let momentum = read_tensor(mentry)?;
        entries.push(ParamEntry {
            name: he.name.clone(),
            values,
            momentum,
        });
    }
    Ok((
        ParamStore {
            entries,
            f32_storage: true,
        },
        header.config,
        header.iter,
    ))
}
