//! Binary checkpoints: parameters plus optimiser moments.
//!
//! Layout: `b"VMRC"`, u64 LE header length, JSON header, then every tensor
//! listed in the header as row-major f64 LE, in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{AdamState, Params};
use crate::training::{TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"VMRC";

/// Version string embedded in every artifact.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub code_version: String,
    /// Fingerprint of the architecture configuration.
    pub model_fingerprint: String,
    /// Fingerprint of architecture plus training configuration.
    pub run_fingerprint: String,
    pub seed: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub adam_step: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub tensors: Vec<TensorInfo>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainState,
}

/// Fingerprint of everything that determines a training trajectory.
pub fn run_fingerprint(model: &ModelConfig, train: &TrainConfig, alpha: f64) -> String {
    let json = serde_json::json!({ "model": model, "train": train, "alpha": alpha }).to_string();
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

pub fn save(path: &Path, state: &TrainState, model_fingerprint: &str, run_fingerprint: &str, seed: u64) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<&Array2<f64>> = Vec::new();
    for (id, name, value) in state.params.iter() {
        let shape = [value.nrows(), value.ncols()];
        tensors.push(TensorInfo { name: name.to_owned(), shape });
        tensors.push(TensorInfo { name: format!("{name}#m"), shape });
        tensors.push(TensorInfo { name: format!("{name}#v"), shape });
        data.extend([value, &state.adam.m[id.index()], &state.adam.v[id.index()]]);
    }
    let header = CheckpointHeader {
        code_version: CODE_VERSION.to_owned(),
        model_fingerprint: model_fingerprint.to_owned(),
        run_fingerprint: run_fingerprint.to_owned(),
        seed,
        epoch: state.epoch,
        adam_step: state.adam.step,
        best_metric: state.best_metric,
        best_epoch: state.best_epoch,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * data.iter().map(|a| a.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in data {
        for &x in a.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(read_raw(path)?.0)
}

fn read_raw(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 12 + len {
        return Err(Error::Checkpoint(format!("{}: truncated header", path.display())));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + len])?;
    Ok((header, bytes.split_off(12 + len)))
}

/// Loads a checkpoint into the layout of `template` (a freshly built model's
/// parameters). Refuses on a fingerprint or layout mismatch.
pub fn load(path: &Path, template: &Params, expected_model_fingerprint: &str) -> Result<Checkpoint> {
    let (header, data) = read_raw(path)?;
    if header.model_fingerprint != expected_model_fingerprint {
        return Err(Error::Fingerprint { expected: expected_model_fingerprint.to_owned(), found: header.model_fingerprint });
    }
    let needed: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 8).sum();
    if data.len() != needed {
        return Err(Error::Checkpoint(format!("{}: expected {needed} data bytes, found {}", path.display(), data.len())));
    }
    if header.tensors.len() != 3 * template.len() {
        return Err(Error::Checkpoint(format!("{}: tensor count does not match the model", path.display())));
    }
    let mut params = template.clone();
    let mut adam = AdamState::new(template);
    adam.step = header.adam_step;
    let mut offset = 0;
    for (k, info) in header.tensors.iter().enumerate() {
        let (base, slot) = match info.name.rsplit_once('#') {
            Some((b, "m")) => (b, 1),
            Some((b, "v")) => (b, 2),
            _ => (info.name.as_str(), 0),
        };
        let id = template
            .id(base)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", info.name)))?;
        if k / 3 != id.index() || k % 3 != slot {
            return Err(Error::Checkpoint(format!("tensor {} out of order", info.name)));
        }
        let n = info.shape[0] * info.shape[1];
        let values: Vec<f64> = data[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += 8 * n;
        let array = Array2::from_shape_vec((info.shape[0], info.shape[1]), values).map_err(|e| Error::Shape(e.to_string()))?;
        if array.dim() != template.get(id).dim() {
            return Err(Error::Checkpoint(format!("tensor {} has shape {:?}, model expects {:?}", info.name, array.dim(), template.get(id).dim())));
        }
        match slot {
            0 => *params.get_mut(id) = array,
            1 => adam.m[id.index()] = array,
            _ => adam.v[id.index()] = array,
        }
    }
    let state = TrainState { params, adam, epoch: header.epoch, best_metric: header.best_metric, best_epoch: header.best_epoch };
    Ok(Checkpoint { header, state })
}
