//! Checkpoints: a flat named-tensor container with shapes, the run config
//! and its hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HecoError, Result};
use crate::io::config::RunConfig;
use crate::model::ParamStore;
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, config: &RunConfig) -> Result<()> {
    let tensors = store
        .iter()
        .map(|(_, entry)| TensorRecord {
            name: entry.name.clone(),
            rows: entry.value.rows(),
            cols: entry.value.cols(),
            data: entry.value.as_slice().to_vec(),
        })
        .collect();
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: config.config_hash(),
        config: config.clone(),
        tensors,
    };
    let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    fs::write(path, json).map_err(|e| HecoError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, RunConfig)> {
    let text = fs::read_to_string(path).map_err(|e| HecoError::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| HecoError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(HecoError::Data(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    if ckpt.config.config_hash() != ckpt.config_hash {
        return Err(HecoError::Data(
            "checkpoint config hash does not match its config".into(),
        ));
    }
    let mut store = ParamStore::new();
    for t in &ckpt.tensors {
        let value = Matrix::from_vec(t.rows, t.cols, t.data.clone())?;
        store.register(&t.name, value)?;
    }
    Ok((store, ckpt.config))
}
