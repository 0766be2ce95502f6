//! Versioned binary checkpoints of a [`QNetwork`].

use thiserror::Error;

use super::layers::ParamStore;
use super::qnet::{QNetConfig, QNetwork};
use super::tensor::{Float, Tensor};
use crate::codec::{self, CodecError, Reader, Writer};

const MAGIC: [u8; 4] = *b"TPQN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("checkpoint architecture is invalid: {0}")]
    Config(String),
    #[error("checkpoint parameters do not match the architecture: {0}")]
    Layout(String),
}

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: QNetwork,
    /// Gradient steps taken when saved.
    pub step: u64,
    /// Free-form JSON metadata (algorithm, scenario hash, ...).
    pub meta: String,
}

pub fn save_checkpoint(net: &QNetwork, step: u64, meta: &str) -> Vec<u8> {
    let mut w = Writer::new();
    w.str(&serde_json::to_string(net.config()).expect("config serializes"));
    w.u64(step);
    w.str(meta);
    let params = net.params();
    w.u32(params.len() as u32);
    for (name, t) in params.names().iter().zip(params.values()) {
        w.str(name);
        w.u32(t.rows() as u32);
        w.u32(t.cols() as u32);
        for &v in t.data() {
            w.f64(f64::from(v));
        }
    }
    codec::seal(MAGIC, CHECKPOINT_VERSION, &w.finish())
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let payload = codec::open(MAGIC, CHECKPOINT_VERSION, bytes)?;
    let mut r = Reader::new(payload);
    let config: QNetConfig = serde_json::from_str(&r.str()?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config.validate().map_err(CheckpointError::Config)?;
    let step = r.u64()?;
    let meta = r.str()?;
    let n = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = r.str()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= r.remaining() / 8)
            .ok_or_else(|| CheckpointError::Layout(format!("tensor `{name}` is larger than the file")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f64()? as Float);
        }
        store.add(name, Tensor::from_vec(rows, cols, data));
    }
    r.finish()?;
    let mut network = QNetwork::new(config, 0);
    let expected = network.params();
    if expected.names() != store.names() {
        return Err(CheckpointError::Layout("parameter names differ".into()));
    }
    for (name, (a, b)) in store.names().iter().zip(store.values().iter().zip(expected.values())) {
        if a.shape() != b.shape() {
            return Err(CheckpointError::Layout(format!("`{name}` has shape {:?}, expected {:?}", a.shape(), b.shape())));
        }
    }
    network.replace_params(store);
    Ok(Checkpoint { network, step, meta })
}
