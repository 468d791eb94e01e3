//! Dilated causal 1-D ResNet-18 classifier with metadata fusion.

mod config;
pub mod conv;
pub mod layers;
mod network;
mod probability;
mod scalar;
mod tensor;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use ndarray_npy::{NpzReader, NpzWriter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{dilation_cycle, ModelConfig, STAGE_CONVS};
pub use conv::{causal_conv, receptive_field, CausalConv1d, CausalConvStack, ConvGeometry};
pub use network::{Network, ParamMut, ResidualBlock, StateMut, StateRef, Tape};
pub(crate) use probability::argmax;
pub use probability::{ProbabilityMatrix, ROW_SUM_TOLERANCE};
pub use scalar::Scalar;
pub use tensor::Tensor3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

/// Which sequence a model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Direction,
    Time,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direction" => Ok(Variant::Direction),
            "time" => Ok(Variant::Time),
            other => Err(format!("unknown variant {other:?} (direction|time)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Direction => "direction",
            Variant::Time => "time",
        })
    }
}

/// JSON header stored next to a checkpoint's weight archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub variant: Variant,
    pub val_accuracy: f64,
    /// 1-based epoch the weights come from; 0 for untrained weights.
    pub epoch: usize,
    /// Class names in output order.
    pub classes: Vec<String>,
}

/// Path of the JSON sidecar that accompanies an archive at `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn ckpt_err(path: &Path, reason: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Writes the weight archive at `path` and the header at `<path>.json`.
pub fn save_checkpoint(path: &Path, network: &Network<f32>, header: &CheckpointHeader) -> Result<(), ModelError> {
    if header.config != network.config {
        return Err(ckpt_err(path, "header config differs from the network"));
    }
    let file = File::create(path).map_err(|e| ckpt_err(path, e))?;
    let mut npz = NpzWriter::new(BufWriter::new(file));
    for s in network.state() {
        let arr = ArrayD::from_shape_vec(s.shape.clone(), s.data.to_vec()).map_err(|e| ckpt_err(path, e))?;
        npz.add_array(s.name.as_str(), &arr).map_err(|e| ckpt_err(path, e))?;
    }
    npz.finish().map_err(|e| ckpt_err(path, e))?;
    let json = serde_json::to_string_pretty(header).map_err(|e| ckpt_err(path, e))?;
    std::fs::write(sidecar_path(path), json).map_err(|e| ckpt_err(path, e))?;
    Ok(())
}

pub fn load_checkpoint_header(path: &Path) -> Result<CheckpointHeader, ModelError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| ckpt_err(&side, e))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, CheckpointHeader), ModelError> {
    let header = load_checkpoint_header(path)?;
    let mut network = Network::<f32>::new(header.config.clone(), 0)?;
    let file = File::open(path).map_err(|e| ckpt_err(path, e))?;
    let mut npz = NpzReader::new(file).map_err(|e| ckpt_err(path, e))?;
    for s in network.state_mut() {
        let arr: ArrayD<f32> = npz
            .by_name(&s.name)
            .map_err(|e| ckpt_err(path, format!("{}: {e}", s.name)))?;
        if arr.shape() != s.shape.as_slice() {
            return Err(ckpt_err(
                path,
                format!("{} has shape {:?}, expected {:?}", s.name, arr.shape(), s.shape),
            ));
        }
        for (dst, src) in s.data.iter_mut().zip(arr.iter()) {
            *dst = *src;
        }
    }
    if !network.is_finite() {
        return Err(ckpt_err(path, "non-finite weights"));
    }
    Ok((network, header))
}

/// Inference over many rows in fixed-size batches.
pub fn predict_rows(
    network: &Network<f32>,
    seq: &[f32],
    meta: &[f32],
    rows: usize,
    batch_size: usize,
) -> Result<ProbabilityMatrix, ModelError> {
    let (l, m) = (network.config.seq_len, network.config.metadata_features);
    if seq.len() != rows * l || meta.len() != rows * m {
        return Err(ModelError::Shape(format!("{rows} rows do not match the input buffers")));
    }
    let mut data = Vec::with_capacity(rows * network.n_classes());
    let mut start = 0;
    while start < rows {
        let n = batch_size.max(1).min(rows - start);
        let p = network.forward(&seq[start * l..(start + n) * l], &meta[start * m..(start + n) * m], n)?;
        data.extend_from_slice(p.as_slice());
        start += n;
    }
    ProbabilityMatrix::new(network.n_classes(), data).map_err(ModelError::NonFinite)
}
