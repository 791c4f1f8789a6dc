//! Versioned model checkpoints.
//!
//! A checkpoint is a JSON document carrying a format tag and version, the
//! scalar type, the configuration with its SHA-256 hash, and every parameter
//! as `f64` values. Loading rejects any mismatch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SelectionModel};
use crate::numgrad::ParamStore;
use crate::search::checksum;
use crate::textproc::OovPolicy;
use crate::trainers::TrainConfig;
use crate::Scalar;

pub const FORMAT: &str = "wordsel-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Configuration a checkpoint was produced under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    /// Training stages applied, in order (`smt`, `rl`).
    pub stages: Vec<String>,
    pub train: Option<TrainConfig>,
    pub embeddings: Option<String>,
    pub oov: OovPolicy,
    pub stopwords: Vec<String>,
}

impl CheckpointConfig {
    pub fn new(model: ModelConfig) -> Self {
        CheckpointConfig {
            model,
            stages: Vec::new(),
            train: None,
            embeddings: None,
            oov: OovPolicy::default(),
            stopwords: Vec::new(),
        }
    }

    pub fn hash(&self) -> String {
        checksum(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    format_version: u32,
    scalar: String,
    config_hash: String,
    config: CheckpointConfig,
    params: Vec<ParamRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes `model` (whose config must match `config.model`).
pub fn to_bytes<F: Scalar>(model: &SelectionModel<F>, config: &CheckpointConfig) -> Result<Vec<u8>> {
    if *model.config() != config.model {
        return Err(bad("model configuration differs from checkpoint configuration"));
    }
    let mut params = Vec::new();
    for p in model.params() {
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}", p.name)));
        }
        params.push(ParamRecord {
            name: p.name.clone(),
            rows: p.rows,
            cols: p.cols,
            values: p.values.iter().map(|v| v.to_f64_lossless()).collect(),
        });
    }
    let doc = Document {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        scalar: F::NAME.into(),
        config_hash: config.hash(),
        config: config.clone(),
        params,
    };
    let mut out = serde_json::to_vec_pretty(&doc).map_err(|e| bad(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<(SelectionModel<F>, CheckpointConfig)> {
    let doc: Document = serde_json::from_slice(bytes).map_err(|e| bad(format!("unreadable checkpoint: {e}")))?;
    if doc.format != FORMAT {
        return Err(bad(format!("not a checkpoint (format '{}')", doc.format)));
    }
    if doc.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "checkpoint version {} unsupported (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if doc.scalar != F::NAME {
        return Err(bad(format!("checkpoint holds {} parameters, expected {}", doc.scalar, F::NAME)));
    }
    if doc.config.hash() != doc.config_hash {
        return Err(bad("configuration hash mismatch"));
    }
    let mut model = SelectionModel::<F>::zeros(doc.config.model)?;
    let targets = model.params_mut();
    if targets.len() != doc.params.len() {
        return Err(bad(format!("expected {} parameters, found {}", targets.len(), doc.params.len())));
    }
    for (t, r) in targets.into_iter().zip(&doc.params) {
        if t.name != r.name || t.rows != r.rows || t.cols != r.cols || r.values.len() != t.values.len() {
            return Err(bad(format!(
                "parameter {} ({}x{}) does not match {} ({}x{})",
                r.name, r.rows, r.cols, t.name, t.rows, t.cols
            )));
        }
        for (dst, &v) in t.values.iter_mut().zip(&r.values) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", r.name)));
            }
            *dst = F::lit(v);
        }
    }
    Ok((model, doc.config))
}
