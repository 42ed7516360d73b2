//! JSON checkpoints: every parameter tensor under a stable name, with its
//! dims, plus the settings evaluation needs to rebuild the test split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderParams, ModelConfig};
use crate::supervision::KernelConfig;
use crate::trainer::{TrainConfig, TrainMode};

pub const FORMAT: &str = "geoalign-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    seed: u64,
    mode: TrainMode,
    train_frac: f64,
    split_seed: u64,
    lambda_fair: f64,
    kernel: KernelConfig,
    model: ModelConfig,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub seed: u64,
    pub mode: TrainMode,
    pub train_frac: f64,
    pub split_seed: u64,
    pub lambda_fair: f64,
    pub kernel: KernelConfig,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, cfg: &TrainConfig) -> Self {
        Checkpoint {
            params,
            seed: cfg.seed,
            mode: cfg.mode,
            train_frac: cfg.train_frac,
            split_seed: cfg.split_seed,
            lambda_fair: cfg.effective_lambda(),
            kernel: cfg.kernel,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT.to_string(),
            seed: self.seed,
            mode: self.mode,
            train_frac: self.train_frac,
            split_seed: self.split_seed,
            lambda_fair: self.lambda_fair,
            kernel: self.kernel,
            model: self.params.config(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|t| TensorRecord {
                    name: t.name.to_string(),
                    dims: t.dims,
                    data: t.data.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::invalid(format!("unsupported checkpoint format `{}`", doc.format)));
        }
        doc.model.validate()?;
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> =
            doc.tensors.into_iter().map(|t| (t.name, t.dims, t.data)).collect();
        let params = EncoderParams::from_tensors(&doc.model, &tensors)?;
        Ok(Checkpoint {
            params,
            seed: doc.seed,
            mode: doc.mode,
            train_frac: doc.train_frac,
            split_seed: doc.split_seed,
            lambda_fair: doc.lambda_fair,
            kernel: doc.kernel,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
