//! JSON checkpoint format for [`MlpModel`].
//!
//! ```json
//! { "format": "cckd-mlp", "version": 1, "embedding_index": 1,
//!   "layers": [ { "in": 2, "out": 8, "activation": "relu",
//!                 "weight": [...row-major in x out...], "bias": [...] }, ... ] }
//! ```
//!
//! Floats are written in shortest round-trip form (at most 17 significant
//! digits) so a save/load cycle is bitwise lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::mlp::{Activation, DenseLayer, MlpModel};

const FORMAT: &str = "cckd-mlp";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    embedding_index: usize,
    num_classes: usize,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            embedding_index: self.embedding_index(),
            num_classes: self.num_classes(),
            layers: self
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint format {:?} v{}",
                file.format, file.version
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|r| {
                DenseLayer::new(
                    Matrix::from_vec(r.in_dim, r.out_dim, r.weight)?,
                    r.bias,
                    r.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MlpModel::new(layers, file.embedding_index)?;
        if model.num_classes() != file.num_classes {
            return Err(Error::input(format!(
                "checkpoint declares {} classes but final layer has {}",
                file.num_classes,
                model.num_classes()
            )));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MlpModel::from_json(&text)
}
