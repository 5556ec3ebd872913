use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{ModelConfig, Strategy, TransformerModel};
use crate::signal::NormStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Full-precision snapshot of every tensor, pretraining heads included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub strategy: Strategy,
    pub config: ModelConfig,
    /// Normalization the training windows went through, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormStats>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(model: &TransformerModel, strategy: Strategy, epoch: usize) -> Self {
        let tensors = model
            .params
            .specs()
            .iter()
            .zip(model.params.values())
            .map(|(s, v)| NamedTensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: v.data().to_vec(),
            })
            .collect();
        Self {
            epoch,
            strategy,
            config: model.config.clone(),
            norm: None,
            tensors,
        }
    }

    /// Rebuilds the model; every tensor must match the config's layout.
    pub fn restore(&self) -> Result<TransformerModel, TrainError> {
        let mut model = TransformerModel::new(self.config.clone(), 0)?;
        if self.tensors.len() != model.params.specs().len() {
            return Err(TrainError::Data(format!(
                "checkpoint has {} tensors, config expects {}",
                self.tensors.len(),
                model.params.specs().len()
            )));
        }
        let specs = model.params.specs().to_vec();
        for ((spec, value), saved) in specs.iter().zip(model.params.values_mut()).zip(&self.tensors) {
            if spec.name != saved.name || spec.shape != saved.shape || saved.data.len() != spec.len() {
                return Err(TrainError::Data(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    saved.name, saved.shape, spec.name, spec.shape
                )));
            }
            value.data_mut().copy_from_slice(&saved.data);
        }
        Ok(model)
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let name = path
        .file_name()
        .ok_or_else(|| TrainError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| TrainError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let bytes = serde_json::to_vec(ckpt).map_err(|e| TrainError::Data(e.to_string()))?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))
}
