//! Versioned JSON checkpoints: config, head and every named parameter array.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderModel, HeadKind, ModelConfig};
use crate::error::{Error, Result};
use crate::params::Tensor;

pub const CHECKPOINT_FORMAT: &str = "extrabench-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub head: HeadKind,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &EncoderModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            head: model.head(),
            params: model.params().tensors().to_vec(),
        }
    }

    /// Rebuilds the model, checking that names and shapes match the layout
    /// implied by the stored config and head.
    pub fn into_model(self) -> Result<EncoderModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = EncoderModel::new(self.config, self.head, 0)?;
        let expected = model.params().tensors();
        if expected.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model layout needs {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(&self.params) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        for (slot, t) in model.params_mut().tensors_mut().iter_mut().zip(self.params) {
            slot.data = t.data;
        }
        if !model.params().all_finite() {
            return Err(Error::Validation("checkpoint contains non-finite parameters".into()));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &EncoderModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &Checkpoint::from_model(model))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel> {
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    ckpt.into_model()
}
