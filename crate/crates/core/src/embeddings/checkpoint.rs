use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, ParamStore};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub values: Vec<f64>,
}

/// Named-tensor snapshot of a parameter store plus the hashes of the
/// vocabulary and configuration it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_hash: String,
    pub config_hash: String,
    /// The training configuration, serialized as TOML.
    pub config: String,
    pub epoch: Option<usize>,
    pub dev_f1: Option<f64>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, vocab_hash: &str, config_hash: &str, config: &str) -> Self {
        let tensors = store
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
                values: p.value.iter().copied().collect(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            vocab_hash: vocab_hash.to_string(),
            config_hash: config_hash.to_string(),
            config: config.to_string(),
            epoch: None,
            dev_f1: None,
            tensors,
        }
    }

    /// Overwrite the values in `store`. Every tensor in the store must be
    /// present with a matching shape.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for t in &self.tensors {
            let id = store
                .id_of(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", t.name)))?;
            let current = store.value(id).dim();
            if current != (t.shape[0], t.shape[1]) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    t.name, t.shape, current
                )));
            }
            let m = Matrix::from_shape_vec((t.shape[0], t.shape[1]), t.values.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
            *store.value_mut(id) = m;
        }
        store.zero_grad();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        for t in &ck.tensors {
            if t.values.len() != t.shape[0] * t.shape[1] {
                return Err(Error::Checkpoint(format!("tensor `{}` length mismatch", t.name)));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor `{}` has non-finite values", t.name)));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
