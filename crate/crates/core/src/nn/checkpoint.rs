//! JSON checkpoints: a free-form header plus `name → {shape, values}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, Parameterized, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(default)]
    pub header: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn capture<M: Parameterized + ?Sized>(model: &M, header: serde_json::Value) -> Self {
        let params = model
            .params()
            .into_iter()
            .map(|p| {
                let (r, c) = p.value.shape();
                (
                    p.name.clone(),
                    StoredTensor {
                        shape: [r, c],
                        values: p.value.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        Self { header, params }
    }

    /// Copies stored values into `model`. Every parameter must be present with
    /// a matching shape, and the checkpoint may not carry extra names.
    pub fn restore<M: Parameterized + ?Sized>(&self, model: &mut M) -> Result<(), NnError> {
        let mut seen = 0;
        for p in model.params_mut() {
            let stored = self
                .params
                .get(&p.name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {}", p.name)))?;
            let (r, c) = p.value.shape();
            if stored.shape != [r, c] {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, model expects [{r}, {c}]",
                    p.name, stored.shape
                )));
            }
            p.value = Tensor2::from_vec(r, c, stored.values.clone())
                .map_err(|e| NnError::Checkpoint(format!("parameter {}: {e}", p.name)))?;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {seen}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        serde_json::from_str(s).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
