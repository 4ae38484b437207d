use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DeepSets, DeepSetsConfig, DifferentiableMechanism, Gesn, GesnConfig, Gevn, GevnConfig,
    InputKind, Mechanism,
};
use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "votegraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Gevn(GevnConfig),
    Gesn(GesnConfig),
    Deepsets(DeepSetsConfig),
}

/// A network of any supported architecture.
#[derive(Clone, Debug)]
pub enum Model {
    Gevn(Gevn),
    Gesn(Gesn),
    DeepSets(DeepSets),
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Gevn(c) => Model::Gevn(Gevn::new(c, seed)?),
            ModelConfig::Gesn(c) => Model::Gesn(Gesn::new(c, seed)?),
            ModelConfig::Deepsets(c) => Model::DeepSets(DeepSets::new(c, seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Gevn(g) => ModelConfig::Gevn(g.config()),
            Model::Gesn(g) => ModelConfig::Gesn(g.config()),
            Model::DeepSets(d) => ModelConfig::Deepsets(d.config()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Gevn(g) => DifferentiableMechanism::params(g),
            Model::Gesn(g) => g.params(),
            Model::DeepSets(d) => DifferentiableMechanism::params(d),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Gevn(g) => g.params_mut(),
            Model::Gesn(g) => g.params_mut(),
            Model::DeepSets(d) => d.params_mut(),
        }
    }

    /// The model as a voting mechanism; `None` for strategy networks.
    pub fn mechanism(&self) -> Option<&dyn DifferentiableMechanism> {
        match self {
            Model::Gevn(g) => Some(g),
            Model::DeepSets(d) => Some(d),
            Model::Gesn(_) => None,
        }
    }

    /// [`Model::mechanism`] as a plain [`Mechanism`].
    pub fn as_mechanism(&self) -> Option<&dyn Mechanism> {
        match self {
            Model::Gevn(g) => Some(g),
            Model::DeepSets(d) => Some(d),
            Model::Gesn(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing serialised model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    /// Ballot representation the model was trained on.
    pub input: Option<InputKind>,
    pub params: Vec<ParamRecord>,
    /// SHA-256 over parameter names, shapes and values.
    pub fingerprint: String,
}

impl Checkpoint {
    pub fn from_model(model: &Model, input: Option<InputKind>) -> Self {
        let store = model.params();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.config(),
            input,
            params: store
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape(),
                    data: t.data().to_vec(),
                })
                .collect(),
            fingerprint: store.fingerprint(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unrecognised format '{}'",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::build(self.model, 0)?;
        let store = model.params();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter tensors recorded, architecture has {}",
                self.params.len(),
                store.len()
            )));
        }
        let mut values = Vec::with_capacity(self.params.len());
        for ((name, expected), rec) in store.iter().zip(self.params) {
            if name != rec.name || expected.shape() != rec.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' {:?} does not match architecture slot '{name}' {:?}",
                    rec.name,
                    rec.shape,
                    expected.shape()
                )));
            }
            let t = Tensor::new(rec.shape[0], rec.shape[1], rec.data)
                .map_err(|e| Error::Checkpoint(format!("parameter '{}': {e}", rec.name)))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' holds non-finite values",
                    rec.name
                )));
            }
            values.push(t);
        }
        model
            .params_mut()
            .assign(values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let actual = model.params().fingerprint();
        if actual != self.fingerprint {
            return Err(Error::Checkpoint(format!(
                "fingerprint mismatch: recorded {}, computed {actual}",
                self.fingerprint
            )));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, input: Option<InputKind>) -> Result<()> {
    let ck = Checkpoint::from_model(model, input);
    let text = serde_json::to_string(&ck)?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<InputKind>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| {
        Error::Checkpoint(format!("{}: malformed checkpoint: {e}", path.display()))
    })?;
    let input = ck.input;
    let model = ck
        .into_model()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((model, input))
}
