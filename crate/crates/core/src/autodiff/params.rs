use sha2::{Digest, Sha256};

use super::{AutodiffError, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    trainable: bool,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Loads every parameter onto `tape`. Frozen bindings are constants and
    /// never accumulate gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams, AutodiffError> {
        let vars = self
            .values
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect::<Result<_, _>>()?;
        Ok(BoundParams { vars, trainable })
    }

    /// Gradients for every parameter in store order; parameters without a
    /// gradient path get zeros.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(t, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }

    /// Replaces the parameter values, keeping names. Shapes must match.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<(), AutodiffError> {
        if values.len() != self.values.len() {
            return Err(AutodiffError::Shape(format!(
                "assigning {} tensors to a store of {}",
                values.len(),
                self.values.len()
            )));
        }
        for (name, (old, new)) in self.names.iter().zip(self.values.iter().zip(&values)) {
            if old.shape() != new.shape() {
                return Err(AutodiffError::Shape(format!(
                    "parameter {name}: {:?} vs {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
