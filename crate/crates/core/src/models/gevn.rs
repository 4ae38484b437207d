use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::GraphBatch;
use super::layers::Linear;
use super::mpnn::MessagePassing;
use super::DifferentiableMechanism;
use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GevnConfig {
    pub layers: usize,
    pub node_width: usize,
    pub edge_width: usize,
}

impl GevnConfig {
    /// Roughly 100k parameters.
    pub const SMALL: GevnConfig = GevnConfig {
        layers: 4,
        node_width: 58,
        edge_width: 19,
    };

    /// Roughly 1M parameters.
    pub const STANDARD: GevnConfig = GevnConfig {
        layers: 4,
        node_width: 185,
        edge_width: 60,
    };

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.node_width == 0 || self.edge_width == 0 {
            return Err(Error::invalid(format!(
                "GEVN widths and depth must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for GevnConfig {
    fn default() -> Self {
        Self::SMALL
    }
}

/// Graph election voting network: message passing over the election
/// bipartite graph, read out as a softmax over candidate nodes.
#[derive(Clone, Debug)]
pub struct Gevn {
    config: GevnConfig,
    store: ParamStore,
    node_in: Linear,
    edge_in: Linear,
    mp: MessagePassing,
    readout: Linear,
}

impl Gevn {
    pub fn new(config: GevnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (dn, de) = (config.node_width, config.edge_width);
        let node_in = Linear::single(&mut store, &mut rng, "node_in", 2, dn);
        let edge_in = Linear::single(&mut store, &mut rng, "edge_in", 1, de);
        let mp = MessagePassing::new(&mut store, &mut rng, "mp", config.layers, dn, de);
        let readout = Linear::single(&mut store, &mut rng, "readout", dn, 1);
        Ok(Gevn {
            config,
            store,
            node_in,
            edge_in,
            mp,
            readout,
        })
    }

    pub fn config(&self) -> GevnConfig {
        self.config
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Zeroes the candidate readout so every election gets the uniform
    /// distribution.
    pub fn zero_readout(&mut self) {
        let w = self.readout.parts[0];
        let values: Vec<Tensor> = self
            .store
            .values()
            .iter()
            .enumerate()
            .map(|(k, t)| {
                if k == w.index() {
                    Tensor::zeros(t.rows(), t.cols())
                } else {
                    t.clone()
                }
            })
            .collect();
        self.store.assign(values).expect("shapes unchanged");
    }

    /// Candidate logits, one row per candidate of the batch.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        edges: Var,
    ) -> Result<Var> {
        let x = tape.constant(batch.node_features().clone())?;
        let h = self.node_in.forward(tape, bound, &[x])?;
        let e = self.edge_in.forward(tape, bound, &[edges])?;
        let (h, _) = self.mp.forward(tape, bound, batch, h, e)?;
        let cand = tape.gather_rows(h, batch.cand_nodes().clone())?;
        self.readout.forward(tape, bound, &[cand])
    }
}

impl DifferentiableMechanism for Gevn {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        edges: Var,
    ) -> Result<Var> {
        let logits = self.logits(tape, bound, batch, edges)?;
        tape.segment_softmax(logits, batch.cand_election().clone())
            .map_err(|e| Error::Model(format!("gevn readout: {e}")))
    }
}
