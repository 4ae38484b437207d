use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::GraphBatch;
use super::layers::{LayerNorm, Linear};
use super::DifferentiableMechanism;
use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeepSetsConfig {
    /// Number of candidates the model is built for.
    pub m: usize,
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

impl DeepSetsConfig {
    pub fn new(m: usize) -> Self {
        DeepSetsConfig {
            m,
            width: 155,
            encoder_layers: 3,
            decoder_layers: 5,
        }
    }
}

/// Stack of linear layers with `LayerNorm → ReLU` between them.
#[derive(Clone, Debug)]
struct NormStack {
    linears: Vec<Linear>,
    norms: Vec<LayerNorm>,
}

impl NormStack {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: &[usize]) -> Self {
        let linears: Vec<Linear> = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::single(store, rng, &format!("{name}.{k}"), w[0], w[1]))
            .collect();
        let norms = widths[1..widths.len() - 1]
            .iter()
            .enumerate()
            .map(|(k, &w)| LayerNorm::new(store, &format!("{name}.norm{k}"), w))
            .collect();
        NormStack { linears, norms }
    }

    fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, lin) in self.linears.iter().enumerate() {
            h = lin.forward(tape, bound, &[h])?;
            if let Some(norm) = self.norms.get(k) {
                h = norm.forward(tape, bound, h)?;
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Voter-permutation-invariant baseline: encode each ballot row, sum over
/// voters, decode to logits over a fixed number of candidates.
#[derive(Clone, Debug)]
pub struct DeepSets {
    config: DeepSetsConfig,
    store: ParamStore,
    encoder: NormStack,
    decoder: NormStack,
}

impl DeepSets {
    pub fn new(config: DeepSetsConfig, seed: u64) -> Result<Self> {
        if config.m == 0 || config.width == 0 || config.encoder_layers == 0 || config.decoder_layers == 0 {
            return Err(Error::invalid(format!("invalid DeepSets config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = config.width;
        let mut enc = vec![config.m];
        enc.extend(std::iter::repeat_n(w, config.encoder_layers));
        let mut dec = vec![w];
        dec.extend(std::iter::repeat_n(w, config.decoder_layers - 1));
        dec.push(config.m);
        let encoder = NormStack::new(&mut store, &mut rng, "encoder", &enc);
        let decoder = NormStack::new(&mut store, &mut rng, "decoder", &dec);
        Ok(DeepSets {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> DeepSetsConfig {
        self.config
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl DifferentiableMechanism for DeepSets {
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
        let m = self.config.m;
        if let Some(s) = batch.spans().iter().find(|s| s.m != m) {
            return Err(Error::Model(format!(
                "DeepSets model built for {m} candidates cannot score an election with {}",
                s.m
            )));
        }
        let voters = batch.num_voters();
        let election_of_voter: Arc<[usize]> = batch
            .spans()
            .iter()
            .enumerate()
            .flat_map(|(e, s)| std::iter::repeat_n(e, s.n))
            .collect();
        let rows = tape.reshape(edges, voters, m)?;
        let enc = self.encoder.forward(tape, bound, rows)?;
        let pooled = tape.segment_sum(enc, election_of_voter, batch.num_elections())?;
        let logits = self.decoder.forward(tape, bound, pooled)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(tape.reshape(probs, batch.num_elections() * m, 1)?)
    }
}
