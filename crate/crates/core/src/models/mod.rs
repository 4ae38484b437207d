//! Election graphs and the networks that run on them.
//!
//! [`Gevn`] is the voting mechanism, [`Gesn`] the strategic voter model and
//! [`DeepSets`] a fixed-width baseline. Every mechanism maps a batch of
//! election graphs to one probability per candidate; see
//! [`DifferentiableMechanism`].

mod checkpoint;
mod deepsets;
mod gesn;
mod gevn;
mod graph;
mod layers;
mod mpnn;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
pub use deepsets::{DeepSets, DeepSetsConfig};
pub use gesn::{Gesn, GesnConfig, InfoSetting, Normalization};
pub use gevn::{Gevn, GevnConfig};
pub use graph::{build_ebg, ElectionGraph, ElectionSpan, GraphBatch};

use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::election::{smith_set, PreferenceProfile, Pscf, RankingProfile};
use crate::{Error, Result};

/// How ballots are derived from an election's utilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Ballots are the utilities themselves.
    Utility,
    /// Ballots are normalised Borda scores of the induced ranking.
    Ranking,
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utility" | "utilities" => Ok(InputKind::Utility),
            "ranking" | "rankings" => Ok(InputKind::Ranking),
            other => Err(Error::invalid(format!("unknown input kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for InputKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputKind::Utility => "utility",
            InputKind::Ranking => "ranking",
        })
    }
}

/// A mechanism expressed on the tape.
///
/// `edges` is the `P×1` ballot column of `batch` and the result is a `C×1`
/// column of winning probabilities in the batch's candidate order. Ballots
/// are a [`Var`] so that strategic ballots and finite-difference probes can
/// flow through the same forward pass.
pub trait DifferentiableMechanism {
    fn params(&self) -> &ParamStore;

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        edges: Var,
    ) -> Result<Var>;
}

/// Anything that turns ballots into a probabilistic social choice.
pub trait Mechanism {
    fn pscf_batch(&self, profiles: &[&PreferenceProfile]) -> Result<Vec<Pscf>>;

    fn pscf(&self, profile: &PreferenceProfile) -> Result<Pscf> {
        Ok(self.pscf_batch(&[profile])?.remove(0))
    }
}

impl<T: DifferentiableMechanism + ?Sized> Mechanism for T {
    fn pscf_batch(&self, profiles: &[&PreferenceProfile]) -> Result<Vec<Pscf>> {
        let batch = GraphBatch::from_profiles(profiles);
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape, false)?;
        let edges = tape.constant(batch.edge_features().clone())?;
        let probs = self.forward(&mut tape, &bound, &batch, edges)?;
        batch
            .split_candidates(tape.value(probs).data())
            .into_iter()
            .map(Pscf::new)
            .collect()
    }
}

/// Softmax over `sharpness ×` each candidate's mean ballot entry. Monotone,
/// anonymous and neutral; used as a reference mechanism.
#[derive(Clone, Debug)]
pub struct MeanScore {
    sharpness: f64,
    empty: ParamStore,
}

impl MeanScore {
    pub fn new(sharpness: f64) -> Self {
        MeanScore {
            sharpness,
            empty: ParamStore::new(),
        }
    }
}

impl DifferentiableMechanism for MeanScore {
    fn params(&self) -> &ParamStore {
        &self.empty
    }

    fn forward(
        &self,
        tape: &mut Tape,
        _bound: &BoundParams,
        batch: &GraphBatch,
        edges: Var,
    ) -> Result<Var> {
        let totals = tape.segment_sum(edges, batch.pair_cand().clone(), batch.num_nodes())?;
        let totals = tape.gather_rows(totals, batch.cand_nodes().clone())?;
        let inv_n: Vec<f64> = batch
            .spans()
            .iter()
            .flat_map(|s| std::iter::repeat_n(1.0 / s.n as f64, s.m))
            .collect();
        let inv_n = tape.constant(Tensor::column(inv_n))?;
        let mean = tape.mul(totals, inv_n)?;
        let logits = tape.scale(mean, self.sharpness)?;
        Ok(tape.segment_softmax(logits, batch.cand_election().clone())?)
    }
}

/// Zeroes the probability of every candidate outside the Smith set and
/// renormalises. If `p` puts no mass on the Smith set the result is uniform
/// over it.
pub fn truncate_to_smith(p: &Pscf, profile: &RankingProfile) -> Result<Pscf> {
    if p.m() != profile.m() {
        return Err(Error::invalid(format!(
            "PSCF over {} candidates for a profile with {}",
            p.m(),
            profile.m()
        )));
    }
    let smith = smith_set(profile);
    let mut keep = vec![false; p.m()];
    for &c in &smith {
        keep[c] = true;
    }
    let mass: f64 = smith.iter().map(|&c| p.probs()[c]).sum();
    let probs: Vec<f64> = if mass > 0.0 {
        p.probs()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v / mass } else { 0.0 })
            .collect()
    } else {
        keep.iter()
            .map(|&k| if k { 1.0 / smith.len() as f64 } else { 0.0 })
            .collect()
    };
    Pscf::new(probs)
}

/// Candidate mask of the Smith set as shared storage for tape ops.
pub fn smith_mask(profile: &RankingProfile) -> Arc<[bool]> {
    let mut keep = vec![false; profile.m()];
    for c in smith_set(profile) {
        keep[c] = true;
    }
    keep.into()
}
