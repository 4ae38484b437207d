use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::GraphBatch;
use super::layers::{LeakyMlp, Linear};
use super::mpnn::MessagePassing;
use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::election::{PreferenceProfile, Pscf, UtilityProfile};
use crate::{Error, Result};

/// What a strategic voter observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoSetting {
    /// Only their own utility row.
    Private,
    /// The full utility matrix.
    Public,
    /// The full utility matrix and the honest election outcome.
    Results,
}

impl std::str::FromStr for InfoSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "private" => Ok(InfoSetting::Private),
            "public" => Ok(InfoSetting::Public),
            "results" => Ok(InfoSetting::Results),
            other => Err(Error::invalid(format!("unknown information setting '{other}'"))),
        }
    }
}

impl std::fmt::Display for InfoSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InfoSetting::Private => "private",
            InfoSetting::Public => "public",
            InfoSetting::Results => "results",
        })
    }
}

/// Constraint applied to every strategic ballot row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    /// Entries are `a · softmax(raw)` and sum to `a`.
    Budget { a: f64 },
    /// Entries are `lo + (hi - lo) · sigmoid(raw)`.
    Range { lo: f64, hi: f64 },
}

impl Normalization {
    /// Range of spatial-model utilities, `[1 - √3, 1]`.
    pub fn spatial_range() -> Self {
        Normalization::Range {
            lo: 1.0 - 3f64.sqrt(),
            hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Normalization::Budget { a } => a.is_finite() && a > 0.0,
            Normalization::Range { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid normalization {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GesnConfig {
    pub info: InfoSetting,
    pub normalization: Normalization,
    /// Private setting: per-entry embedding width.
    pub embed_width: usize,
    /// Private setting: number of DeepSet layers.
    pub deepset_layers: usize,
    /// Public and results settings: message-passing depth and widths.
    pub mp_layers: usize,
    pub node_width: usize,
    pub edge_width: usize,
}

impl GesnConfig {
    pub fn new(info: InfoSetting, normalization: Normalization) -> Self {
        GesnConfig {
            info,
            normalization,
            embed_width: 32,
            deepset_layers: 2,
            mp_layers: 3,
            node_width: 32,
            edge_width: 16,
        }
    }
}

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
enum Arch {
    Private {
        embed: Linear,
        layers: Vec<(LeakyMlp, LeakyMlp)>,
        head: LeakyMlp,
    },
    Graph {
        node_in: Linear,
        edge_in: Linear,
        mp: MessagePassing,
        out: Linear,
    },
}

/// Strategy network mapping true utilities to reported ballots.
#[derive(Clone, Debug)]
pub struct Gesn {
    config: GesnConfig,
    store: ParamStore,
    arch: Arch,
}

impl Gesn {
    pub fn new(config: GesnConfig, seed: u64) -> Result<Self> {
        config.normalization.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let arch = match config.info {
            InfoSetting::Private => {
                let w = config.embed_width;
                if w == 0 || config.deepset_layers == 0 {
                    return Err(Error::invalid("GESN embedding width and depth must be positive"));
                }
                let embed = Linear::single(&mut store, &mut rng, "embed", 1, w);
                let layers = (0..config.deepset_layers)
                    .map(|l| {
                        (
                            LeakyMlp::new(
                                &mut store,
                                &mut rng,
                                &format!("deepset.{l}.inner"),
                                &[w, w, w],
                                LEAKY_SLOPE,
                            ),
                            LeakyMlp::new(
                                &mut store,
                                &mut rng,
                                &format!("deepset.{l}.outer"),
                                &[2 * w, w, w],
                                LEAKY_SLOPE,
                            ),
                        )
                    })
                    .collect();
                let head = LeakyMlp::new(&mut store, &mut rng, "head", &[2 * w, w, w, 1], LEAKY_SLOPE);
                Arch::Private {
                    embed,
                    layers,
                    head,
                }
            }
            InfoSetting::Public | InfoSetting::Results => {
                let (dn, de) = (config.node_width, config.edge_width);
                if dn == 0 || de == 0 || config.mp_layers == 0 {
                    return Err(Error::invalid("GESN widths and depth must be positive"));
                }
                let node_inputs = if config.info == InfoSetting::Results { 3 } else { 2 };
                let node_in = Linear::single(&mut store, &mut rng, "node_in", node_inputs, dn);
                let edge_in = Linear::single(&mut store, &mut rng, "edge_in", 1, de);
                let mp = MessagePassing::new(&mut store, &mut rng, "mp", config.mp_layers, dn, de);
                let out = Linear::single(&mut store, &mut rng, "out", de, 1);
                Arch::Graph {
                    node_in,
                    edge_in,
                    mp,
                    out,
                }
            }
        };
        Ok(Gesn {
            config,
            store,
            arch,
        })
    }

    pub fn config(&self) -> GesnConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Strategic ballots for every pair of `batch`.
    ///
    /// `utilities` is the `P×1` column of true utilities; `honest` is the
    /// `C×1` honest outcome column and is required in the results setting.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        utilities: Var,
        honest: Option<Var>,
    ) -> Result<Var> {
        if self.config.info == InfoSetting::Results && honest.is_none() {
            return Err(Error::Model(
                "results-setting GESN requires the honest outcome".into(),
            ));
        }
        let raw = match &self.arch {
            Arch::Private {
                embed,
                layers,
                head,
            } => {
                let ordinal = batch.pair_voter_ordinal();
                let emb = embed.forward(tape, bound, &[utilities])?;
                let mut h = emb;
                for (inner, outer) in layers {
                    let a = inner.forward(tape, bound, h)?;
                    let s = tape.segment_sum(a, ordinal.clone(), batch.num_voters())?;
                    let s = tape.gather_rows(s, ordinal.clone())?;
                    let cat = tape.concat_cols(&[a, s])?;
                    h = outer.forward(tape, bound, cat)?;
                }
                let cat = tape.concat_cols(&[h, emb])?;
                head.forward(tape, bound, cat)?
            }
            Arch::Graph {
                node_in,
                edge_in,
                mp,
                out,
            } => {
                let x = tape.constant(batch.node_features().clone())?;
                let x = match honest {
                    Some(p) if self.config.info == InfoSetting::Results => {
                        // Honest probabilities land on candidate nodes;
                        // voter nodes get zero.
                        let p = tape.stop_gradient(p);
                        let extra = tape.segment_sum(
                            p,
                            batch.cand_nodes().clone(),
                            batch.num_nodes(),
                        )?;
                        tape.concat_cols(&[x, extra])?
                    }
                    _ => x,
                };
                let h = node_in.forward(tape, bound, &[x])?;
                let e = edge_in.forward(tape, bound, &[utilities])?;
                let (_, e) = mp.forward(tape, bound, batch, h, e)?;
                out.forward(tape, bound, &[e])?
            }
        };
        self.normalize(tape, batch, raw)
    }

    fn normalize(&self, tape: &mut Tape, batch: &GraphBatch, raw: Var) -> Result<Var> {
        match self.config.normalization {
            Normalization::Budget { a } => {
                let p = tape.segment_softmax(raw, batch.pair_voter_ordinal().clone())?;
                Ok(tape.scale(p, a)?)
            }
            Normalization::Range { lo, hi } => {
                let s = tape.sigmoid(raw)?;
                let s = tape.scale(s, hi - lo)?;
                Ok(tape.add_scalar(s, lo)?)
            }
        }
    }

    /// Reported ballots of every voter in one election.
    pub fn strategies(&self, u: &UtilityProfile, honest: Option<&Pscf>) -> Result<PreferenceProfile> {
        let honest = honest.map(std::slice::from_ref);
        Ok(self.strategies_batch(&[u], honest)?.remove(0))
    }

    /// [`Gesn::strategies`] for many elections in one forward pass.
    /// `honest`, when given, holds one outcome per election.
    pub fn strategies_batch(
        &self,
        utilities: &[&UtilityProfile],
        honest: Option<&[Pscf]>,
    ) -> Result<Vec<PreferenceProfile>> {
        let truthful: Vec<PreferenceProfile> =
            utilities.iter().map(|u| PreferenceProfile::from_utilities(u)).collect();
        let refs: Vec<&PreferenceProfile> = truthful.iter().collect();
        let batch = GraphBatch::from_profiles(&refs);
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false)?;
        let column = tape.constant(batch.edge_features().clone())?;
        let honest = match honest {
            Some(ps) => {
                if ps.len() != utilities.len() {
                    return Err(Error::invalid(format!(
                        "{} honest outcomes for {} elections",
                        ps.len(),
                        utilities.len()
                    )));
                }
                let mut probs = Vec::with_capacity(batch.num_candidates());
                for (p, u) in ps.iter().zip(utilities) {
                    if p.m() != u.m() {
                        return Err(Error::invalid(format!(
                            "honest outcome over {} candidates for {} candidates",
                            p.m(),
                            u.m()
                        )));
                    }
                    probs.extend_from_slice(p.probs());
                }
                Some(tape.constant(Tensor::column(probs))?)
            }
            None => None,
        };
        let out = self.forward(&mut tape, &bound, &batch, column, honest)?;
        let data = tape.value(out).data();
        batch
            .spans()
            .iter()
            .map(|s| {
                let rows = data[s.pair_offset..s.pair_offset + s.n * s.m].to_vec();
                PreferenceProfile::cardinal(s.n, s.m, rows)
            })
            .collect()
    }
}
