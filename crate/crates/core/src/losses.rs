//! Training objectives built on the tape.
//!
//! Every loss takes the `C×1` probability column a mechanism produced for a
//! [`GraphBatch`] and averages over the elections (or strategic voters) of
//! the batch.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{BoundParams, Tape, Tensor, Var};
use crate::election::{PreferenceProfile, Pscf, UtilityProfile};
use crate::models::{DifferentiableMechanism, GraphBatch};
use crate::{Error, Result};

/// Floor applied to the winner probability inside the NLL.
pub const NLL_FLOOR: f64 = 1e-12;
/// Step of the central difference used by the monotonicity loss.
pub const MONO_EPS: f64 = 1e-3;
/// Default number of sampled (voter, candidate) pairs per batch.
pub const MONO_SAMPLES: usize = 32;

/// Scalar loss node with a per-term breakdown for logging.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: Var,
    pub terms: Vec<(&'static str, f64)>,
}

impl LossValue {
    fn single(tape: &Tape, name: &'static str, value: Var) -> Self {
        LossValue {
            value,
            terms: vec![(name, tape.value(value).item())],
        }
    }

    /// `self + weight · other`, keeping both breakdowns.
    pub fn combine(self, tape: &mut Tape, other: LossValue, weight: f64) -> Result<LossValue> {
        let scaled = tape.scale(other.value, weight)?;
        let value = tape.add(self.value, scaled)?;
        let mut terms = self.terms;
        terms.extend(other.terms);
        Ok(LossValue { value, terms })
    }

    pub fn item(&self, tape: &Tape) -> f64 {
        tape.value(self.value).item()
    }
}

fn check_column(tape: &Tape, probs: Var, batch: &GraphBatch) -> Result<()> {
    if tape.value(probs).shape() != [batch.num_candidates(), 1] {
        return Err(Error::invalid(format!(
            "probability column {:?} for a batch with {} candidates",
            tape.value(probs).shape(),
            batch.num_candidates()
        )));
    }
    Ok(())
}

/// Mean over elections of `-log max(p(winner), 1e-12)`.
pub fn rule_loss(
    tape: &mut Tape,
    probs: Var,
    batch: &GraphBatch,
    winners: &[usize],
) -> Result<LossValue> {
    check_column(tape, probs, batch)?;
    if winners.len() != batch.num_elections() {
        return Err(Error::invalid(format!(
            "{} labels for {} elections",
            winners.len(),
            batch.num_elections()
        )));
    }
    let mut rows = Vec::with_capacity(winners.len());
    for (s, &w) in batch.spans().iter().zip(winners) {
        if w >= s.m {
            return Err(Error::OutOfRange {
                what: "candidates",
                index: w,
                len: s.m,
            });
        }
        rows.push(s.cand_offset + w);
    }
    let p = tape.gather_rows(probs, rows.into())?;
    let p = tape.clamp_min(p, NLL_FLOOR)?;
    let logp = tape.log(p)?;
    let mean = tape.mean(logp)?;
    let value = tape.neg(mean)?;
    Ok(LossValue::single(tape, "rule", value))
}

/// Mean over elections of `-Σ_j p(c_j) · sw(c_j)`; `welfare[e]` lists the
/// column welfare of election `e`.
pub fn welfare_loss(
    tape: &mut Tape,
    probs: Var,
    batch: &GraphBatch,
    welfare: &[Vec<f64>],
) -> Result<LossValue> {
    check_column(tape, probs, batch)?;
    if welfare.len() != batch.num_elections()
        || batch.spans().iter().zip(welfare).any(|(s, w)| w.len() != s.m)
    {
        return Err(Error::invalid("welfare targets do not match the batch shape"));
    }
    let sw: Vec<f64> = welfare.iter().flatten().copied().collect();
    let sw = tape.constant(Tensor::column(sw))?;
    let weighted = tape.mul(probs, sw)?;
    let total = tape.sum(weighted)?;
    let value = tape.scale(total, -1.0 / batch.num_elections() as f64)?;
    Ok(LossValue::single(tape, "welfare", value))
}

/// A sampled ballot entry: election, voter, candidate.
pub type PairSample = (usize, usize, usize);

/// Draws `k` distinct (election, voter, candidate) triples uniformly from
/// the pairs of `batch`.
pub fn sample_pairs(batch: &GraphBatch, k: usize, rng: &mut impl Rng) -> Vec<PairSample> {
    let total = batch.num_pairs();
    let k = k.min(total);
    let mut picked = sample(rng, total, k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|p| {
            let e = batch
                .spans()
                .partition_point(|s| s.pair_offset <= p)
                - 1;
            let s = batch.spans()[e];
            let local = p - s.pair_offset;
            (e, local / s.m, local % s.m)
        })
        .collect()
}

/// Sum over samples of `max(0, -g)` where `g` estimates `∂p(c_j)/∂σ_i(c_j)`
/// by a central difference with both perturbed passes on the tape.
///
/// The breakdown term `monotonicity` is that sum; `monotonicity_mean` is
/// the per-sample mean.
pub fn monotonicity_loss(
    tape: &mut Tape,
    mechanism: &dyn DifferentiableMechanism,
    bound: &BoundParams,
    profiles: &[&PreferenceProfile],
    samples: &[PairSample],
    eps: f64,
) -> Result<LossValue> {
    if samples.is_empty() {
        let zero = tape.constant(Tensor::scalar(0.0))?;
        return Ok(LossValue {
            value: zero,
            terms: vec![("monotonicity", 0.0), ("monotonicity_mean", 0.0)],
        });
    }
    let mut perturbed = Vec::with_capacity(2 * samples.len());
    for sign in [1.0, -1.0] {
        for &(e, i, j) in samples {
            let p = profiles.get(e).ok_or(Error::OutOfRange {
                what: "elections",
                index: e,
                len: profiles.len(),
            })?;
            if i >= p.n() || j >= p.m() {
                return Err(Error::invalid(format!(
                    "pair ({i}, {j}) outside a {}x{} profile",
                    p.n(),
                    p.m()
                )));
            }
            let mut scores = p.scores().to_vec();
            scores[i * p.m() + j] += sign * eps;
            perturbed.push(PreferenceProfile::cardinal(p.n(), p.m(), scores)?);
        }
    }
    let refs: Vec<&PreferenceProfile> = perturbed.iter().collect();
    let batch = GraphBatch::from_profiles(&refs);
    let edges = tape.constant(batch.edge_features().clone())?;
    let probs = mechanism.forward(tape, bound, &batch, edges)?;
    let k = samples.len();
    let rows = |offset: usize| -> Arc<[usize]> {
        samples
            .iter()
            .enumerate()
            .map(|(s, &(_, _, j))| batch.spans()[offset + s].cand_offset + j)
            .collect()
    };
    let plus = tape.gather_rows(probs, rows(0))?;
    let minus = tape.gather_rows(probs, rows(k))?;
    let diff = tape.sub(plus, minus)?;
    let neg_slope = tape.scale(diff, -1.0 / (2.0 * eps))?;
    let violation = tape.relu(neg_slope)?;
    let value = tape.sum(violation)?;
    let total = tape.value(value).item();
    Ok(LossValue {
        value,
        terms: vec![
            ("monotonicity", total),
            ("monotonicity_mean", total / k as f64),
        ],
    })
}

/// `-Σ_j p(c_j) U_ij` for one voter.
pub fn rational_value(p: &Pscf, u: &UtilityProfile, voter: usize) -> Result<f64> {
    if voter >= u.n() {
        return Err(Error::OutOfRange {
            what: "voters",
            index: voter,
            len: u.n(),
        });
    }
    if p.m() != u.m() {
        return Err(Error::invalid("PSCF and utilities disagree on m"));
    }
    Ok(-p.expectation(u.row(voter)))
}

/// Graph copies for per-voter rational losses.
///
/// Copy `k` repeats election `targets[k].0` with ballots taken from three
/// sources: the targeted voter's row from the live strategic ballots, the
/// other strategic voters' rows from a detached copy, and every honest row
/// from the truthful ballots. Gradients of copy `k` therefore reach only the
/// targeted voter's own strategy.
pub struct StrategicCopies {
    pub batch: GraphBatch,
    pub edges: Var,
    /// `(election, voter)` targeted by each copy.
    pub targets: Vec<(usize, usize)>,
}

/// Builds [`StrategicCopies`] for every strategic voter of `base`.
///
/// `strategic` has one entry per voter of `base` in global voter order;
/// `live` and `honest` are `P×1` ballot columns over the pairs of `base`.
pub fn strategic_copies(
    tape: &mut Tape,
    base: &GraphBatch,
    live: Var,
    honest: Var,
    strategic: &[bool],
) -> Result<StrategicCopies> {
    let p = base.num_pairs();
    if strategic.len() != base.num_voters() {
        return Err(Error::invalid(format!(
            "strategic mask of {} for {} voters",
            strategic.len(),
            base.num_voters()
        )));
    }
    for v in [live, honest] {
        if tape.value(v).shape() != [p, 1] {
            return Err(Error::invalid("ballot columns must be P×1"));
        }
    }
    let detached = tape.stop_gradient(live);
    let source = tape.concat_rows(&[live, detached, honest])?;
    let mut index = Vec::new();
    let mut targets = Vec::new();
    let mut graphs = Vec::new();
    let mut voter_base = 0;
    for (e, s) in base.spans().iter().enumerate() {
        for target in 0..s.n {
            if !strategic[voter_base + target] {
                continue;
            }
            for i in 0..s.n {
                for j in 0..s.m {
                    let pair = s.pair(i, j);
                    index.push(if i == target {
                        pair
                    } else if strategic[voter_base + i] {
                        p + pair
                    } else {
                        2 * p + pair
                    });
                }
            }
            targets.push((e, target));
            graphs.push(e);
        }
        voter_base += s.n;
    }
    let profiles: Vec<PreferenceProfile> = graphs
        .iter()
        .map(|&e| {
            let s = base.spans()[e];
            let data = base.edge_features().data()[s.pair_offset..s.pair_offset + s.n * s.m].to_vec();
            PreferenceProfile::cardinal(s.n, s.m, data)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
    let batch = GraphBatch::from_profiles(&refs);
    let edges = tape.gather_rows(source, index.into())?;
    Ok(StrategicCopies {
        batch,
        edges,
        targets,
    })
}

/// Mean over copies of `-Σ_j p(c_j) U_ij` for the targeted voter `i`.
/// `utilities[e]` is the true utility matrix of election `e` of the base
/// batch.
pub fn rational_loss(
    tape: &mut Tape,
    probs: Var,
    copies: &StrategicCopies,
    utilities: &[&UtilityProfile],
) -> Result<LossValue> {
    check_column(tape, probs, &copies.batch)?;
    if copies.targets.is_empty() {
        let zero = tape.constant(Tensor::scalar(0.0))?;
        return Ok(LossValue {
            value: zero,
            terms: vec![("rational", 0.0)],
        });
    }
    let mut weights = Vec::with_capacity(copies.batch.num_candidates());
    for &(e, i) in &copies.targets {
        let u = utilities.get(e).ok_or(Error::OutOfRange {
            what: "elections",
            index: e,
            len: utilities.len(),
        })?;
        if i >= u.n() {
            return Err(Error::OutOfRange {
                what: "voters",
                index: i,
                len: u.n(),
            });
        }
        weights.extend_from_slice(u.row(i));
    }
    let w = tape.constant(Tensor::column(weights))?;
    let weighted = tape.mul(probs, w)?;
    let total = tape.sum(weighted)?;
    let value = tape.scale(total, -1.0 / copies.targets.len() as f64)?;
    Ok(LossValue::single(tape, "rational", value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MeanScore, Mechanism};

    fn column_batch(ms: &[usize]) -> GraphBatch {
        let profiles: Vec<PreferenceProfile> = ms
            .iter()
            .map(|&m| PreferenceProfile::cardinal(1, m, vec![0.0; m]).unwrap())
            .collect();
        let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
        GraphBatch::from_profiles(&refs)
    }

    #[test]
    fn rule_loss_values() {
        let batch = column_batch(&[3]);
        let mut tape = Tape::new();
        let one_hot = tape.constant(Tensor::column(vec![0.0, 1.0, 0.0])).unwrap();
        assert_eq!(rule_loss(&mut tape, one_hot, &batch, &[1]).unwrap().item(&tape), 0.0);
        let l = rule_loss(&mut tape, one_hot, &batch, &[0]).unwrap().item(&tape);
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
        let uniform = tape.constant(Tensor::column(vec![1.0 / 3.0; 3])).unwrap();
        let l = rule_loss(&mut tape, uniform, &batch, &[2]).unwrap().item(&tape);
        assert!((l - 3f64.ln()).abs() < 1e-12);
        assert!(rule_loss(&mut tape, uniform, &batch, &[3]).is_err());
    }

    #[test]
    fn welfare_loss_values() {
        let batch = column_batch(&[2]);
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column(vec![0.5, 0.5])).unwrap();
        // U = [[1,0],[0,1]]: both columns sum to one.
        let l = welfare_loss(&mut tape, p, &batch, &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(l.item(&tape), -1.0);
        let q = tape.constant(Tensor::column(vec![1.0, 0.0])).unwrap();
        let l = welfare_loss(&mut tape, q, &batch, &[vec![3.0, 5.0]]).unwrap();
        assert_eq!(l.item(&tape), -3.0);
    }

    #[test]
    fn sampled_pairs_are_distinct_and_valid() {
        let a = PreferenceProfile::cardinal(2, 3, vec![0.0; 6]).unwrap();
        let b = PreferenceProfile::cardinal(4, 2, vec![0.0; 8]).unwrap();
        let batch = GraphBatch::from_profiles(&[&a, &b]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let all = sample_pairs(&batch, 100, &mut rng);
        assert_eq!(all.len(), 14);
        let mut dedup = all.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 14);
        assert!(all.iter().all(|&(e, i, j)| if e == 0 { i < 2 && j < 3 } else { i < 4 && j < 2 }));
    }

    #[test]
    fn monotone_mechanism_has_zero_loss() {
        let mech = MeanScore::new(4.0);
        let p = PreferenceProfile::cardinal(3, 3, vec![0.2, 0.5, 0.1, 0.9, 0.3, 0.4, 0.6, 0.6, 0.2])
            .unwrap();
        let mut tape = Tape::new();
        let bound = mech.params().bind(&mut tape, true).unwrap();
        let samples: Vec<PairSample> = (0..3).flat_map(|i| (0..3).map(move |j| (0, i, j))).collect();
        let l = monotonicity_loss(&mut tape, &mech, &bound, &[&p], &samples, MONO_EPS).unwrap();
        assert_eq!(l.item(&tape), 0.0);

        let anti = MeanScore::new(-4.0);
        let l = monotonicity_loss(&mut tape, &anti, &bound, &[&p], &samples, MONO_EPS).unwrap();
        assert!(l.item(&tape) > 0.0);
        assert!(mech.pscf(&p).is_ok());
    }

    #[test]
    fn rational_value_cases() {
        let u = UtilityProfile::from_rows(vec![vec![0.2, 0.7], vec![0.0, 0.0]]).unwrap();
        assert_eq!(rational_value(&Pscf::one_hot(2, 1), &u, 0).unwrap(), -0.7);
        assert_eq!(rational_value(&Pscf::uniform(2), &u, 1).unwrap(), 0.0);
        assert!(rational_value(&Pscf::uniform(2), &u, 2).is_err());
    }
}
