//! Metrics for trained mechanisms: rule agreement, welfare, manipulation
//! and axiom audits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabeledElection;
use crate::election::{column_welfare, PreferenceProfile, Pscf, UtilityProfile, WelfareKind};
use crate::models::{Gesn, InputKind, Mechanism};
use crate::{Error, Result};

/// Elections per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

/// Outcomes of `mech` on `profiles`, computed in chunks.
pub fn outcomes(mech: &dyn Mechanism, profiles: &[PreferenceProfile]) -> Result<Vec<Pscf>> {
    let mut out = Vec::with_capacity(profiles.len());
    for chunk in profiles.chunks(EVAL_CHUNK) {
        let refs: Vec<&PreferenceProfile> = chunk.iter().collect();
        out.extend(mech.pscf_batch(&refs)?);
    }
    Ok(out)
}

/// Outcomes on the truthful ballots of `dataset`.
pub fn predict(mech: &dyn Mechanism, dataset: &[LabeledElection], input: InputKind) -> Result<Vec<Pscf>> {
    let profiles: Vec<PreferenceProfile> = dataset.iter().map(|e| e.ballots(input)).collect();
    outcomes(mech, &profiles)
}

/// Fraction of elections whose most probable candidate is the label.
pub fn accuracy(mech: &dyn Mechanism, dataset: &[LabeledElection], input: InputKind) -> Result<f64> {
    let labels = labels(dataset)?;
    let preds = predict(mech, dataset, input)?;
    Ok(agreement(&preds, &labels))
}

/// Every label of `dataset`; errors if it is empty or any label is missing.
pub fn labels(dataset: &[LabeledElection]) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset is undefined"));
    }
    dataset
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.label
                .ok_or_else(|| Error::invalid(format!("election {k} has no winner label")))
        })
        .collect()
}

/// Fraction of `preds` whose argmax equals the matching label.
pub fn agreement(preds: &[Pscf], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, &l)| p.winner() == l).count();
    hits as f64 / preds.len().max(1) as f64
}

/// Mean over elections of `Σ_j p(c_j) sw(c_j)`.
pub fn expected_welfare_of(preds: &[Pscf], utilities: &[&UtilityProfile], kind: WelfareKind) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(utilities)
        .map(|(p, u)| p.expectation(&column_welfare(u, kind)))
        .sum();
    total / preds.len().max(1) as f64
}

pub fn expected_welfare(
    mech: &dyn Mechanism,
    dataset: &[LabeledElection],
    input: InputKind,
    kind: WelfareKind,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("expected welfare of an empty dataset is undefined"));
    }
    let preds = predict(mech, dataset, input)?;
    let us: Vec<&UtilityProfile> = dataset.iter().map(|e| e.utilities()).collect();
    Ok(expected_welfare_of(&preds, &us, kind))
}

/// Bernoulli(`fraction`) strategic indicator for each of `n` voters.
pub fn strategic_mask(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < fraction).collect()
}

/// Deterministic strategic masks, one per election; election `k` draws
/// from stream `k` of `seed`.
pub fn dataset_masks(dataset: &[LabeledElection], fraction: f64, seed: u64) -> Vec<Vec<bool>> {
    dataset
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            strategic_mask(e.n(), fraction, &mut rng)
        })
        .collect()
}

/// How voters turn utilities into reported ballots.
pub trait Strategy {
    /// Reported ballots per election given the honest outcomes.
    fn report(&self, utilities: &[&UtilityProfile], honest: &[Pscf]) -> Result<Vec<PreferenceProfile>>;
}

/// Voters report their utilities unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Truthful;

impl Strategy for Truthful {
    fn report(&self, utilities: &[&UtilityProfile], _honest: &[Pscf]) -> Result<Vec<PreferenceProfile>> {
        Ok(utilities.iter().map(|u| PreferenceProfile::from_utilities(u)).collect())
    }
}

impl Strategy for Gesn {
    fn report(&self, utilities: &[&UtilityProfile], honest: &[Pscf]) -> Result<Vec<PreferenceProfile>> {
        let mut out = Vec::with_capacity(utilities.len());
        for (us, hs) in utilities.chunks(EVAL_CHUNK).zip(honest.chunks(EVAL_CHUNK)) {
            out.extend(self.strategies_batch(us, Some(hs))?);
        }
        Ok(out)
    }
}

/// Ballots in which strategic voters' rows come from `reported` and the
/// rest are truthful.
pub fn mix_ballots(u: &UtilityProfile, reported: &PreferenceProfile, mask: &[bool]) -> Result<PreferenceProfile> {
    if reported.n() != u.n() || reported.m() != u.m() || mask.len() != u.n() {
        return Err(Error::invalid("reported ballots, utilities and mask disagree in shape"));
    }
    let scores = (0..u.n())
        .flat_map(|i| if mask[i] { reported.row(i) } else { u.row(i) }.iter().copied())
        .collect();
    PreferenceProfile::cardinal(u.n(), u.m(), scores)
}

/// Welfare and individual gains when a fraction of voters strategise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub honest_welfare: f64,
    pub attacked_welfare: f64,
    /// Mean over strategic voters of `E_attacked[U_i] - E_honest[U_i]`;
    /// zero when nobody strategises.
    pub manipulation_gain: f64,
    /// Mean over strategic voters of `-E_attacked[U_i]`.
    pub rational_loss: f64,
    pub strategic_voters: usize,
}

/// Runs `strategy` against `mech` on utility ballots. Strategic voters are
/// drawn independently with probability `fraction` from `seed`.
pub fn attack(
    mech: &dyn Mechanism,
    strategy: &dyn Strategy,
    dataset: &[LabeledElection],
    fraction: f64,
    seed: u64,
    kind: WelfareKind,
) -> Result<AttackReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate manipulation on an empty dataset"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("strategic fraction {fraction} outside [0, 1]")));
    }
    let us: Vec<&UtilityProfile> = dataset.iter().map(|e| e.utilities()).collect();
    let honest = predict(mech, dataset, InputKind::Utility)?;
    let reported = strategy.report(&us, &honest)?;
    let masks = dataset_masks(dataset, fraction, seed);
    let mixed: Vec<PreferenceProfile> = us
        .iter()
        .zip(&reported)
        .zip(&masks)
        .map(|((u, r), mask)| mix_ballots(u, r, mask))
        .collect::<Result<_>>()?;
    let attacked = outcomes(mech, &mixed)?;
    let mut gain = 0.0;
    let mut utility = 0.0;
    let mut count = 0;
    for (((u, h), a), mask) in us.iter().zip(&honest).zip(&attacked).zip(&masks) {
        for i in (0..u.n()).filter(|&i| mask[i]) {
            let got = a.expectation(u.row(i));
            gain += got - h.expectation(u.row(i));
            utility += got;
            count += 1;
        }
    }
    let per_voter = |x: f64| if count == 0 { 0.0 } else { x / count as f64 };
    Ok(AttackReport {
        honest_welfare: expected_welfare_of(&honest, &us, kind),
        attacked_welfare: expected_welfare_of(&attacked, &us, kind),
        manipulation_gain: per_voter(gain),
        rational_loss: -per_voter(utility),
        strategic_voters: count,
    })
}

pub fn manipulation_gain(
    mech: &dyn Mechanism,
    strategy: &dyn Strategy,
    dataset: &[LabeledElection],
    fraction: f64,
    seed: u64,
) -> Result<f64> {
    Ok(attack(mech, strategy, dataset, fraction, seed, WelfareKind::Utilitarian)?.manipulation_gain)
}

/// Default number of random permutations per election in an audit.
pub const AUDIT_PERMUTATIONS: usize = 16;
/// Step of the monotonicity probe.
pub const AUDIT_EPS: f64 = 1e-3;

/// Empirical axiom violations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AxiomAudit {
    /// Largest `‖f(πσ) - f(σ)‖∞` over voter permutations.
    pub anonymity: f64,
    /// Largest `‖f(τσ) - τ f(σ)‖∞` over candidate permutations.
    pub neutrality: f64,
    /// Mean of `relu(-∂p_j/∂σ_ij)` over sampled ballot entries, estimated
    /// by central differences.
    pub monotonicity: f64,
    pub elections: usize,
    pub permutations: usize,
}

/// Audits anonymity, neutrality and monotonicity of `mech` on `profiles`
/// with `permutations` random voter permutations, candidate permutations
/// and ballot entries per election.
pub fn audit_axioms(
    mech: &dyn Mechanism,
    profiles: &[PreferenceProfile],
    permutations: usize,
    seed: u64,
) -> Result<AxiomAudit> {
    if profiles.is_empty() || permutations == 0 {
        return Err(Error::invalid("an audit needs at least one election and one permutation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = outcomes(mech, profiles)?;
    let mut voter_probes = Vec::new();
    let mut cand_probes = Vec::new();
    let mut cand_perms = Vec::new();
    for (e, p) in profiles.iter().enumerate() {
        for _ in 0..permutations {
            let mut pi: Vec<usize> = (0..p.n()).collect();
            pi.shuffle(&mut rng);
            voter_probes.push(p.permute_voters(&pi)?);
            let mut tau: Vec<usize> = (0..p.m()).collect();
            tau.shuffle(&mut rng);
            cand_probes.push(p.permute_candidates(&tau)?);
            cand_perms.push((e, tau));
        }
    }
    let voter_out = outcomes(mech, &voter_probes)?;
    let mut anonymity: f64 = 0.0;
    for (k, q) in voter_out.iter().enumerate() {
        anonymity = anonymity.max(linf(q.probs(), base[k / permutations].probs()));
    }
    let cand_out = outcomes(mech, &cand_probes)?;
    let mut neutrality: f64 = 0.0;
    for (q, (e, tau)) in cand_out.iter().zip(&cand_perms) {
        let expected: Vec<f64> = tau.iter().map(|&j| base[*e].probs()[j]).collect();
        neutrality = neutrality.max(linf(q.probs(), &expected));
    }
    Ok(AxiomAudit {
        anonymity,
        neutrality,
        monotonicity: monotonicity_probe(mech, profiles, permutations, rng.random())?,
        elections: profiles.len(),
        permutations,
    })
}

/// Mean over `entries` random ballot entries per election of
/// `relu(-∂p_j/∂σ_ij)`, estimated by central differences of step
/// [`AUDIT_EPS`].
pub fn monotonicity_probe(
    mech: &dyn Mechanism,
    profiles: &[PreferenceProfile],
    entries: usize,
    seed: u64,
) -> Result<f64> {
    if profiles.is_empty() || entries == 0 {
        return Err(Error::invalid("a monotonicity probe needs at least one entry"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plus = Vec::with_capacity(profiles.len() * entries);
    let mut minus = Vec::with_capacity(profiles.len() * entries);
    let mut probed = Vec::with_capacity(profiles.len() * entries);
    for p in profiles {
        for _ in 0..entries {
            let i = rng.random_range(0..p.n());
            let j = rng.random_range(0..p.m());
            for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                let mut s = p.scores().to_vec();
                s[i * p.m() + j] += sign * AUDIT_EPS;
                out.push(p.with_scores(s)?);
            }
            probed.push(j);
        }
    }
    let up = outcomes(mech, &plus)?;
    let down = outcomes(mech, &minus)?;
    let mass: f64 = up
        .iter()
        .zip(&down)
        .zip(&probed)
        .map(|((a, b), &j)| (-(a.probs()[j] - b.probs()[j]) / (2.0 * AUDIT_EPS)).max(0.0))
        .sum();
    Ok(mass / probed.len() as f64)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Collected evaluation metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub elections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub expected_welfare: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AxiomAudit>,
}

impl EvalReport {
    /// Flat `(metric, value)` rows.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![("elections".to_string(), self.elections as f64)];
        if let Some(a) = self.accuracy {
            rows.push(("accuracy".into(), a));
        }
        for (k, v) in &self.expected_welfare {
            rows.push((format!("expected_welfare_{k}"), *v));
        }
        if let Some(a) = &self.attack {
            rows.push(("honest_welfare".into(), a.honest_welfare));
            rows.push(("attacked_welfare".into(), a.attacked_welfare));
            rows.push(("manipulation_gain".into(), a.manipulation_gain));
            rows.push(("rational_loss".into(), a.rational_loss));
            rows.push(("strategic_voters".into(), a.strategic_voters as f64));
        }
        if let Some(a) = &self.audit {
            rows.push(("anonymity_violation".into(), a.anonymity));
            rows.push(("neutrality_violation".into(), a.neutrality));
            rows.push(("monotonicity_violation".into(), a.monotonicity));
        }
        rows
    }

    /// `metric,value` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}
