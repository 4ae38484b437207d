use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, MetricHistory, OptimConfig, StepOutcome};
use crate::autodiff::{AutodiffError, BoundParams, ParamStore, Tape, Var};
use crate::data::LabeledElection;
use crate::election::{column_welfare, PreferenceProfile, UtilityProfile, WelfareKind};
use crate::eval::{attack, strategic_mask};
use crate::losses::{rational_loss, strategic_copies, welfare_loss, LossValue};
use crate::models::{
    DifferentiableMechanism, Gesn, GesnConfig, Gevn, GraphBatch, InfoSetting, Normalization,
};
use crate::{Error, Result};

/// Which networks learn in an adversarial run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Strategy network against a frozen honest-trained mechanism.
    StandardFreeze,
    /// Mechanism and strategy network trained in alternation.
    RobustTrain,
    /// Fresh strategy network against a frozen robust-trained mechanism.
    RobustFreeze,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::StandardFreeze => "standard-freeze",
            Scenario::RobustTrain => "robust-train",
            Scenario::RobustFreeze => "robust-freeze",
        }
    }

    pub fn trains_mechanism(self) -> bool {
        self == Scenario::RobustTrain
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard-freeze" => Ok(Scenario::StandardFreeze),
            "robust-train" => Ok(Scenario::RobustTrain),
            "robust-freeze" => Ok(Scenario::RobustFreeze),
            other => Err(Error::invalid(format!("unknown scenario '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub scenario: Scenario,
    pub info: InfoSetting,
    pub normalization: Normalization,
    /// Probability that each voter strategises.
    pub strategic_fraction: f64,
    pub welfare: WelfareKind,
    pub rational_weight: f64,
    pub welfare_weight: f64,
    /// Each epoch is one strategy-network pass, followed by one mechanism
    /// pass in robust training.
    pub epochs: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl AdversarialConfig {
    pub fn new(scenario: Scenario, info: InfoSetting, normalization: Normalization) -> Self {
        AdversarialConfig {
            scenario,
            info,
            normalization,
            strategic_fraction: 0.2,
            welfare: WelfareKind::Utilitarian,
            rational_weight: 1.0,
            welfare_weight: 1.0,
            epochs: 100,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strategic_fraction) {
            return Err(Error::invalid(format!(
                "strategic fraction {} outside [0, 1]",
                self.strategic_fraction
            )));
        }
        for (name, w) in [("rational", self.rational_weight), ("welfare", self.welfare_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("{name} weight {w} must be non-negative")));
            }
        }
        self.normalization.validate()?;
        self.optim.validate()
    }
}

#[derive(Clone, Debug)]
pub struct AdversarialOutcome {
    pub gevn: Gevn,
    pub gesn: Gesn,
    pub history: MetricHistory,
    /// Mechanism fingerprints before and after the run.
    pub gevn_fingerprint: (String, String),
}

/// Runs `config.scenario` starting from `pretrained`: the honest-trained
/// mechanism for standard freezing and robust training, the robust-trained
/// one for robust freezing. Validation under attack uses fixed masks drawn
/// from `config.seed`.
pub fn train_adversarial(
    config: &AdversarialConfig,
    pretrained: Option<Gevn>,
    train: &[LabeledElection],
    valid: &[LabeledElection],
) -> Result<AdversarialOutcome> {
    config.validate()?;
    let mut gevn = pretrained.ok_or_else(|| {
        Error::invalid(format!(
            "scenario {} requires a pretrained mechanism checkpoint",
            config.scenario
        ))
    })?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::invalid("adversarial training needs non-empty train and validation sets"));
    }
    let mut gesn = Gesn::new(GesnConfig::new(config.info, config.normalization), config.seed)?;
    let before = gevn.params().fingerprint();
    let us: Vec<&UtilityProfile> = train.iter().map(|e| e.utilities()).collect();
    let truthful: Vec<PreferenceProfile> =
        us.iter().map(|u| PreferenceProfile::from_utilities(u)).collect();
    let targets: Vec<Vec<f64>> = us.iter().map(|u| column_welfare(u, config.welfare)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut gesn_adam = Adam::new(gesn.params(), config.optim);
    let mut gevn_adam = Adam::new(gevn.params(), config.optim);
    let mut history = MetricHistory::new();
    validate(&gevn, &gesn, config, valid, 0, &mut history)?;
    let batches = train.len().div_ceil(config.optim.batch_size);
    for epoch in 0..config.epochs {
        let stage = |b: usize| config.optim.lr_at(epoch as f64 + b as f64 / batches as f64);
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0);
        for (b, chunk) in order.chunks(config.optim.batch_size).enumerate() {
            let refs: Vec<&PreferenceProfile> = chunk.iter().map(|&k| &truthful[k]).collect();
            let batch_us: Vec<&UtilityProfile> = chunk.iter().map(|&k| us[k]).collect();
            let batch = GraphBatch::from_profiles(&refs);
            let mask = strategic_mask(batch.num_voters(), config.strategic_fraction, &mut rng);
            let mut tape = Tape::new();
            let live = gesn.params().bind(&mut tape, true)?;
            let frozen = gevn.params().bind(&mut tape, false)?;
            let Some(loss) = gesn_loss(&mut tape, &gevn, &frozen, &gesn, &live, &batch, &batch_us, &mask, config)?
            else {
                continue;
            };
            total += loss.item(&tape);
            steps += 1;
            step(&mut tape, &loss, &live, &mut gesn_adam, gesn.params_mut(), stage(b))?;
        }
        if steps > 0 {
            history.push(epoch + 1, "train", "rational", total / steps as f64);
        }
        if config.scenario.trains_mechanism() {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(config.optim.batch_size).enumerate() {
                let refs: Vec<&PreferenceProfile> = chunk.iter().map(|&k| &truthful[k]).collect();
                let sw: Vec<Vec<f64>> = chunk.iter().map(|&k| targets[k].clone()).collect();
                let batch = GraphBatch::from_profiles(&refs);
                let mask = strategic_mask(batch.num_voters(), config.strategic_fraction, &mut rng);
                let mut tape = Tape::new();
                let live = gevn.params().bind(&mut tape, true)?;
                let frozen = gesn.params().bind(&mut tape, false)?;
                let loss = gevn_loss(&mut tape, &gevn, &live, &gesn, &frozen, &batch, &sw, &mask, config)?;
                total += loss.item(&tape);
                step(&mut tape, &loss, &live, &mut gevn_adam, gevn.params_mut(), stage(b))?;
            }
            history.push(epoch + 1, "train", "welfare", total / batches as f64);
        }
        validate(&gevn, &gesn, config, valid, epoch + 1, &mut history)?;
    }
    let after = gevn.params().fingerprint();
    if !config.scenario.trains_mechanism() && after != before {
        return Err(Error::Model(format!(
            "frozen mechanism changed during {}",
            config.scenario
        )));
    }
    Ok(AdversarialOutcome {
        gevn,
        gesn,
        history,
        gevn_fingerprint: (before, after),
    })
}

/// Honest outcome column for the results setting, detached from every
/// parameter.
fn honest_outcome(
    tape: &mut Tape,
    gevn: &Gevn,
    bound: &BoundParams,
    batch: &GraphBatch,
    truthful: Var,
    info: InfoSetting,
) -> Result<Option<Var>> {
    if info != InfoSetting::Results {
        return Ok(None);
    }
    let p = gevn.forward(tape, bound, batch, truthful)?;
    Ok(Some(tape.stop_gradient(p)))
}

/// Mean rational loss of the strategic voters in `batch`, each evaluated on
/// its own graph copy; `None` if nobody strategises.
#[allow(clippy::too_many_arguments)]
fn gesn_loss(
    tape: &mut Tape,
    gevn: &Gevn,
    gevn_bound: &BoundParams,
    gesn: &Gesn,
    gesn_bound: &BoundParams,
    batch: &GraphBatch,
    utilities: &[&UtilityProfile],
    mask: &[bool],
    config: &AdversarialConfig,
) -> Result<Option<LossValue>> {
    if !mask.iter().any(|&s| s) {
        return Ok(None);
    }
    let truthful = tape.constant(batch.edge_features().clone())?;
    let honest = honest_outcome(tape, gevn, gevn_bound, batch, truthful, config.info)?;
    let live = gesn.forward(tape, gesn_bound, batch, truthful, honest)?;
    let copies = strategic_copies(tape, batch, live, truthful, mask)?;
    let probs = gevn.forward(tape, gevn_bound, &copies.batch, copies.edges)?;
    let loss = rational_loss(tape, probs, &copies, utilities)?;
    let value = tape.scale(loss.value, config.rational_weight)?;
    Ok(Some(LossValue {
        value,
        terms: loss.terms,
    }))
}

/// Welfare loss of the mechanism on ballots where strategic voters report
/// the frozen strategy network's output.
#[allow(clippy::too_many_arguments)]
fn gevn_loss(
    tape: &mut Tape,
    gevn: &Gevn,
    gevn_bound: &BoundParams,
    gesn: &Gesn,
    gesn_bound: &BoundParams,
    batch: &GraphBatch,
    welfare: &[Vec<f64>],
    mask: &[bool],
    config: &AdversarialConfig,
) -> Result<LossValue> {
    let truthful = tape.constant(batch.edge_features().clone())?;
    let edges = if mask.iter().any(|&s| s) {
        let honest = honest_outcome(tape, gevn, gevn_bound, batch, truthful, config.info)?;
        let reported = gesn.forward(tape, gesn_bound, batch, truthful, honest)?;
        let reported = tape.stop_gradient(reported);
        let source = tape.concat_rows(&[truthful, reported])?;
        let p = batch.num_pairs();
        let index: Arc<[usize]> = batch
            .pair_voter_ordinal()
            .iter()
            .enumerate()
            .map(|(pair, &v)| if mask[v] { p + pair } else { pair })
            .collect();
        tape.gather_rows(source, index)?
    } else {
        truthful
    };
    let probs = gevn.forward(tape, gevn_bound, batch, edges)?;
    let loss = welfare_loss(tape, probs, batch, welfare)?;
    let value = tape.scale(loss.value, config.welfare_weight)?;
    Ok(LossValue {
        value,
        terms: loss.terms,
    })
}

fn step(
    tape: &mut Tape,
    loss: &LossValue,
    bound: &BoundParams,
    adam: &mut Adam,
    params: &mut ParamStore,
    lr: f64,
) -> Result<()> {
    let value = loss.item(tape);
    if !value.is_finite() {
        return Err(Error::Diverged(format!("adversarial loss {value}")));
    }
    match tape.backward(loss.value) {
        Ok(mut g) => {
            let grads = params.collect_grads(bound, &mut g);
            if adam.step(params, grads, lr)? == StepOutcome::Skipped {
                log::warn!("adversarial step skipped");
            }
        }
        Err(AutodiffError::NonFinite { op }) => {
            log::warn!("adversarial step skipped: non-finite gradient in {op}");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn validate(
    gevn: &Gevn,
    gesn: &Gesn,
    config: &AdversarialConfig,
    valid: &[LabeledElection],
    epoch: usize,
    history: &mut MetricHistory,
) -> Result<()> {
    let r = attack(gevn, gesn, valid, config.strategic_fraction, config.seed, config.welfare)?;
    history.push(epoch, "valid", "honest_welfare", r.honest_welfare);
    history.push(epoch, "valid", "welfare", r.attacked_welfare);
    history.push(epoch, "valid", "manipulation_gain", r.manipulation_gain);
    history.push(epoch, "valid", "rational", r.rational_loss);
    log::info!(
        "{} epoch {epoch}: welfare {:.5}, gain {:.5}, rational {:.5}",
        config.scenario,
        r.attacked_welfare,
        r.manipulation_gain,
        r.rational_loss
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_dataset, DatasetSpec, LabelSpec, Source};
    use crate::models::GevnConfig;

    fn data(count: usize, seed: u64) -> Vec<LabeledElection> {
        let spec = DatasetSpec::train(Source::Spatial, LabelSpec::None, seed)
            .with_count(count)
            .with_ranges((3, 5), (2, 3));
        label_dataset(&spec).unwrap()
    }

    fn mechanism() -> Gevn {
        Gevn::new(
            GevnConfig {
                layers: 1,
                node_width: 6,
                edge_width: 3,
            },
            5,
        )
        .unwrap()
    }

    fn config(scenario: Scenario, fraction: f64) -> AdversarialConfig {
        AdversarialConfig {
            strategic_fraction: fraction,
            epochs: 2,
            optim: OptimConfig {
                batch_size: 8,
                ..OptimConfig::default()
            },
            ..AdversarialConfig::new(scenario, InfoSetting::Private, Normalization::spatial_range())
        }
    }

    #[test]
    fn freezing_keeps_the_mechanism() {
        let out = train_adversarial(
            &config(Scenario::StandardFreeze, 0.5),
            Some(mechanism()),
            &data(16, 1),
            &data(8, 2),
        )
        .unwrap();
        assert_eq!(out.gevn_fingerprint.0, out.gevn_fingerprint.1);
        assert_eq!(out.history.series("valid", "welfare").len(), 3);
    }

    #[test]
    fn zero_fraction_matches_honest_welfare() {
        let out = train_adversarial(
            &config(Scenario::StandardFreeze, 0.0),
            Some(mechanism()),
            &data(16, 1),
            &data(8, 2),
        )
        .unwrap();
        let w = out.history.series("valid", "welfare");
        let h = out.history.series("valid", "honest_welfare");
        assert!(w.iter().zip(&h).all(|(a, b)| a.1 == b.1));
        assert!(w.iter().all(|x| x.1 == w[0].1));
    }

    #[test]
    fn robust_training_moves_the_mechanism() {
        let out = train_adversarial(
            &config(Scenario::RobustTrain, 0.5),
            Some(mechanism()),
            &data(16, 1),
            &data(8, 2),
        )
        .unwrap();
        assert_ne!(out.gevn_fingerprint.0, out.gevn_fingerprint.1);
        assert_eq!(out.history.series("train", "welfare").len(), 2);
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        for s in [Scenario::StandardFreeze, Scenario::RobustTrain, Scenario::RobustFreeze] {
            assert!(train_adversarial(&config(s, 0.2), None, &data(4, 1), &data(4, 2)).is_err());
        }
    }

    #[test]
    fn results_setting_runs() {
        let mut c = config(Scenario::RobustTrain, 0.5);
        c.info = InfoSetting::Results;
        c.epochs = 1;
        train_adversarial(&c, Some(mechanism()), &data(8, 1), &data(4, 2)).unwrap();
    }
}
