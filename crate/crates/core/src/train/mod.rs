//! Optimisation and the experiment drivers: rule mimicry, welfare
//! maximisation and adversarial training.

mod adversarial;
mod history;
mod optim;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adversarial::{train_adversarial, AdversarialConfig, AdversarialOutcome, Scenario};
pub use history::{MetricHistory, MetricRecord};
pub use optim::{lr_at, Adam, OptimConfig, StepOutcome};

use crate::autodiff::{AutodiffError, BoundParams, Tape, Var};
use crate::data::LabeledElection;
use crate::election::{column_welfare, welfare_winner, PreferenceProfile, UtilityProfile, WelfareKind};
use crate::eval;
use crate::losses::{
    monotonicity_loss, rule_loss, sample_pairs, welfare_loss, LossValue, MONO_EPS, MONO_SAMPLES,
};
use crate::models::{DifferentiableMechanism, Gevn, GevnConfig, GraphBatch, InputKind};
use crate::{Error, Result};

/// Settings shared by every GEVN training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: GevnConfig,
    pub optim: OptimConfig,
    pub input: InputKind,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Stop before an epoch that would overrun this wall-clock budget.
    pub time_budget: Option<Duration>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            model: GevnConfig::SMALL,
            optim: OptimConfig::default(),
            input: InputKind::Ranking,
            epochs: 100,
            patience: Some(30),
            time_budget: None,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least one epoch"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EpochLimit,
    Stagnation,
    TimeBudget,
}

/// A trained mechanism with its training log. `model` holds the parameters
/// of the best validation epoch; epoch 0 is the initialisation.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Gevn,
    pub history: MetricHistory,
    pub best_epoch: usize,
    pub best_score: f64,
    pub epochs_run: usize,
    pub stop: StopReason,
}

struct FitSummary {
    best_epoch: usize,
    best_score: f64,
    epochs_run: usize,
    stop: StopReason,
}

type BatchLoss<'a> =
    dyn FnMut(&mut Tape, &BoundParams, &Gevn, &[usize], &mut ChaCha8Rng) -> Result<LossValue> + 'a;
type Validate<'a> = dyn FnMut(&Gevn, usize, &mut MetricHistory) -> Result<f64> + 'a;

/// Shuffled mini-batch descent with per-epoch validation. `validate`
/// returns a score to maximise; the best-scoring parameters are restored
/// at the end.
fn fit(
    model: &mut Gevn,
    opts: &TrainOptions,
    n_train: usize,
    history: &mut MetricHistory,
    batch_loss: &mut BatchLoss<'_>,
    validate: &mut Validate<'_>,
) -> Result<FitSummary> {
    opts.validate()?;
    if n_train == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model.params(), opts.optim);
    let mut best_score = validate(model, 0, history)?;
    let mut best_epoch = 0;
    let mut best_params = model.params().values().to_vec();
    let mut order: Vec<usize> = (0..n_train).collect();
    let batches = n_train.div_ceil(opts.optim.batch_size);
    let mut stop = StopReason::EpochLimit;
    let mut epochs_run = 0;
    let mut last_epoch_time = Duration::ZERO;
    for epoch in 0..opts.epochs {
        if let Some(budget) = opts.time_budget {
            if start.elapsed() + last_epoch_time > budget {
                stop = StopReason::TimeBudget;
                break;
            }
        }
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut terms: BTreeMap<&'static str, f64> = BTreeMap::new();
        let mut total = 0.0;
        let mut skipped = 0;
        for (b, chunk) in order.chunks(opts.optim.batch_size).enumerate() {
            let lr = opts.optim.lr_at(epoch as f64 + b as f64 / batches as f64);
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true)?;
            let loss = batch_loss(&mut tape, &bound, model, chunk, &mut rng)
                .map_err(|e| diverged(e, epoch, b))?;
            let value = loss.item(&tape);
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "epoch {} batch {b}: loss {value} (lr {lr:.3e})",
                    epoch + 1
                )));
            }
            total += value;
            for (name, v) in &loss.terms {
                *terms.entry(name).or_default() += v;
            }
            let grads = match tape.backward(loss.value) {
                Ok(mut g) => Some(model.params().collect_grads(&bound, &mut g)),
                Err(AutodiffError::NonFinite { op }) => {
                    log::warn!("epoch {} batch {b}: non-finite gradient in {op}", epoch + 1);
                    None
                }
                Err(e) => return Err(e.into()),
            };
            match grads {
                Some(g) => {
                    if adam.step(model.params_mut(), g, lr)? == StepOutcome::Skipped {
                        skipped += 1;
                    }
                }
                None => skipped += 1,
            }
        }
        epochs_run = epoch + 1;
        history.push(epochs_run, "train", "loss", total / batches as f64);
        for (name, v) in terms {
            history.push(epochs_run, "train", name, v / batches as f64);
        }
        history.push(epochs_run, "train", "lr", opts.optim.lr_at(epoch as f64));
        if skipped > 0 {
            history.push(epochs_run, "train", "skipped_steps", skipped as f64);
        }
        let score = validate(model, epochs_run, history)?;
        log::info!(
            "epoch {epochs_run}: train loss {:.5}, validation score {score:.5}",
            total / batches as f64
        );
        if score > best_score {
            best_score = score;
            best_epoch = epochs_run;
            best_params = model.params().values().to_vec();
        }
        last_epoch_time = epoch_start.elapsed();
        if let Some(p) = opts.patience {
            if epochs_run - best_epoch >= p {
                stop = StopReason::Stagnation;
                break;
            }
        }
    }
    model.params_mut().assign(best_params)?;
    Ok(FitSummary {
        best_epoch,
        best_score,
        epochs_run,
        stop,
    })
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Autodiff(AutodiffError::NonFinite { op }) => Error::Diverged(format!(
            "epoch {} batch {batch}: non-finite value in {op}",
            epoch + 1
        )),
        other => other,
    }
}

fn forward_batch(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Gevn,
    profiles: &[&PreferenceProfile],
) -> Result<(GraphBatch, Var)> {
    let batch = GraphBatch::from_profiles(profiles);
    let edges = tape.constant(batch.edge_features().clone())?;
    let probs = model.forward(tape, bound, &batch, edges)?;
    Ok((batch, probs))
}

fn ballots(dataset: &[LabeledElection], input: InputKind) -> Vec<PreferenceProfile> {
    dataset.iter().map(|e| e.ballots(input)).collect()
}

/// Trains a fresh GEVN to reproduce the labels of `train` with the NLL rule
/// loss, selecting the epoch with the best validation accuracy.
pub fn train_mimic(
    train: &[LabeledElection],
    valid: &[LabeledElection],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let mut model = Gevn::new(opts.model, opts.seed)?;
    let winners = eval::labels(train)?;
    let valid_labels = eval::labels(valid)?;
    let inputs = ballots(train, opts.input);
    let valid_inputs = ballots(valid, opts.input);
    let mut history = MetricHistory::new();
    let mut batch_loss = |tape: &mut Tape,
                          bound: &BoundParams,
                          model: &Gevn,
                          idx: &[usize],
                          _: &mut ChaCha8Rng| {
        let refs: Vec<&PreferenceProfile> = idx.iter().map(|&k| &inputs[k]).collect();
        let labels: Vec<usize> = idx.iter().map(|&k| winners[k]).collect();
        let (batch, probs) = forward_batch(tape, bound, model, &refs)?;
        rule_loss(tape, probs, &batch, &labels)
    };
    let mut validate = |model: &Gevn, epoch: usize, h: &mut MetricHistory| {
        let preds = eval::outcomes(model, &valid_inputs)?;
        let acc = eval::agreement(&preds, &valid_labels);
        h.push(epoch, "valid", "accuracy", acc);
        Ok(acc)
    };
    let s = fit(
        &mut model,
        opts,
        train.len(),
        &mut history,
        &mut batch_loss,
        &mut validate,
    )?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: s.best_epoch,
        best_score: s.best_score,
        epochs_run: s.epochs_run,
        stop: s.stop,
    })
}

/// Loss optimised by [`train_welfare`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Expected welfare of the output distribution.
    Welfare,
    /// NLL of the welfare-maximising candidate.
    Rule,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "welfare" => Ok(Objective::Welfare),
            "rule" => Ok(Objective::Rule),
            other => Err(Error::invalid(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Welfare => "welfare",
            Objective::Rule => "rule",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareOptions {
    pub kind: WelfareKind,
    pub objective: Objective,
    /// Weight of the monotonicity penalty; `None` disables it.
    pub monotonicity_weight: Option<f64>,
    pub monotonicity_samples: usize,
}

impl WelfareOptions {
    pub fn new(kind: WelfareKind, objective: Objective) -> Self {
        WelfareOptions {
            kind,
            objective,
            monotonicity_weight: None,
            monotonicity_samples: MONO_SAMPLES,
        }
    }

    pub fn with_monotonicity(mut self, weight: f64) -> Self {
        self.monotonicity_weight = Some(weight);
        self
    }
}

/// Elections and entries per election probed for monotonicity during
/// validation.
const PROBE_ELECTIONS: usize = 128;
const PROBE_ENTRIES: usize = 2;

/// Trains a fresh GEVN to maximise expected welfare, directly or through
/// the welfare winner as an NLL target. Validation logs expected welfare,
/// winner accuracy and, with the penalty enabled, the monotonicity probe;
/// selection maximises welfare minus the weighted probe.
pub fn train_welfare(
    train: &[LabeledElection],
    valid: &[LabeledElection],
    welfare: &WelfareOptions,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if valid.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if let Some(w) = welfare.monotonicity_weight {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!("monotonicity weight {w} must be non-negative")));
        }
    }
    let mut model = Gevn::new(opts.model, opts.seed)?;
    let kind = welfare.kind;
    let inputs = ballots(train, opts.input);
    let targets: Vec<Vec<f64>> = train.iter().map(|e| column_welfare(e.utilities(), kind)).collect();
    let winners: Vec<usize> = train.iter().map(|e| welfare_winner(e.utilities(), kind)).collect();
    let valid_inputs = ballots(valid, opts.input);
    let valid_us: Vec<&UtilityProfile> = valid.iter().map(|e| e.utilities()).collect();
    let valid_winners: Vec<usize> = valid.iter().map(|e| welfare_winner(e.utilities(), kind)).collect();
    let probe_set = &valid_inputs[..valid_inputs.len().min(PROBE_ELECTIONS)];
    let mut history = MetricHistory::new();
    let mut batch_loss = |tape: &mut Tape,
                          bound: &BoundParams,
                          model: &Gevn,
                          idx: &[usize],
                          rng: &mut ChaCha8Rng| {
        let refs: Vec<&PreferenceProfile> = idx.iter().map(|&k| &inputs[k]).collect();
        let (batch, probs) = forward_batch(tape, bound, model, &refs)?;
        let loss = match welfare.objective {
            Objective::Welfare => {
                let sw: Vec<Vec<f64>> = idx.iter().map(|&k| targets[k].clone()).collect();
                welfare_loss(tape, probs, &batch, &sw)?
            }
            Objective::Rule => {
                let labels: Vec<usize> = idx.iter().map(|&k| winners[k]).collect();
                rule_loss(tape, probs, &batch, &labels)?
            }
        };
        match welfare.monotonicity_weight {
            Some(w) => {
                let samples = sample_pairs(&batch, welfare.monotonicity_samples, rng);
                let mono = monotonicity_loss(tape, model, bound, &refs, &samples, MONO_EPS)?;
                loss.combine(tape, mono, w)
            }
            None => Ok(loss),
        }
    };
    let mut validate = |model: &Gevn, epoch: usize, h: &mut MetricHistory| {
        let preds = eval::outcomes(model, &valid_inputs)?;
        let sw = eval::expected_welfare_of(&preds, &valid_us, kind);
        h.push(epoch, "valid", &format!("expected_welfare_{kind}"), sw);
        h.push(epoch, "valid", "accuracy", eval::agreement(&preds, &valid_winners));
        match welfare.monotonicity_weight {
            Some(w) => {
                let probe = eval::monotonicity_probe(model, probe_set, PROBE_ENTRIES, opts.seed)?;
                h.push(epoch, "valid", "monotonicity", probe);
                Ok(sw - w * probe)
            }
            None => Ok(sw),
        }
    };
    let s = fit(
        &mut model,
        opts,
        train.len(),
        &mut history,
        &mut batch_loss,
        &mut validate,
    )?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: s.best_epoch,
        best_score: s.best_score,
        epochs_run: s.epochs_run,
        stop: s.stop,
    })
}
