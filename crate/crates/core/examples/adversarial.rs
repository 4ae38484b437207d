//! Pits a strategy network against a mechanism: manipulation against a
//! frozen honest mechanism, robust fine-tuning of the mechanism, and a
//! fresh attack on the robust mechanism.
//!
//! ```text
//! cargo run --release --example adversarial -- [TRAIN_COUNT] [EPOCHS]
//! ```

use votegraph::data::{label_dataset, DatasetSpec, LabelSpec, Source};
use votegraph::election::WelfareKind;
use votegraph::models::{InfoSetting, InputKind, Normalization};
use votegraph::train::{
    train_adversarial, train_welfare, AdversarialConfig, Objective, Scenario, TrainOptions, WelfareOptions,
};

fn main() -> votegraph::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);

    let kind = WelfareKind::Utilitarian;
    let label = LabelSpec::Welfare(kind);
    let train = label_dataset(&DatasetSpec::train(Source::Spatial, label, 1).with_count(count))?;
    let valid = label_dataset(&DatasetSpec::validation(Source::Spatial, label, 2).with_count(128))?;

    let honest = train_welfare(
        &train,
        &valid,
        &WelfareOptions::new(kind, Objective::Welfare),
        &TrainOptions {
            input: InputKind::Utility,
            epochs,
            ..TrainOptions::default()
        },
    )?
    .model;

    let run = |scenario, mechanism| {
        let mut config = AdversarialConfig::new(scenario, InfoSetting::Private, Normalization::spatial_range());
        config.epochs = epochs;
        train_adversarial(&config, Some(mechanism), &train, &valid)
    };
    let standard = run(Scenario::StandardFreeze, honest.clone())?;
    let robust = run(Scenario::RobustTrain, honest)?;
    let refreeze = run(Scenario::RobustFreeze, robust.gevn.clone())?;

    println!("{:<16} {:>14} {:>12} {:>18}", "scenario", "honest welfare", "welfare", "manipulation gain");
    for (name, out) in [("standard-freeze", &standard), ("robust-train", &robust), ("robust-freeze", &refreeze)] {
        let last = |metric: &str| out.history.last("valid", metric).unwrap_or(f64::NAN);
        println!(
            "{name:<16} {:>14.4} {:>12.4} {:>18.4}",
            last("honest_welfare"),
            last("welfare"),
            last("manipulation_gain")
        );
    }
    Ok(())
}
