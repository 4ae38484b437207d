//! Learns a welfare-maximising mechanism on spatial elections in three
//! ways: the welfare loss, the NLL loss on welfare-winner labels, and the
//! welfare loss with the monotonicity penalty.
//!
//! ```text
//! cargo run --release --example welfare_training -- [TRAIN_COUNT] [EPOCHS]
//! ```

use votegraph::data::{label_dataset, DatasetSpec, LabelSpec, Source};
use votegraph::election::WelfareKind;
use votegraph::eval::{accuracy, expected_welfare, monotonicity_probe};
use votegraph::models::InputKind;
use votegraph::train::{train_welfare, Objective, TrainOptions, WelfareOptions};

fn main() -> votegraph::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);

    let kind = WelfareKind::Utilitarian;
    let label = LabelSpec::Welfare(kind);
    let train = label_dataset(&DatasetSpec::train(Source::Spatial, label, 1).with_count(count))?;
    let valid = label_dataset(&DatasetSpec::validation(Source::Spatial, label, 2))?;
    let test = label_dataset(&DatasetSpec::test(Source::Spatial, label, 3))?;
    let probe_set: Vec<_> = test.iter().map(|e| e.ballots(InputKind::Ranking)).collect();

    let variants = [
        ("welfare loss", WelfareOptions::new(kind, Objective::Welfare)),
        ("rule loss", WelfareOptions::new(kind, Objective::Rule)),
        ("welfare + monotonicity", WelfareOptions::new(kind, Objective::Welfare).with_monotonicity(1.0)),
    ];
    println!("{:<24} {:>12} {:>10} {:>12}", "objective", "test welfare", "accuracy", "monotonicity");
    for (name, welfare) in variants {
        let opts = TrainOptions {
            input: InputKind::Ranking,
            epochs,
            ..TrainOptions::default()
        };
        let out = train_welfare(&train, &valid, &welfare, &opts)?;
        println!(
            "{name:<24} {:>12.4} {:>10.4} {:>12.2e}",
            expected_welfare(&out.model, &test, InputKind::Ranking, kind)?,
            accuracy(&out.model, &test, InputKind::Ranking)?,
            monotonicity_probe(&out.model, &probe_set, 4, 0)?,
        );
    }
    Ok(())
}
