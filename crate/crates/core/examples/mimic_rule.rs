//! Trains a GEVN to reproduce a classical voting rule from ranked ballots
//! and scores it on larger, out-of-distribution elections.
//!
//! ```text
//! cargo run --release --example mimic_rule -- [RULE] [TRAIN_COUNT] [EPOCHS]
//! ```
//!
//! Defaults are sized for a quick run; `borda 20000 100` is the full setup.

use votegraph::data::{label_dataset, DatasetSpec, LabelSpec, Source};
use votegraph::eval::accuracy;
use votegraph::models::{save_checkpoint, GevnConfig, InputKind, Model};
use votegraph::rules::RuleKind;
use votegraph::train::{train_mimic, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let rule: RuleKind = args.first().map_or("borda", String::as_str).parse()?;
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let label = LabelSpec::Rule(rule);
    let train = label_dataset(&DatasetSpec::train(Source::Dirichlet, label, 1).with_count(count))?;
    let valid = label_dataset(&DatasetSpec::validation(Source::Dirichlet, label, 2))?;
    let test = label_dataset(&DatasetSpec::test(Source::Dirichlet, label, 3))?;

    let opts = TrainOptions {
        model: GevnConfig::SMALL,
        input: InputKind::Ranking,
        epochs,
        ..TrainOptions::default()
    };
    let out = train_mimic(&train, &valid, &opts)?;
    for (epoch, acc) in out.history.series("valid", "accuracy") {
        println!("epoch {epoch:>3}  valid accuracy {acc:.4}");
    }
    println!(
        "{rule}: best epoch {} ({:.4}); test accuracy {:.4} (n = 20, m = 8)",
        out.best_epoch,
        out.best_score,
        accuracy(&out.model, &test, InputKind::Ranking)?
    );

    let dir = std::path::Path::new("runs").join(format!("mimic-{rule}"));
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(&dir.join("model.ckpt.json"), &Model::Gevn(out.model), Some(InputKind::Ranking))?;
    out.history.write_csv(&dir.join("metrics.csv"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
