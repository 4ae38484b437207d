//! Writes training, validation and test splits as JSONL and reports how
//! often the labelling rule had to break a tie.
//!
//! ```text
//! cargo run --release --example gen_dataset -- [OUT_DIR] [RULE]
//! ```

use std::path::PathBuf;

use votegraph::data::{label_dataset, read_jsonl, write_jsonl, DatasetSpec, LabelSpec, Source};
use votegraph::rules::RuleKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "runs/data".into()));
    let rule: RuleKind = args.next().as_deref().unwrap_or("plurality").parse()?;
    std::fs::create_dir_all(&dir)?;

    let label = LabelSpec::Rule(rule);
    let splits = [
        ("train", DatasetSpec::train(Source::Dirichlet, label, 1).with_count(2000)),
        ("valid", DatasetSpec::validation(Source::Dirichlet, label, 2)),
        ("test", DatasetSpec::test(Source::Dirichlet, label, 3)),
    ];
    for (name, spec) in splits {
        let data = label_dataset(&spec)?;
        let path = dir.join(format!("{name}.jsonl"));
        write_jsonl(&data, &path)?;
        assert_eq!(read_jsonl(&path)?, data);
        let tied = data
            .iter()
            .filter(|e| {
                let scores = rule.apply(&e.ranking()).scores;
                let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                scores.iter().filter(|&&s| s == best).count() > 1
            })
            .count();
        println!(
            "{name:<5} {:>6} elections -> {}  ({tied} with a tied {rule} top)",
            data.len(),
            path.display()
        );
    }
    Ok(())
}
