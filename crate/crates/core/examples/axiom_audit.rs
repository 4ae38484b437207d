//! Audits anonymity, neutrality and monotonicity of an untrained GEVN, a
//! DeepSets baseline and the mean-score reference mechanism.
//!
//! ```text
//! cargo run --release --example axiom_audit
//! ```

use votegraph::data::{label_dataset, DatasetSpec, LabelSpec, Source};
use votegraph::eval::{audit_axioms, AUDIT_PERMUTATIONS};
use votegraph::models::{DeepSets, DeepSetsConfig, Gevn, GevnConfig, InputKind, Mechanism, MeanScore};

fn main() -> votegraph::Result<()> {
    let data = label_dataset(&DatasetSpec::test(Source::Spatial, LabelSpec::None, 4).with_count(64))?;
    let profiles: Vec<_> = data.iter().map(|e| e.ballots(InputKind::Utility)).collect();
    let m = profiles[0].m();

    let gevn = Gevn::new(GevnConfig::SMALL, 1)?;
    let deepsets = DeepSets::new(DeepSetsConfig::new(m), 1)?;
    let mean = MeanScore::new(10.0);
    let mechanisms: [(&str, &dyn Mechanism); 3] = [("gevn", &gevn), ("deepsets", &deepsets), ("mean-score", &mean)];

    println!("{:<11} {:>12} {:>12} {:>12}", "mechanism", "anonymity", "neutrality", "monotonicity");
    for (name, mech) in mechanisms {
        let a = audit_axioms(mech, &profiles, AUDIT_PERMUTATIONS, 0)?;
        println!("{name:<11} {:>12.2e} {:>12.2e} {:>12.2e}", a.anonymity, a.neutrality, a.monotonicity);
    }
    Ok(())
}
