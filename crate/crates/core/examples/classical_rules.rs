//! Tabulates the five classical rules on a small profile with a Condorcet
//! cycle among three of its candidates, then on random profiles.
//!
//! ```text
//! cargo run --example classical_rules
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use votegraph::data::gen_dirichlet;
use votegraph::election::{smith_set, PairwiseMatrix, RankingProfile};
use votegraph::rules::RuleKind;

fn report(profile: &RankingProfile) {
    for rule in RuleKind::ALL {
        let r = rule.apply(profile);
        println!("  {:<10} winner {}  scores {:?}", rule.name(), r.winner, r.scores);
    }
    let pm = PairwiseMatrix::new(profile);
    println!("  condorcet  {:?}", pm.condorcet_winner());
    println!("  smith set  {:?}", smith_set(profile));
}

fn main() -> votegraph::Result<()> {
    // 0 > 1 > 2 > 0 by majority; 3 is beaten by everyone.
    let cycle = RankingProfile::from_orders(&[
        vec![0, 1, 2, 3],
        vec![0, 1, 2, 3],
        vec![1, 2, 0, 3],
        vec![1, 2, 0, 3],
        vec![2, 0, 1, 3],
        vec![2, 0, 3, 1],
        vec![2, 0, 1, 3],
    ])?;
    println!("cycle profile (7 voters, 4 candidates)");
    report(&cycle);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..3 {
        let u = gen_dirichlet(9, 5, &mut rng);
        println!("random profile {k} (9 voters, 5 candidates)");
        report(&RankingProfile::from_utilities(&u)?);
    }
    Ok(())
}
