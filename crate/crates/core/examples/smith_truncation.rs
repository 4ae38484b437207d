//! Restricts a learned mechanism's output to the Smith set, which makes it
//! Condorcet-consistent: whenever a Condorcet winner exists the truncated
//! distribution is one-hot on it.
//!
//! ```text
//! cargo run --example smith_truncation
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use votegraph::data::gen_spatial;
use votegraph::election::{smith_set, PairwiseMatrix, PreferenceProfile, RankingProfile};
use votegraph::models::{truncate_to_smith, Gevn, GevnConfig, Mechanism};

fn main() -> votegraph::Result<()> {
    let gevn = Gevn::new(GevnConfig::SMALL, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut with_winner, mut consistent) = (0, 0);
    for k in 0..200 {
        let u = gen_spatial(11, 5, &mut rng);
        let ranking = RankingProfile::from_utilities(&u)?;
        let p = gevn.pscf(&PreferenceProfile::from_ranking(&ranking))?;
        let t = truncate_to_smith(&p, &ranking)?;
        if k < 3 {
            println!("election {k}: smith set {:?}", smith_set(&ranking));
            println!("  raw       {:.3?}", p.probs());
            println!("  truncated {:.3?}", t.probs());
        }
        if let Some(w) = PairwiseMatrix::new(&ranking).condorcet_winner() {
            with_winner += 1;
            if t.probs()[w] == 1.0 {
                consistent += 1;
            }
        }
    }
    println!("{consistent}/{with_winner} elections with a Condorcet winner elect it after truncation");
    Ok(())
}
