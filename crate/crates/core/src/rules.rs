//! Classical single-winner voting rules over strict rankings.
//!
//! Every rule breaks ties toward the lowest candidate index, so labels
//! produced from the same profile are reproducible.

use serde::{Deserialize, Serialize};

use crate::election::{argmax, PairwiseMatrix, RankingProfile};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Plurality,
    Borda,
    Copeland,
    Maximin,
    Stv,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Plurality,
        RuleKind::Borda,
        RuleKind::Copeland,
        RuleKind::Maximin,
        RuleKind::Stv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Plurality => "plurality",
            RuleKind::Borda => "borda",
            RuleKind::Copeland => "copeland",
            RuleKind::Maximin => "maximin",
            RuleKind::Stv => "stv",
        }
    }

    pub fn apply(self, profile: &RankingProfile) -> RuleResult {
        match self {
            RuleKind::Plurality => plurality(profile),
            RuleKind::Borda => borda_rule(profile),
            RuleKind::Copeland => copeland(profile),
            RuleKind::Maximin => maximin(profile),
            RuleKind::Stv => stv(profile),
        }
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "plurality" => Ok(RuleKind::Plurality),
            "borda" => Ok(RuleKind::Borda),
            "copeland" => Ok(RuleKind::Copeland),
            "maximin" | "minimax" => Ok(RuleKind::Maximin),
            "stv" | "irv" => Ok(RuleKind::Stv),
            other => Err(Error::invalid(format!("unknown voting rule '{other}'"))),
        }
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleResult {
    /// Per-candidate score; empty for round-based rules (STV).
    pub scores: Vec<f64>,
    pub winner: usize,
}

impl RuleResult {
    fn from_scores(scores: Vec<f64>) -> Self {
        let winner = argmax(&scores);
        RuleResult { scores, winner }
    }
}

/// Number of first places per candidate.
pub fn plurality(profile: &RankingProfile) -> RuleResult {
    let mut scores = vec![0.0; profile.m()];
    for row in profile.rows() {
        for (j, &r) in row.iter().enumerate() {
            if r == 1 {
                scores[j] += 1.0;
            }
        }
    }
    RuleResult::from_scores(scores)
}

/// Sum of normalised Borda scores `1 - r/m`, accumulated as integer
/// `m - r` points so that tied totals compare equal.
pub fn borda_rule(profile: &RankingProfile) -> RuleResult {
    let m = profile.m();
    let mut points = vec![0u64; m];
    for row in profile.rows() {
        for (p, &r) in points.iter_mut().zip(row) {
            *p += (m - r as usize) as u64;
        }
    }
    RuleResult::from_scores(points.iter().map(|&p| p as f64 / m as f64).collect())
}

/// One point per pairwise win, half a point per draw.
pub fn copeland(profile: &RankingProfile) -> RuleResult {
    let pm = PairwiseMatrix::new(profile);
    let m = pm.m();
    let scores = (0..m)
        .map(|a| {
            (0..m)
                .filter(|&b| b != a)
                .map(|b| match pm.count(a, b).cmp(&pm.count(b, a)) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                })
                .sum()
        })
        .collect();
    RuleResult::from_scores(scores)
}

/// Support against the worst head-to-head opponent. With a single
/// candidate there is no matchup and the score is the electorate size.
pub fn maximin(profile: &RankingProfile) -> RuleResult {
    let pm = PairwiseMatrix::new(profile);
    let m = pm.m();
    let scores = (0..m)
        .map(|a| {
            (0..m)
                .filter(|&b| b != a)
                .map(|b| pm.count(a, b))
                .min()
                .unwrap_or(pm.n()) as f64
        })
        .collect();
    RuleResult::from_scores(scores)
}

/// Instant-runoff single transferable vote.
///
/// Each round counts every ballot for its best non-eliminated candidate.
/// A candidate with more than half of the ballots wins; otherwise the
/// candidate with the fewest votes (lowest index on ties) is eliminated.
pub fn stv(profile: &RankingProfile) -> RuleResult {
    let m = profile.m();
    let n = profile.n();
    let orders: Vec<Vec<usize>> = (0..n).map(|i| profile.order(i)).collect();
    let mut eliminated = vec![false; m];
    let mut remaining = m;
    loop {
        let mut tally = vec![0usize; m];
        for order in &orders {
            if let Some(&top) = order.iter().find(|&&c| !eliminated[c]) {
                tally[top] += 1;
            }
        }
        if let Some(w) = (0..m).find(|&c| !eliminated[c] && 2 * tally[c] > n) {
            return RuleResult {
                scores: Vec::new(),
                winner: w,
            };
        }
        if remaining == 1 {
            let w = (0..m).find(|&c| !eliminated[c]).expect("one survivor");
            return RuleResult {
                scores: Vec::new(),
                winner: w,
            };
        }
        let loser = (0..m)
            .filter(|&c| !eliminated[c])
            .min_by_key(|&c| (tally[c], c))
            .expect("candidates remain");
        eliminated[loser] = true;
        remaining -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orders(o: &[&[usize]]) -> RankingProfile {
        RankingProfile::from_orders(&o.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn plurality_counts_first_places() {
        let p = orders(&[&[0, 1], &[0, 1], &[0, 1], &[1, 0], &[1, 0]]);
        let r = plurality(&p);
        assert_eq!(r.scores, vec![3.0, 2.0]);
        assert_eq!(r.winner, 0);

        assert_eq!(plurality(&orders(&[&[2, 0, 1]])).winner, 2);
        assert_eq!(plurality(&orders(&[&[0, 1], &[1, 0]])).winner, 0);
    }

    #[test]
    fn borda_hand_tally() {
        // A>B>C scores (2/3, 1/3, 0); B>A>C scores (1/3, 2/3, 0).
        let r = borda_rule(&orders(&[&[0, 1, 2], &[1, 0, 2]]));
        for (s, want) in r.scores.iter().zip([1.0, 1.0, 0.0]) {
            assert!((s - want).abs() < 1e-12);
        }
        assert_eq!(r.winner, 0);

        let single = borda_rule(&orders(&[&[2, 0, 1, 3]]));
        assert_eq!(single.scores, vec![0.5, 0.25, 0.75, 0.0]);

        let tripled = borda_rule(&orders(&[&[2, 0, 1, 3], &[2, 0, 1, 3], &[2, 0, 1, 3]]));
        for (a, b) in tripled.scores.iter().zip(&single.scores) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn copeland_cycle_and_draws() {
        let cycle = orders(&[&[0, 1, 2], &[1, 2, 0], &[2, 0, 1]]);
        let r = copeland(&cycle);
        assert_eq!(r.scores, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.winner, 0);

        let cw = orders(&[&[1, 0, 2, 3], &[1, 2, 0, 3], &[0, 1, 3, 2]]);
        assert_eq!(copeland(&cw).scores[1], 3.0);

        let split = orders(&[&[0, 1], &[1, 0]]);
        assert_eq!(copeland(&split).scores, vec![0.5, 0.5]);
    }

    #[test]
    fn maximin_cases() {
        let cycle = orders(&[&[0, 1, 2], &[1, 2, 0], &[2, 0, 1]]);
        let r = maximin(&cycle);
        assert_eq!(r.scores, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.winner, 0);

        let cw = orders(&[&[1, 0, 2], &[1, 2, 0], &[0, 1, 2]]);
        let r = maximin(&cw);
        assert_eq!(r.winner, 1);
        assert!(r.scores[1] > 1.5);

        let two = orders(&[&[1, 0], &[1, 0], &[0, 1]]);
        assert_eq!(maximin(&two).winner, plurality(&two).winner);
    }

    #[test]
    fn stv_round_by_round() {
        // Round 1: A=2, B=2, C=1. C is eliminated and its ballot moves to
        // B, who then holds 3 of 5.
        let p = orders(&[&[0, 1, 2], &[0, 1, 2], &[1, 0, 2], &[1, 0, 2], &[2, 1, 0]]);
        assert_eq!(stv(&p).winner, 1);
    }

    #[test]
    fn stv_majority_stops_immediately() {
        let p = orders(&[&[2, 0, 1], &[2, 1, 0], &[0, 1, 2]]);
        assert_eq!(stv(&p).winner, 2);
        let two = orders(&[&[1, 0], &[0, 1], &[1, 0]]);
        assert_eq!(stv(&two).winner, plurality(&two).winner);
    }

    #[test]
    fn stv_elimination_tie_goes_to_lowest_index() {
        // All three tied on one vote: A (index 0) is eliminated first and
        // its ballot transfers to C, giving C a majority.
        let p = orders(&[&[0, 2, 1], &[1, 2, 0], &[2, 1, 0]]);
        assert_eq!(stv(&p).winner, 2);
    }

    #[test]
    fn parse_rule_names() {
        for kind in RuleKind::ALL {
            assert_eq!(kind.name().parse::<RuleKind>().unwrap(), kind);
        }
        assert!("approval".parse::<RuleKind>().is_err());
    }
}
