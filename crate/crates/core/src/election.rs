//! Election domain types: utility and preference profiles, rankings,
//! welfare functions and pairwise-majority machinery (Condorcet winner,
//! Smith set).
//!
//! Candidates and voters are indexed from zero throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to utilities in the log-space Nash welfare.
pub const NASH_LOG_FLOOR: f64 = 1e-12;

/// Ground-truth `n×m` utility matrix; `get(i, j)` is voter `i`'s utility
/// for candidate `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct UtilityProfile {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl UtilityProfile {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::invalid(format!(
                "an election needs at least one voter and one candidate (got n={n}, m={m})"
            )));
        }
        if data.len() != n * m {
            return Err(Error::invalid(format!(
                "{} utilities for an {n}x{m} profile",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite utility at voter {}, candidate {}",
                k / m,
                k % m
            )));
        }
        Ok(UtilityProfile { n, m, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::invalid(format!(
                "voter {i} has {} utilities, expected {m}",
                rows[i].len()
            )));
        }
        Self::new(n, m, rows.into_iter().flatten().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, voter: usize, candidate: usize) -> f64 {
        self.data[voter * self.m + candidate]
    }

    pub fn row(&self, voter: usize) -> &[f64] {
        &self.data[voter * self.m..(voter + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.m)
    }

    /// Row-major entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_voters(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let data = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(self.n, self.m, data)
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_candidates(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m)?;
        let data = self
            .rows()
            .flat_map(|row| perm.iter().map(move |&j| row[j]))
            .collect();
        Self::new(self.n, self.m, data)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.n, self.m, self.data.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<Vec<f64>>> for UtilityProfile {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<UtilityProfile> for Vec<Vec<f64>> {
    fn from(u: UtilityProfile) -> Self {
        u.to_rows()
    }
}

pub(crate) fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if perm.len() != len {
        return Err(Error::invalid(format!(
            "permutation of length {} for {len} items",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= len || seen[p] {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// An election: `n` voters, `m` candidates and their true utilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Election {
    utilities: UtilityProfile,
}

impl Election {
    pub fn new(utilities: UtilityProfile) -> Self {
        Election { utilities }
    }

    pub fn n(&self) -> usize {
        self.utilities.n()
    }

    pub fn m(&self) -> usize {
        self.utilities.m()
    }

    pub fn utilities(&self) -> &UtilityProfile {
        &self.utilities
    }
}

/// Strict ranking of one voter: `ranks[j]` is the position (1 = best) of
/// candidate `j`.
pub type Ranking = Vec<u32>;

/// Strict rankings for all voters, row-major `n×m` positions in `1..=m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankingProfile {
    n: usize,
    m: usize,
    ranks: Vec<u32>,
}

impl RankingProfile {
    pub fn new(n: usize, m: usize, ranks: Vec<u32>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::invalid("ranking profile needs n, m >= 1"));
        }
        if ranks.len() != n * m {
            return Err(Error::invalid(format!(
                "{} ranks for an {n}x{m} profile",
                ranks.len()
            )));
        }
        for (i, row) in ranks.chunks(m).enumerate() {
            let mut seen = vec![false; m];
            for &r in row {
                if r == 0 || r as usize > m || seen[r as usize - 1] {
                    return Err(Error::invalid(format!(
                        "voter {i}: {row:?} is not a bijection onto 1..={m}"
                    )));
                }
                seen[r as usize - 1] = true;
            }
        }
        Ok(RankingProfile { n, m, ranks })
    }

    pub fn from_rows(rows: &[Ranking]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged ranking rows"));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    /// Builds a profile from preference orders: `orders[i]` lists voter `i`'s
    /// candidates from best to worst.
    pub fn from_orders(orders: &[Vec<usize>]) -> Result<Self> {
        let m = orders.first().map_or(0, Vec::len);
        let mut ranks = Vec::with_capacity(orders.len() * m);
        for order in orders {
            if order.len() != m {
                return Err(Error::invalid("ragged preference orders"));
            }
            let mut row = vec![0u32; m];
            for (pos, &c) in order.iter().enumerate() {
                if c >= m {
                    return Err(Error::OutOfRange {
                        what: "candidate",
                        index: c,
                        len: m,
                    });
                }
                row[c] = pos as u32 + 1;
            }
            ranks.extend(row);
        }
        Self::new(orders.len(), m, ranks)
    }

    pub fn from_utilities(u: &UtilityProfile) -> Result<Self> {
        let mut ranks = Vec::with_capacity(u.n() * u.m());
        for row in u.rows() {
            ranks.extend(utilities_to_ranking(row)?);
        }
        Self::new(u.n(), u.m(), ranks)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rank(&self, voter: usize, candidate: usize) -> u32 {
        self.ranks[voter * self.m + candidate]
    }

    pub fn row(&self, voter: usize) -> &[u32] {
        &self.ranks[voter * self.m..(voter + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.ranks.chunks(self.m)
    }

    /// Candidates of `voter` from best to worst.
    pub fn order(&self, voter: usize) -> Vec<usize> {
        let mut order = vec![0; self.m];
        for (c, &r) in self.row(voter).iter().enumerate() {
            order[r as usize - 1] = c;
        }
        order
    }

    pub fn prefers(&self, voter: usize, a: usize, b: usize) -> bool {
        self.rank(voter, a) < self.rank(voter, b)
    }

    pub fn permute_voters(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let ranks = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(self.n, self.m, ranks)
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_candidates(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m)?;
        let ranks = self
            .rows()
            .flat_map(|row| perm.iter().map(move |&j| row[j]))
            .collect();
        Self::new(self.n, self.m, ranks)
    }
}

/// How a preference profile was elicited.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Cardinal,
    RankingDerived,
}

/// Elicited ballots `σ`: `score(i, j)` is voter `i`'s ballot entry for
/// candidate `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceProfile {
    n: usize,
    m: usize,
    scores: Vec<f64>,
    kind: ProfileKind,
}

impl PreferenceProfile {
    pub fn cardinal(n: usize, m: usize, scores: Vec<f64>) -> Result<Self> {
        let u = UtilityProfile::new(n, m, scores)?;
        Ok(PreferenceProfile {
            n,
            m,
            scores: u.data,
            kind: ProfileKind::Cardinal,
        })
    }

    /// Truthful cardinal ballots.
    pub fn from_utilities(u: &UtilityProfile) -> Self {
        PreferenceProfile {
            n: u.n(),
            m: u.m(),
            scores: u.data().to_vec(),
            kind: ProfileKind::Cardinal,
        }
    }

    /// Normalised Borda ballots, `1 - r/m` for a candidate ranked `r`.
    pub fn from_ranking(r: &RankingProfile) -> Self {
        let m = r.m();
        let scores = r
            .ranks
            .iter()
            .map(|&rank| 1.0 - rank as f64 / m as f64)
            .collect();
        PreferenceProfile {
            n: r.n(),
            m,
            scores,
            kind: ProfileKind::RankingDerived,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn score(&self, voter: usize, candidate: usize) -> f64 {
        self.scores[voter * self.m + candidate]
    }

    pub fn row(&self, voter: usize) -> &[f64] {
        &self.scores[voter * self.m..(voter + 1) * self.m]
    }

    /// Row-major entries.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Same shape and kind, new entries.
    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        let mut p = Self::cardinal(self.n, self.m, scores)?;
        p.kind = self.kind;
        Ok(p)
    }

    pub fn permute_voters(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let scores = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        self.with_scores(scores)
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_candidates(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m)?;
        let scores = self
            .scores
            .chunks(self.m)
            .flat_map(|row| perm.iter().map(move |&j| row[j]))
            .collect();
        self.with_scores(scores)
    }
}

/// Ranks one voter's candidates by decreasing utility. Equal utilities are
/// ordered by candidate index, lower index ranked better.
pub fn utilities_to_ranking(row: &[f64]) -> Result<Ranking> {
    if row.is_empty() {
        return Err(Error::invalid("cannot rank an empty utility row"));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot rank non-finite utilities"));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    // Stable sort keeps index order among ties.
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0u32; row.len()];
    for (pos, c) in order.into_iter().enumerate() {
        ranks[c] = pos as u32 + 1;
    }
    Ok(ranks)
}

/// Normalised Borda score `1 - r/m` of rank `r` among `m` candidates.
pub fn ranking_to_borda(rank: u32, m: usize) -> Result<f64> {
    if rank == 0 || rank as usize > m {
        return Err(Error::OutOfRange {
            what: "rank",
            index: rank as usize,
            len: m,
        });
    }
    Ok(1.0 - rank as f64 / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WelfareKind {
    Utilitarian,
    Nash,
    Rawlsian,
}

impl WelfareKind {
    pub const ALL: [WelfareKind; 3] = [
        WelfareKind::Utilitarian,
        WelfareKind::Nash,
        WelfareKind::Rawlsian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WelfareKind::Utilitarian => "utilitarian",
            WelfareKind::Nash => "nash",
            WelfareKind::Rawlsian => "rawlsian",
        }
    }
}

impl std::str::FromStr for WelfareKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utilitarian" | "util" => Ok(WelfareKind::Utilitarian),
            "nash" => Ok(WelfareKind::Nash),
            "rawlsian" | "rawls" => Ok(WelfareKind::Rawlsian),
            other => Err(Error::invalid(format!("unknown welfare kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for WelfareKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Social welfare of candidate `j`: column sum, product or minimum.
pub fn welfare(u: &UtilityProfile, kind: WelfareKind, j: usize) -> Result<f64> {
    if j >= u.m() {
        return Err(Error::OutOfRange {
            what: "candidate",
            index: j,
            len: u.m(),
        });
    }
    let column = (0..u.n()).map(|i| u.get(i, j));
    Ok(match kind {
        WelfareKind::Utilitarian => column.sum(),
        WelfareKind::Nash => column.product(),
        WelfareKind::Rawlsian => column.fold(f64::INFINITY, f64::min),
    })
}

/// `log` of the Nash welfare of candidate `j`, each utility floored at
/// [`NASH_LOG_FLOOR`]. Non-positive utilities are rejected.
pub fn log_nash_welfare(u: &UtilityProfile, j: usize) -> Result<f64> {
    if j >= u.m() {
        return Err(Error::OutOfRange {
            what: "candidate",
            index: j,
            len: u.m(),
        });
    }
    (0..u.n())
        .map(|i| {
            let v = u.get(i, j);
            if v <= 0.0 {
                Err(Error::invalid(format!(
                    "log-space Nash welfare needs positive utilities (voter {i} has {v})"
                )))
            } else {
                Ok(v.max(NASH_LOG_FLOOR).ln())
            }
        })
        .sum()
}

/// Welfare of every candidate.
pub fn column_welfare(u: &UtilityProfile, kind: WelfareKind) -> Vec<f64> {
    (0..u.m())
        .map(|j| welfare(u, kind, j).expect("candidate in range"))
        .collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Welfare-maximising candidate, lowest index on ties.
pub fn welfare_winner(u: &UtilityProfile, kind: WelfareKind) -> usize {
    argmax(&column_welfare(u, kind))
}

/// A probability distribution over candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pscf {
    probs: Vec<f64>,
}

impl Pscf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("{probs:?} has a negative or non-finite entry")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Pscf { probs })
    }

    pub fn uniform(m: usize) -> Self {
        Pscf {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[j] = 1.0;
        Pscf { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    /// Most probable candidate, lowest index on ties.
    pub fn winner(&self) -> usize {
        argmax(&self.probs)
    }

    /// `Σ_j p(c_j) · w_j`.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, w)| p * w).sum()
    }
}

/// Head-to-head counts: `count(a, b)` voters rank `a` above `b`.
#[derive(Clone, Debug)]
pub struct PairwiseMatrix {
    m: usize,
    n: usize,
    counts: Vec<usize>,
}

impl PairwiseMatrix {
    pub fn new(profile: &RankingProfile) -> Self {
        let m = profile.m();
        let mut counts = vec![0; m * m];
        for row in profile.rows() {
            for a in 0..m {
                for b in 0..m {
                    if row[a] < row[b] {
                        counts[a * m + b] += 1;
                    }
                }
            }
        }
        PairwiseMatrix {
            m,
            n: profile.n(),
            counts,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self, a: usize, b: usize) -> usize {
        self.counts[a * self.m + b]
    }

    /// Strict majority: more voters rank `a` above `b` than the reverse.
    pub fn beats(&self, a: usize, b: usize) -> bool {
        self.count(a, b) > self.count(b, a)
    }

    pub fn condorcet_winner(&self) -> Option<usize> {
        (0..self.m).find(|&a| (0..self.m).all(|b| a == b || self.beats(a, b)))
    }
}

/// Smallest nonempty set whose members each beat every outsider by strict
/// pairwise majority. Returned sorted.
///
/// A candidate belongs to the set iff it reaches every other candidate along
/// a chain of "not beaten by" relations.
pub fn smith_set(profile: &RankingProfile) -> Vec<usize> {
    let pm = PairwiseMatrix::new(profile);
    let m = pm.m();
    let mut reach = vec![false; m * m];
    for a in 0..m {
        for b in 0..m {
            reach[a * m + b] = a == b || !pm.beats(b, a);
        }
    }
    for k in 0..m {
        for a in 0..m {
            if reach[a * m + k] {
                for b in 0..m {
                    if reach[k * m + b] {
                        reach[a * m + b] = true;
                    }
                }
            }
        }
    }
    (0..m)
        .filter(|&a| (0..m).all(|b| reach[a * m + b]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(rows: &[&[f64]]) -> UtilityProfile {
        UtilityProfile::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn ranking_from_utilities() {
        assert_eq!(utilities_to_ranking(&[0.9, 0.1, 0.5]).unwrap(), vec![1, 3, 2]);
        assert_eq!(utilities_to_ranking(&[0.5, 0.5]).unwrap(), vec![1, 2]);
        assert_eq!(utilities_to_ranking(&[1.0]).unwrap(), vec![1]);
        assert!(utilities_to_ranking(&[]).is_err());
    }

    #[test]
    fn borda_scores() {
        assert_eq!(ranking_to_borda(1, 4).unwrap(), 0.75);
        assert_eq!(ranking_to_borda(7, 7).unwrap(), 0.0);
        assert_eq!(ranking_to_borda(1, 2).unwrap(), 0.5);
        assert_eq!(ranking_to_borda(2, 2).unwrap(), 0.0);
        assert!(ranking_to_borda(0, 3).is_err());
        assert!(ranking_to_borda(4, 3).is_err());
    }

    #[test]
    fn welfare_kinds() {
        let p = u(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(welfare(&p, WelfareKind::Utilitarian, 1).unwrap(), 6.0);
        assert_eq!(welfare(&p, WelfareKind::Nash, 0).unwrap(), 3.0);
        assert_eq!(welfare(&p, WelfareKind::Rawlsian, 1).unwrap(), 2.0);
        assert!(welfare(&p, WelfareKind::Rawlsian, 2).is_err());
    }

    #[test]
    fn log_nash_rejects_non_positive() {
        let p = u(&[&[0.5, -0.1], &[0.25, 0.3]]);
        assert!((log_nash_welfare(&p, 0).unwrap() - (0.125f64).ln()).abs() < 1e-12);
        assert!(log_nash_welfare(&p, 1).is_err());
    }

    #[test]
    fn smith_set_cases() {
        let single = RankingProfile::new(2, 1, vec![1, 1]).unwrap();
        assert_eq!(smith_set(&single), vec![0]);

        let cycle = RankingProfile::from_orders(&[vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]]).unwrap();
        assert_eq!(smith_set(&cycle), vec![0, 1, 2]);

        let cw = RankingProfile::from_orders(&[vec![1, 0, 2], vec![1, 2, 0], vec![0, 1, 2]]).unwrap();
        assert_eq!(PairwiseMatrix::new(&cw).condorcet_winner(), Some(1));
        assert_eq!(smith_set(&cw), vec![1]);
    }

    #[test]
    fn pairwise_tie_keeps_both_in_smith_set() {
        let tie = RankingProfile::from_orders(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(smith_set(&tie), vec![0, 1]);
    }

    #[test]
    fn invalid_ranking_rejected() {
        assert!(RankingProfile::new(1, 3, vec![1, 1, 2]).is_err());
        assert!(RankingProfile::new(1, 2, vec![1, 3]).is_err());
    }

    #[test]
    fn pscf_validation() {
        assert!(Pscf::new(vec![0.5, 0.5]).is_ok());
        assert!(Pscf::new(vec![0.5, 0.6]).is_err());
        assert!(Pscf::new(vec![1.5, -0.5]).is_err());
        assert_eq!(Pscf::new(vec![0.4, 0.4, 0.2]).unwrap().winner(), 0);
    }

    #[test]
    fn candidate_permutation_moves_columns() {
        let p = u(&[&[1.0, 2.0, 3.0]]);
        let q = p.permute_candidates(&[2, 0, 1]).unwrap();
        assert_eq!(q.row(0), &[3.0, 1.0, 2.0]);
        assert!(p.permute_candidates(&[0, 0, 1]).is_err());
    }
}
