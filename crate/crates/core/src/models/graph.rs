use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::election::PreferenceProfile;

/// Complete bipartite voter/candidate graph of one election.
///
/// Nodes `0..n` are voters and `n..n+m` candidates. Pair `i*m + j` joins
/// voter `i` and candidate `j` and carries the ballot entry `σ_i(c_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectionGraph {
    n: usize,
    m: usize,
    edge_features: Vec<f64>,
}

/// One-hot node label of a voter.
pub const VOTER_FEATURE: [f64; 2] = [1.0, 0.0];
/// One-hot node label of a candidate.
pub const CANDIDATE_FEATURE: [f64; 2] = [0.0, 1.0];

pub fn build_ebg(profile: &PreferenceProfile) -> ElectionGraph {
    ElectionGraph {
        n: profile.n(),
        m: profile.m(),
        edge_features: profile.scores().to_vec(),
    }
}

impl ElectionGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        self.n + self.m
    }

    pub fn num_pairs(&self) -> usize {
        self.n * self.m
    }

    /// `(n+m)×2` one-hot node labels.
    pub fn node_features(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.num_nodes());
        for _ in 0..self.n {
            data.extend_from_slice(&VOTER_FEATURE);
        }
        for _ in 0..self.m {
            data.extend_from_slice(&CANDIDATE_FEATURE);
        }
        Tensor::new(self.num_nodes(), 2, data).expect("two columns per node")
    }

    /// Undirected pairs as `(voter node, candidate node)`, voter-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.m).map(move |j| (i, self.n + j)))
            .collect()
    }

    pub fn edge_features(&self) -> &[f64] {
        &self.edge_features
    }

    pub fn edge_feature(&self, voter: usize, candidate: usize) -> f64 {
        self.edge_features[voter * self.m + candidate]
    }
}

/// Placement of one election inside a [`GraphBatch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElectionSpan {
    pub n: usize,
    pub m: usize,
    /// First node (voter 0) of the election.
    pub node_offset: usize,
    /// First pair of the election.
    pub pair_offset: usize,
    /// First row of the election in the candidate readout.
    pub cand_offset: usize,
}

impl ElectionSpan {
    pub fn voter_node(&self, i: usize) -> usize {
        self.node_offset + i
    }

    pub fn candidate_node(&self, j: usize) -> usize {
        self.node_offset + self.n + j
    }

    pub fn pair(&self, i: usize, j: usize) -> usize {
        self.pair_offset + i * self.m + j
    }
}

/// Disjoint union of election graphs with the index vectors used by the
/// message-passing networks.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    spans: Vec<ElectionSpan>,
    num_nodes: usize,
    num_voters: usize,
    node_features: Tensor,
    edge_features: Tensor,
    pair_voter: Arc<[usize]>,
    pair_cand: Arc<[usize]>,
    /// Global voter ordinal (0..num_voters) of every pair.
    pair_voter_ordinal: Arc<[usize]>,
    /// Targets of both message directions: candidates first, then voters.
    msg_target: Arc<[usize]>,
    /// Sources matching `msg_target`.
    msg_source: Arc<[usize]>,
    /// Pair index of every message.
    msg_pair: Arc<[usize]>,
    degree: Tensor,
    cand_nodes: Arc<[usize]>,
    cand_election: Arc<[usize]>,
}

impl GraphBatch {
    pub fn new(graphs: &[&ElectionGraph]) -> Self {
        let mut spans = Vec::with_capacity(graphs.len());
        let (mut nodes, mut pairs, mut cands, mut voters) = (0, 0, 0, 0);
        for g in graphs {
            spans.push(ElectionSpan {
                n: g.n,
                m: g.m,
                node_offset: nodes,
                pair_offset: pairs,
                cand_offset: cands,
            });
            nodes += g.num_nodes();
            pairs += g.num_pairs();
            cands += g.m;
            voters += g.n;
        }
        let mut node_feat = Vec::with_capacity(2 * nodes);
        let mut degree = vec![0.0; nodes];
        let mut edge = Vec::with_capacity(pairs);
        let mut pair_voter = Vec::with_capacity(pairs);
        let mut pair_cand = Vec::with_capacity(pairs);
        let mut pair_ord = Vec::with_capacity(pairs);
        let mut cand_nodes = Vec::with_capacity(cands);
        let mut cand_election = Vec::with_capacity(cands);
        let mut voter_base = 0;
        for (e, (g, s)) in graphs.iter().zip(&spans).enumerate() {
            for _ in 0..g.n {
                node_feat.extend_from_slice(&VOTER_FEATURE);
            }
            for _ in 0..g.m {
                node_feat.extend_from_slice(&CANDIDATE_FEATURE);
            }
            for i in 0..g.n {
                degree[s.voter_node(i)] = g.m as f64;
                for j in 0..g.m {
                    pair_voter.push(s.voter_node(i));
                    pair_cand.push(s.candidate_node(j));
                    pair_ord.push(voter_base + i);
                }
            }
            for j in 0..g.m {
                degree[s.candidate_node(j)] = g.n as f64;
                cand_nodes.push(s.candidate_node(j));
                cand_election.push(e);
            }
            edge.extend_from_slice(&g.edge_features);
            voter_base += g.n;
        }
        let msg_target: Vec<usize> = pair_cand.iter().chain(&pair_voter).copied().collect();
        let msg_source: Vec<usize> = pair_voter.iter().chain(&pair_cand).copied().collect();
        let msg_pair: Vec<usize> = (0..pairs).chain(0..pairs).collect();
        GraphBatch {
            spans,
            num_nodes: nodes,
            num_voters: voters,
            node_features: Tensor::new(nodes, 2, node_feat).expect("two columns per node"),
            edge_features: Tensor::column(edge),
            pair_voter: pair_voter.into(),
            pair_cand: pair_cand.into(),
            pair_voter_ordinal: pair_ord.into(),
            msg_target: msg_target.into(),
            msg_source: msg_source.into(),
            msg_pair: msg_pair.into(),
            degree: Tensor::column(degree),
            cand_nodes: cand_nodes.into(),
            cand_election: cand_election.into(),
        }
    }

    pub fn from_profiles(profiles: &[&PreferenceProfile]) -> Self {
        let graphs: Vec<ElectionGraph> = profiles.iter().map(|p| build_ebg(p)).collect();
        let refs: Vec<&ElectionGraph> = graphs.iter().collect();
        Self::new(&refs)
    }

    pub fn spans(&self) -> &[ElectionSpan] {
        &self.spans
    }

    pub fn num_elections(&self) -> usize {
        self.spans.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_voter.len()
    }

    pub fn num_voters(&self) -> usize {
        self.num_voters
    }

    pub fn num_candidates(&self) -> usize {
        self.cand_nodes.len()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    /// `P×1` column of ballot entries in pair order.
    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn pair_voter(&self) -> &Arc<[usize]> {
        &self.pair_voter
    }

    pub fn pair_cand(&self) -> &Arc<[usize]> {
        &self.pair_cand
    }

    pub fn pair_voter_ordinal(&self) -> &Arc<[usize]> {
        &self.pair_voter_ordinal
    }

    pub fn msg_target(&self) -> &Arc<[usize]> {
        &self.msg_target
    }

    pub fn msg_source(&self) -> &Arc<[usize]> {
        &self.msg_source
    }

    pub fn msg_pair(&self) -> &Arc<[usize]> {
        &self.msg_pair
    }

    /// `N×1` column with the number of neighbours of every node.
    pub fn degree(&self) -> &Tensor {
        &self.degree
    }

    pub fn cand_nodes(&self) -> &Arc<[usize]> {
        &self.cand_nodes
    }

    /// Election index of every candidate readout row.
    pub fn cand_election(&self) -> &Arc<[usize]> {
        &self.cand_election
    }

    /// Splits a readout column (one entry per candidate) into per-election
    /// vectors.
    pub fn split_candidates(&self, column: &[f64]) -> Vec<Vec<f64>> {
        self.spans
            .iter()
            .map(|s| column[s.cand_offset..s.cand_offset + s.m].to_vec())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(n: usize, m: usize) -> PreferenceProfile {
        let scores = (0..n * m).map(|k| k as f64 / 10.0).collect();
        PreferenceProfile::cardinal(n, m, scores).unwrap()
    }

    #[test]
    fn ebg_structure() {
        let g = build_ebg(&profile(2, 2));
        assert_eq!(g.num_pairs(), 4);
        assert_eq!(
            g.node_features().data(),
            &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
        );
        assert_eq!(g.edge_feature(0, 1), 0.1);
        assert_eq!(build_ebg(&profile(3, 5)).num_pairs(), 15);
        assert!(g.pairs().iter().all(|&(v, c)| v < 2 && (2..4).contains(&c)));
    }

    #[test]
    fn batch_indices() {
        let (a, b) = (profile(2, 3), profile(3, 2));
        let batch = GraphBatch::from_profiles(&[&a, &b]);
        assert_eq!(batch.num_nodes(), 10);
        assert_eq!(batch.num_pairs(), 12);
        assert_eq!(batch.num_candidates(), 5);
        assert_eq!(&batch.cand_nodes()[..], &[2, 3, 4, 8, 9]);
        assert_eq!(&batch.cand_election()[..], &[0, 0, 0, 1, 1]);
        let s = batch.spans()[1];
        assert_eq!(batch.pair_voter()[s.pair(2, 1)], 7);
        assert_eq!(batch.pair_cand()[s.pair(2, 1)], 9);
        assert_eq!(batch.pair_voter_ordinal()[s.pair(2, 1)], 4);
        assert_eq!(batch.degree().data()[0], 3.0);
        assert_eq!(batch.degree().data()[8], 3.0);
        assert_eq!(batch.edge_features().data()[s.pair(1, 0)], b.score(1, 0));
    }
}
