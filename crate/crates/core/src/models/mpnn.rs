use rand::Rng;

use super::graph::GraphBatch;
use super::layers::NormMlp;
use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::{Error, Result};

/// One round of edge update followed by node update.
#[derive(Clone, Debug)]
pub(crate) struct MpLayer {
    /// `ϕ_e(h_voter, h_candidate, h_edge)`.
    edge: NormMlp,
    /// `ψ(h_target, h_source, h_edge)`, shared by both message directions.
    message: NormMlp,
    /// `ϕ_v(h_node, Σ messages)`.
    node: NormMlp,
}

/// Stack of message-passing layers over a [`GraphBatch`].
#[derive(Clone, Debug)]
pub(crate) struct MessagePassing {
    layers: Vec<MpLayer>,
    name: String,
}

impl MessagePassing {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        layers: usize,
        node_width: usize,
        edge_width: usize,
    ) -> Self {
        let (dn, de) = (node_width, edge_width);
        let layers = (0..layers)
            .map(|l| MpLayer {
                edge: NormMlp::new(
                    store,
                    rng,
                    &format!("{name}.{l}.edge"),
                    &[("voter", dn), ("candidate", dn), ("edge", de)],
                    de,
                ),
                message: NormMlp::new(
                    store,
                    rng,
                    &format!("{name}.{l}.message"),
                    &[("target", dn), ("source", dn), ("edge", de)],
                    dn,
                ),
                node: NormMlp::new(
                    store,
                    rng,
                    &format!("{name}.{l}.node"),
                    &[("node", dn), ("messages", dn)],
                    dn,
                ),
            })
            .collect();
        MessagePassing {
            layers,
            name: name.to_string(),
        }
    }

    /// Runs every layer; `h` is `N×node_width`, `e` is `P×edge_width`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        mut h: Var,
        mut e: Var,
    ) -> Result<(Var, Var)> {
        let degree = tape.constant(batch.degree().clone())?;
        for (l, layer) in self.layers.iter().enumerate() {
            let wrap = |err: Error| {
                Error::Model(format!("{} layer {l}: {err}", self.name))
            };
            (h, e) = layer
                .forward(tape, bound, batch, h, e, degree)
                .map_err(wrap)?;
        }
        Ok((h, e))
    }
}

impl MpLayer {
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &GraphBatch,
        h: Var,
        e: Var,
        degree: Var,
    ) -> Result<(Var, Var)> {
        // Edge update. Node projections are computed once per node and then
        // gathered onto the pairs.
        let first = &self.edge.first;
        let pv = first.project(tape, bound, 0, h)?;
        let pv = tape.gather_rows(pv, batch.pair_voter().clone())?;
        let pc = first.project(tape, bound, 1, h)?;
        let pc = tape.gather_rows(pc, batch.pair_cand().clone())?;
        let pe = first.project(tape, bound, 2, e)?;
        let pre = tape.add(pv, pc)?;
        let pre = tape.add(pre, pe)?;
        let pre = tape.add_row(pre, bound.var(first.bias))?;
        let hidden = self.edge.hidden(tape, bound, pre)?;
        let e = self.edge.second.forward(tape, bound, &[hidden])?;

        // Messages in both directions, aggregated before the second linear
        // map: Σ_k (a_k W + b) = (Σ_k a_k) W + deg·b.
        let first = &self.message.first;
        let pt = first.project(tape, bound, 0, h)?;
        let pt = tape.gather_rows(pt, batch.msg_target().clone())?;
        let ps = first.project(tape, bound, 1, h)?;
        let ps = tape.gather_rows(ps, batch.msg_source().clone())?;
        let pe = first.project(tape, bound, 2, e)?;
        let pe = tape.gather_rows(pe, batch.msg_pair().clone())?;
        let pre = tape.add(pt, ps)?;
        let pre = tape.add(pre, pe)?;
        let pre = tape.add_row(pre, bound.var(first.bias))?;
        let hidden = self.message.hidden(tape, bound, pre)?;
        let summed = tape.segment_sum(hidden, batch.msg_target().clone(), batch.num_nodes())?;
        let second = &self.message.second;
        let agg = second.project(tape, bound, 0, summed)?;
        let bias = tape.matmul(degree, bound.var(second.bias))?;
        let agg = tape.add(agg, bias)?;

        let h = self.node.forward(tape, bound, &[h, agg])?;
        Ok((h, e))
    }
}
