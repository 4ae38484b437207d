use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Result;

/// Kaiming fan-in normal initialisation for a `fan_in×out` weight block.
fn kaiming(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(rows, cols, data).expect("shape from counts")
}

/// Affine map whose input is split into column blocks, each with its own
/// weight matrix. Equivalent to one linear layer on the concatenated input.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub parts: Vec<ParamId>,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: &[(&str, usize)],
        out: usize,
    ) -> Self {
        let fan_in: usize = inputs.iter().map(|(_, w)| w).sum();
        let parts = inputs
            .iter()
            .map(|(part, w)| {
                let pname = if inputs.len() == 1 {
                    format!("{name}.weight")
                } else {
                    format!("{name}.weight_{part}")
                };
                store.add(pname, kaiming(rng, *w, out, fan_in))
            })
            .collect();
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out));
        Linear { parts, bias }
    }

    pub fn single(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        out: usize,
    ) -> Self {
        Self::new(store, rng, name, &[("x", input)], out)
    }

    /// `Σ_k x_k W_k + b` with one input per weight block.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, xs: &[Var]) -> Result<Var> {
        debug_assert_eq!(xs.len(), self.parts.len());
        let mut acc: Option<Var> = None;
        for (x, w) in xs.iter().zip(&self.parts) {
            let y = tape.matmul(*x, bound.var(*w))?;
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y)?,
            });
        }
        let acc = acc.expect("at least one input block");
        Ok(tape.add_row(acc, bound.var(self.bias))?)
    }

    /// Projection through weight block `k` alone, without the bias.
    pub fn project(&self, tape: &mut Tape, bound: &BoundParams, k: usize, x: Var) -> Result<Var> {
        Ok(tape.matmul(x, bound.var(self.parts[k]))?)
    }
}

/// Row-wise layer normalisation with learned gain and shift.
#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(1, width, 1.0));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(1, width));
        LayerNorm { gain, shift }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let z = tape.layer_norm(x)?;
        let z = tape.mul_row(z, bound.var(self.gain))?;
        Ok(tape.add_row(z, bound.var(self.shift))?)
    }
}

/// `Linear → LayerNorm → ReLU → Linear`, the block used throughout the
/// message-passing networks.
#[derive(Clone, Debug)]
pub(crate) struct NormMlp {
    pub first: Linear,
    pub norm: LayerNorm,
    pub second: Linear,
}

impl NormMlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: &[(&str, usize)],
        out: usize,
    ) -> Self {
        let first = Linear::new(store, rng, &format!("{name}.0"), inputs, out);
        let norm = LayerNorm::new(store, &format!("{name}.norm"), out);
        let second = Linear::single(store, rng, &format!("{name}.1"), out, out);
        NormMlp {
            first,
            norm,
            second,
        }
    }

    /// Hidden activation `relu(norm(first(x)))` from an already summed
    /// pre-activation (bias included).
    pub fn hidden(&self, tape: &mut Tape, bound: &BoundParams, pre: Var) -> Result<Var> {
        let z = self.norm.forward(tape, bound, pre)?;
        Ok(tape.relu(z)?)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, xs: &[Var]) -> Result<Var> {
        let pre = self.first.forward(tape, bound, xs)?;
        let h = self.hidden(tape, bound, pre)?;
        self.second.forward(tape, bound, &[h])
    }
}

/// Plain MLP with LeakyReLU between layers and no normalisation.
#[derive(Clone, Debug)]
pub(crate) struct LeakyMlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl LeakyMlp {
    /// `widths` lists input width followed by each layer's output width.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        widths: &[usize],
        slope: f64,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::single(store, rng, &format!("{name}.{k}"), w[0], w[1]))
            .collect();
        LeakyMlp { layers, slope }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, &[h])?;
            if k + 1 < self.layers.len() {
                h = tape.leaky_relu(h, self.slope)?;
            }
        }
        Ok(h)
    }
}
