use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    LayerNorm { input: Var, rstd: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    MaskedSoftmax(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    Transpose(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode record of tensor operations.
///
/// Leaves are either variables (gradients requested) or constants. A node
/// needs a gradient iff one of its inputs does, so frozen parameters and
/// detached values cost nothing during [`Tape::backward`]. Records are
/// appended in evaluation order, which is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to leaf `v`, or `None` when `v`
    /// is not a leaf or does not influence the output differentiably.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "leaf" });
        }
        Ok(self.push_unchecked(value, Op::Leaf, requires_grad))
    }

    /// Copy of `v` with the gradient path cut.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape checked")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(AutodiffError::Shape(format!(
                "matmul: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            out.data_mut(),
        );
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    fn check_row(&self, op: &str, a: Var, row: Var) -> Result<()> {
        let [_, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(AutodiffError::Shape(format!(
                "{op}: row operand {:?} for matrix {:?}",
                self.shape(row),
                self.shape(a)
            )));
        }
        Ok(())
    }

    /// `a + row` with the `1×c` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        let c = r.len();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `a * row` with the `1×c` row broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        let c = r.len();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x *= y;
            }
        }
        self.push(out, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, value: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + value);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Natural logarithm; non-positive inputs are an error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::Domain("log of non-positive value"));
        }
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(floor));
        self.push(out, Op::ClampMin(a, floor), &[a])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AutodiffError::Shape("mean of empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Normalises every row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if c == 0 {
            return Err(AutodiffError::Shape("layer_norm over zero features".into()));
        }
        let mut out = t.clone();
        let mut rstd = Vec::with_capacity(t.rows());
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * r;
            }
            rstd.push(r);
        }
        self.push(out, Op::LayerNorm { input: a, rstd }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Shape("concat_cols of nothing".into()));
        };
        let rows = self.shape(first)[0];
        if let Some(bad) = parts.iter().find(|v| self.shape(**v)[0] != rows) {
            return Err(AutodiffError::Shape(format!(
                "concat_cols: row count {} vs {rows}",
                self.shape(*bad)[0]
            )));
        }
        let cols: usize = parts.iter().map(|v| self.shape(*v)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in parts {
                data.extend_from_slice(self.value(*v).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Shape("concat_rows of nothing".into()));
        };
        let cols = self.shape(first)[1];
        if let Some(bad) = parts.iter().find(|v| self.shape(**v)[1] != cols) {
            return Err(AutodiffError::Shape(format!(
                "concat_rows: column count {} vs {cols}",
                self.shape(*bad)[1]
            )));
        }
        let rows: usize = parts.iter().map(|v| self.shape(*v)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in parts {
            data.extend_from_slice(self.value(*v).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Shape(format!(
                "gather_rows: index {bad} out of {rows} rows"
            )));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(src.row_slice(i));
        }
        let out = Tensor::new(index.len(), cols, data)?;
        self.push(out, Op::GatherRows(a, index), &[a])
    }

    /// Contiguous block of rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let index: Arc<[usize]> = (start..start + len).collect();
        self.gather_rows(a, index)
    }

    /// Sums the rows of `a` into `num_segments` buckets; row `k` goes to
    /// bucket `segment[k]`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if segment.len() != rows {
            return Err(AutodiffError::Shape(format!(
                "segment_sum: {} segment ids for {rows} rows",
                segment.len()
            )));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= num_segments) {
            return Err(AutodiffError::Shape(format!(
                "segment_sum: segment {bad} out of {num_segments}"
            )));
        }
        let mut out = Tensor::zeros(num_segments, cols);
        let src = self.value(a);
        {
            let dst = out.data_mut();
            for (k, &s) in segment.iter().enumerate() {
                let from = src.row_slice(k);
                for (d, x) in dst[s * cols..(s + 1) * cols].iter_mut().zip(from) {
                    *d += x;
                }
            }
        }
        self.push(out, Op::SegmentSum(a, segment), &[a])
    }

    /// Softmax of a `k×1` column taken independently within each segment.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<[usize]>) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if cols != 1 || segment.len() != rows {
            return Err(AutodiffError::Shape(format!(
                "segment_softmax: input [{rows}, {cols}] with {} segment ids",
                segment.len()
            )));
        }
        let num = segment.iter().copied().max().map_or(0, |s| s + 1);
        let x = self.value(a).data();
        let mut max = vec![f64::NEG_INFINITY; num];
        for (&v, &s) in x.iter().zip(segment.iter()) {
            max[s] = max[s].max(v);
        }
        let mut e: Vec<f64> = x
            .iter()
            .zip(segment.iter())
            .map(|(&v, &s)| (v - max[s]).exp())
            .collect();
        let mut total = vec![0.0; num];
        for (&v, &s) in e.iter().zip(segment.iter()) {
            total[s] += v;
        }
        for (v, &s) in e.iter_mut().zip(segment.iter()) {
            *v /= total[s];
        }
        self.push(Tensor::column(e), Op::SegmentSoftmax(a, segment), &[a])
    }

    /// Softmax over the unmasked entries of a `1×k` row; masked entries get
    /// probability exactly zero.
    pub fn masked_softmax(&mut self, a: Var, keep: Arc<[bool]>) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if rows != 1 || keep.len() != cols {
            return Err(AutodiffError::Shape(format!(
                "masked_softmax: input [{rows}, {cols}] with mask of {}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(AutodiffError::Domain("softmax with every entry masked"));
        }
        let x = self.value(a).data();
        let max = x
            .iter()
            .zip(keep.iter())
            .filter(|(_, &k)| k)
            .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v));
        let mut e: Vec<f64> = x
            .iter()
            .zip(keep.iter())
            .map(|(&v, &k)| if k { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= total);
        self.push(Tensor::row(e), Op::MaskedSoftmax(a), &[a])
    }

    /// Softmax of every row independently.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if c == 0 {
            return Err(AutodiffError::Shape("softmax over zero columns".into()));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(AutodiffError::Shape(format!(
                "reshape {:?} to [{rows}, {cols}]",
                t.shape()
            )));
        }
        let out = t.clone().reshaped(rows, cols);
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let shape = self.shape(output);
        if shape != [1, 1] {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite { op: node.op.name() });
            }
            self.propagate(node, &g, &mut grads);
            // Only leaf gradients are reported; interior ones are released.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, g.data(), false, tb.data(), true, 0.0, da.data_mut());
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.pass(grads, *a, || g.clone());
                self.pass(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.pass(grads, *a, || g.clone());
                self.pass(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.pass(grads, *a, || zip(g, tb, |d, y| d * y));
                self.pass(grads, *b, || zip(g, ta, |d, x| d * x));
            }
            Op::AddRow(a, row) => {
                self.pass(grads, *a, || g.clone());
                self.pass(grads, *row, || column_sums(g));
            }
            Op::MulRow(a, row) => {
                let ta = self.value(*a);
                let tr = self.value(*row);
                self.pass(grads, *a, || {
                    let mut out = g.clone();
                    let c = tr.cols();
                    for chunk in out.data_mut().chunks_mut(c.max(1)) {
                        for (x, r) in chunk.iter_mut().zip(tr.data()) {
                            *x *= r;
                        }
                    }
                    out
                });
                self.pass(grads, *row, || column_sums(&zip(g, ta, |d, x| d * x)));
            }
            Op::Scale(a, f) => self.pass(grads, *a, || g.map(|d| d * f)),
            Op::AddScalar(a) => self.pass(grads, *a, || g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.pass(grads, *a, || zip(g, x, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.pass(grads, *a, || {
                    zip(g, x, |d, x| if x > 0.0 { d } else { slope * d })
                });
            }
            Op::Sigmoid(a) => self.pass(grads, *a, || zip(g, y, |d, s| d * s * (1.0 - s))),
            Op::Log(a) => {
                let x = self.value(*a);
                self.pass(grads, *a, || zip(g, x, |d, x| d / x));
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                self.pass(grads, *a, || {
                    zip(g, x, |d, x| if x > *floor { d } else { 0.0 })
                });
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.pass(grads, *a, || Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                let n = (r * c) as f64;
                self.pass(grads, *a, || Tensor::full(r, c, g.item() / n));
            }
            Op::LayerNorm { input, rstd } => {
                self.pass(grads, *input, || {
                    let c = y.cols();
                    let mut out = g.clone();
                    for ((row, xhat), r) in out
                        .data_mut()
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(rstd)
                    {
                        let mean_g = row.iter().sum::<f64>() / c as f64;
                        let mean_gx =
                            row.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / c as f64;
                        for (d, x) in row.iter_mut().zip(xhat) {
                            *d = r * (*d - mean_g - x * mean_gx);
                        }
                    }
                    out
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for v in parts {
                    let [rows, cols] = self.shape(*v);
                    let start = offset;
                    self.pass(grads, *v, || {
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[start..start + cols]);
                        }
                        Tensor::new(rows, cols, data).expect("shape")
                    });
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for v in parts {
                    let [rows, _] = self.shape(*v);
                    let start = offset;
                    self.pass(grads, *v, || {
                        let data = g.data()[start * cols..(start + rows) * cols].to_vec();
                        Tensor::new(rows, cols, data).expect("shape")
                    });
                    offset += rows;
                }
            }
            Op::GatherRows(a, index) => {
                let [rows, cols] = self.shape(*a);
                self.pass(grads, *a, || {
                    let mut out = Tensor::zeros(rows, cols);
                    let dst = out.data_mut();
                    for (k, &i) in index.iter().enumerate() {
                        for (d, x) in dst[i * cols..(i + 1) * cols].iter_mut().zip(g.row_slice(k)) {
                            *d += x;
                        }
                    }
                    out
                });
            }
            Op::SegmentSum(a, segment) => {
                let cols = g.cols();
                self.pass(grads, *a, || {
                    let mut data = Vec::with_capacity(segment.len() * cols);
                    for &s in segment.iter() {
                        data.extend_from_slice(g.row_slice(s));
                    }
                    Tensor::new(segment.len(), cols, data).expect("shape")
                });
            }
            Op::SegmentSoftmax(a, segment) => {
                self.pass(grads, *a, || {
                    let num = segment.iter().copied().max().map_or(0, |s| s + 1);
                    let mut dot = vec![0.0; num];
                    for ((&d, &p), &s) in g.data().iter().zip(y.data()).zip(segment.iter()) {
                        dot[s] += d * p;
                    }
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .zip(segment.iter())
                        .map(|((&d, &p), &s)| p * (d - dot[s]))
                        .collect();
                    Tensor::column(data)
                });
            }
            Op::MaskedSoftmax(a) => {
                self.pass(grads, *a, || {
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(d, p)| d * p).sum();
                    zip(g, y, |d, p| p * (d - dot))
                });
            }
            Op::SoftmaxRows(a) => {
                self.pass(grads, *a, || {
                    let c = y.cols();
                    let mut out = g.clone();
                    for (row, p) in out.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let dot: f64 = row.iter().zip(p).map(|(d, p)| d * p).sum();
                        for (d, p) in row.iter_mut().zip(p) {
                            *d = p * (*d - dot);
                        }
                    }
                    out
                });
            }
            Op::Reshape(a) => {
                let [r, c] = self.shape(*a);
                self.pass(grads, *a, || g.clone().reshaped(r, c));
            }
            Op::Transpose(a) => self.pass(grads, *a, || g.transpose()),
        }
    }

    fn pass(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.wants(v) {
            accumulate(grads, v, f());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape")
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c.max(1)) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::row(out)
}
