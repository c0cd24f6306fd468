//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation into an arena; parents always
//! precede children, so [`Tape::backward`] is a single reverse sweep that
//! accumulates vector-Jacobian products. The op set is exactly what the
//! model's forward pass needs; each op validates operand shapes and checks
//! its output for NaN/Inf, failing loudly with the op name.
//!
//! Stochastic pieces (RReLU negative slopes) are sampled during the forward
//! pass and recorded on the tape, so a backward sweep reuses them and the
//! whole computation is deterministic given the RNG seed.

use rand::Rng;

use crate::error::{EthError, Result};
use crate::geometry::{ATANH_EPS, BALL_EPS, SMALL_NORM_EPS};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    /// `n×d + 1×d`, the only row-broadcast addition (bias add).
    AddRowVec(NodeId, NodeId),
    /// `n×m + 1×1`.
    AddScalar(NodeId, NodeId),
    /// `n×m · 1×1`.
    MulScalar(NodeId, NodeId),
    /// Row `i` of the matrix scaled by entry `i` of an `n×1` column.
    MulColVec(NodeId, NodeId),
    ScaleConst(NodeId, f64),
    AddConst(NodeId),
    /// Feature-axis concatenation: rows of `a` and `b` joined pairwise.
    ConcatRows(NodeId, NodeId),
    MeanRows(NodeId),
    RowDot(NodeId, NodeId),
    /// Per-row L2 norm, `n×d -> n×1`.
    SqrtNorm(NodeId),
    BroadcastCol(NodeId),
    BroadcastRow(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    /// Effective per-element slopes (1 for nonnegative inputs) recorded at
    /// forward time.
    RRelu { x: NodeId, slopes: Tensor },
    ArctanhClamped(NodeId),
    /// Per-row population std (before the 1e-8 stabilizer) cached for the
    /// backward pass.
    LayerNorm { x: NodeId, sigma: Vec<f64> },
    Softplus(NodeId),
    /// `sqrt(max(x, 0))`.
    SqrtElem(NodeId),
    Recip(NodeId),
    /// `min(tanh(a), 1 - BALL_EPS) / a`, with limit 1 at a = 0.
    ExpMapScale(NodeId),
    GatherRows { x: NodeId, idx: Vec<usize> },
    ScatterMeanRows { x: NodeId, idx: Vec<usize>, counts: Vec<usize> },
    StackRows(Vec<NodeId>),
    SoftmaxCrossEntropy { logits: NodeId, probs: Tensor, targets: Vec<usize> },
    BinaryCrossEntropy { logits: NodeId, labels: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to the node, if one was recorded.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(EthError::numeric(name, "non-finite output".to_string()));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(id)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.node(*id).requires_grad)
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, false, "constant")
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(EthError::invalid(format!(
                "{name}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(EthError::invalid(format!(
                "matmul: inner dimensions differ, {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let value = va.matmul(vb);
        let rg = self.requires(&[a, b]);
        self.push(value, Op::Matmul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transposed();
        let rg = self.requires(&[a]);
        self.push(value, Op::Transpose(a), rg, "transpose")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.requires(&[a, b]);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.requires(&[a, b]);
        self.push(value, Op::Sub(a, b), rg, "sub")
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "hadamard")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.requires(&[a, b]);
        self.push(value, Op::Hadamard(a, b), rg, "hadamard")
    }

    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (va, vv) = (self.value(a), self.value(v));
        if vv.rows() != 1 || vv.cols() != va.cols() {
            return Err(EthError::invalid(format!(
                "add_row_vec: expected 1x{} bias, got {:?}",
                va.cols(),
                vv.shape()
            )));
        }
        let mut value = va.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        let rg = self.requires(&[a, v]);
        self.push(value, Op::AddRowVec(a, v), rg, "add_row_vec")
    }

    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(EthError::invalid("add_scalar: second operand must be 1x1"));
        }
        let k = self.value(s).scalar_value();
        let value = self.value(a).map(|x| x + k);
        let rg = self.requires(&[a, s]);
        self.push(value, Op::AddScalar(a, s), rg, "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(EthError::invalid("mul_scalar: second operand must be 1x1"));
        }
        let k = self.value(s).scalar_value();
        let value = self.value(a).map(|x| x * k);
        let rg = self.requires(&[a, s]);
        self.push(value, Op::MulScalar(a, s), rg, "mul_scalar")
    }

    pub fn mul_col_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (va, vv) = (self.value(a), self.value(v));
        if vv.cols() != 1 || vv.rows() != va.rows() {
            return Err(EthError::invalid(format!(
                "mul_col_vec: expected {}x1 column, got {:?}",
                va.rows(),
                vv.shape()
            )));
        }
        let mut value = va.clone();
        for i in 0..value.rows() {
            let s = vv.get(i, 0);
            for o in value.row_mut(i) {
                *o *= s;
            }
        }
        let rg = self.requires(&[a, v]);
        self.push(value, Op::MulColVec(a, v), rg, "mul_col_vec")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| x * k);
        let rg = self.requires(&[a]);
        self.push(value, Op::ScaleConst(a, k), rg, "scale")
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| x + k);
        let rg = self.requires(&[a]);
        self.push(value, Op::AddConst(a), rg, "add_const")
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(EthError::invalid(format!(
                "concat_rows: row counts differ, {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (n, da, db) = (va.rows(), va.cols(), vb.cols());
        let mut value = Tensor::zeros(n, da + db);
        for i in 0..n {
            value.row_mut(i)[..da].copy_from_slice(va.row(i));
            value.row_mut(i)[da..].copy_from_slice(vb.row(i));
        }
        let rg = self.requires(&[a, b]);
        self.push(value, Op::ConcatRows(a, b), rg, "concat_rows")
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(EthError::invalid("mean_rows: empty input"));
        }
        let (n, d) = va.shape();
        let mut value = Tensor::zeros(1, d);
        for i in 0..n {
            for (o, &x) in value.row_mut(0).iter_mut().zip(va.row(i)) {
                *o += x;
            }
        }
        value.scale_assign(1.0 / n as f64);
        let rg = self.requires(&[a]);
        self.push(value, Op::MeanRows(a), rg, "mean_rows")
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "row_dot")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows())
            .map(|i| va.row(i).iter().zip(vb.row(i)).map(|(&x, &y)| x * y).sum())
            .collect();
        let rg = self.requires(&[a, b]);
        self.push(Tensor::col_vec(data), Op::RowDot(a, b), rg, "row_dot")
    }

    pub fn sqrt_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let data = (0..va.rows())
            .map(|i| va.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let rg = self.requires(&[a]);
        self.push(Tensor::col_vec(data), Op::SqrtNorm(a), rg, "sqrt_norm")
    }

    pub fn broadcast_col(&mut self, v: NodeId, cols: usize) -> Result<NodeId> {
        let vv = self.value(v);
        if vv.cols() != 1 {
            return Err(EthError::invalid("broadcast_col: input must be n x 1"));
        }
        let n = vv.rows();
        let mut value = Tensor::zeros(n, cols);
        for i in 0..n {
            value.row_mut(i).fill(vv.get(i, 0));
        }
        let rg = self.requires(&[v]);
        self.push(value, Op::BroadcastCol(v), rg, "broadcast_col")
    }

    pub fn broadcast_row(&mut self, v: NodeId, rows: usize) -> Result<NodeId> {
        let vv = self.value(v);
        if vv.rows() != 1 {
            return Err(EthError::invalid("broadcast_row: input must be 1 x m"));
        }
        let m = vv.cols();
        let mut value = Tensor::zeros(rows, m);
        for i in 0..rows {
            value.row_mut(i).copy_from_slice(vv.row(0));
        }
        let rg = self.requires(&[v]);
        self.push(value, Op::BroadcastRow(v), rg, "broadcast_row")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::tanh);
        let rg = self.requires(&[a]);
        self.push(value, Op::Tanh(a), rg, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(sigmoid);
        let rg = self.requires(&[a]);
        self.push(value, Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.requires(&[a]);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    /// RReLU: identity on nonnegatives; negatives are scaled by a slope drawn
    /// uniformly from `[lower, upper]` in training mode, or by the fixed
    /// midpoint `(lower + upper) / 2` in eval mode.
    pub fn rrelu(
        &mut self,
        a: NodeId,
        lower: f64,
        upper: f64,
        training: bool,
        rng: &mut dyn rand::RngCore,
    ) -> Result<NodeId> {
        if !(0.0 <= lower && lower <= upper) {
            return Err(EthError::invalid(format!(
                "rrelu: invalid slope bounds [{lower}, {upper}]"
            )));
        }
        let va = self.value(a);
        let mid = 0.5 * (lower + upper);
        let slopes_data: Vec<f64> = va
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0
                } else if training {
                    rng.gen_range(lower..=upper)
                } else {
                    mid
                }
            })
            .collect();
        let (r, c) = va.shape();
        let slopes = Tensor::from_vec(r, c, slopes_data)?;
        let value = va.zip_map(&slopes, |x, s| x * s);
        let rg = self.requires(&[a]);
        self.push(value, Op::RRelu { x: a, slopes }, rg, "rrelu")
    }

    /// `arctanh` with its argument clamped to `±(1 - ATANH_EPS)`. Clamped
    /// entries get zero gradient.
    pub fn arctanh_clamped(&mut self, a: NodeId) -> Result<NodeId> {
        let k = 1.0 - ATANH_EPS;
        let value = self.value(a).map(|x| x.clamp(-k, k).atanh());
        let rg = self.requires(&[a]);
        self.push(value, Op::ArctanhClamped(a), rg, "arctanh_clamped")
    }

    /// Per-row normalization to mean 0 and population std 1, no affine
    /// parameters. A constant row divides by the 1e-8 stabilizer instead of
    /// erroring.
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let (n, d) = va.shape();
        if d == 0 {
            return Err(EthError::invalid("layer_norm: zero-width input"));
        }
        let mut value = Tensor::zeros(n, d);
        let mut sigma = Vec::with_capacity(n);
        for i in 0..n {
            let row = va.row(i);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let sd = var.sqrt();
            let s = sd + 1e-8;
            for (o, &x) in value.row_mut(i).iter_mut().zip(row) {
                *o = (x - mu) / s;
            }
            sigma.push(sd);
        }
        let rg = self.requires(&[a]);
        self.push(value, Op::LayerNorm { x: a, sigma }, rg, "layer_norm")
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        let rg = self.requires(&[a]);
        self.push(value, Op::Softplus(a), rg, "softplus")
    }

    /// Elementwise `sqrt(max(x, 0))`; clamped and zero entries get zero
    /// gradient.
    pub fn sqrt_elem(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(0.0).sqrt());
        let rg = self.requires(&[a]);
        self.push(value, Op::SqrtElem(a), rg, "sqrt_elem")
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| 1.0 / x);
        let rg = self.requires(&[a]);
        self.push(value, Op::Recip(a), rg, "recip")
    }

    /// The radial factor of the exponential map: `tanh(a)/a` with limit 1 at
    /// zero, capped so that a point scaled by it lands strictly inside the
    /// ball (`tanh` replaced by `1 - BALL_EPS` once it saturates).
    pub fn exp_map_scale(&mut self, a: NodeId) -> Result<NodeId> {
        let cap = 1.0 - BALL_EPS;
        let value = self.value(a).map(|x| {
            if x.abs() < SMALL_NORM_EPS {
                1.0
            } else {
                x.tanh().min(cap) / x
            }
        });
        let rg = self.requires(&[a]);
        self.push(value, Op::ExpMapScale(a), rg, "exp_map_scale")
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        let (n, d) = va.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(EthError::invalid(format!(
                "gather_rows: index {bad} out of bounds for {n} rows"
            )));
        }
        let mut value = Tensor::zeros(idx.len(), d);
        for (o, &i) in idx.iter().enumerate() {
            value.row_mut(o).copy_from_slice(va.row(i));
        }
        let rg = self.requires(&[a]);
        self.push(
            value,
            Op::GatherRows {
                x: a,
                idx: idx.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// Groups the rows of `a` by target index and averages each group;
    /// target rows receiving no input stay zero.
    pub fn scatter_mean_rows(&mut self, a: NodeId, idx: &[usize], out_rows: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (n, d) = va.shape();
        if idx.len() != n {
            return Err(EthError::invalid(format!(
                "scatter_mean_rows: {} indices for {} rows",
                idx.len(),
                n
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(EthError::invalid(format!(
                "scatter_mean_rows: target {bad} out of bounds for {out_rows} rows"
            )));
        }
        let mut counts = vec![0usize; out_rows];
        let mut value = Tensor::zeros(out_rows, d);
        for (r, &t) in idx.iter().enumerate() {
            counts[t] += 1;
            for (o, &x) in value.row_mut(t).iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        for (t, &cnt) in counts.iter().enumerate() {
            if cnt > 1 {
                let inv = 1.0 / cnt as f64;
                for o in value.row_mut(t) {
                    *o *= inv;
                }
            }
        }
        let rg = self.requires(&[a]);
        self.push(
            value,
            Op::ScatterMeanRows {
                x: a,
                idx: idx.to_vec(),
                counts,
            },
            rg,
            "scatter_mean_rows",
        )
    }

    /// Vertical stacking of equal-width blocks.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EthError::invalid("stack_rows: no inputs"));
        }
        let d = self.value(parts[0]).cols();
        let mut n = 0;
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != d {
                return Err(EthError::invalid(format!(
                    "stack_rows: width mismatch {} vs {d}",
                    vp.cols()
                )));
            }
            n += vp.rows();
        }
        let mut value = Tensor::zeros(n, d);
        let mut at = 0;
        for &p in parts {
            let vp = self.value(p);
            for i in 0..vp.rows() {
                value.row_mut(at).copy_from_slice(vp.row(i));
                at += 1;
            }
        }
        let rg = self.requires(parts);
        self.push(value, Op::StackRows(parts.to_vec()), rg, "stack_rows")
    }

    /// Mean over rows of `-log softmax(z)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let vz = self.value(logits);
        let (n, m) = vz.shape();
        if targets.len() != n {
            return Err(EthError::invalid(format!(
                "softmax_cross_entropy: {} targets for {} rows",
                targets.len(),
                n
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
            return Err(EthError::invalid(format!(
                "softmax_cross_entropy: target {bad} out of range for {m} classes"
            )));
        }
        let mut probs = Tensor::zeros(n, m);
        let mut loss = 0.0;
        for i in 0..n {
            let row = vz.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &z) in probs.row_mut(i).iter_mut().zip(row) {
                *o = (z - max).exp();
                sum += *o;
            }
            let log_sum = sum.ln() + max;
            for o in probs.row_mut(i) {
                *o /= sum;
            }
            loss += log_sum - row[targets[i]];
        }
        loss /= n as f64;
        let rg = self.requires(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Mean over all entries of the binary cross-entropy between `σ(z)` and
    /// the 0/1 labels.
    pub fn binary_cross_entropy(&mut self, logits: NodeId, labels: &Tensor) -> Result<NodeId> {
        let vz = self.value(logits);
        if vz.shape() != labels.shape() {
            return Err(EthError::invalid(format!(
                "binary_cross_entropy: shape mismatch {:?} vs {:?}",
                vz.shape(),
                labels.shape()
            )));
        }
        let count = vz.len() as f64;
        let mut loss = 0.0;
        for (&z, &y) in vz.data().iter().zip(labels.data()) {
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        loss /= count;
        let rg = self.requires(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy {
                logits,
                labels: labels.clone(),
            },
            rg,
            "binary_cross_entropy",
        )
    }

    /// Reverse sweep from a scalar root; returns gradients for every node
    /// that requires them.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(EthError::invalid(format!(
                "backward: root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.accumulate_parents(NodeId(i), &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.node(id).requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_parents(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.node(id).value;
        match &self.node(id).op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transposed());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRowVec(a, v) => {
                self.accumulate(grads, *a, g.clone());
                let mut dv = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &x) in dv.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *v, dv);
            }
            Op::AddScalar(a, s) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *s, Tensor::scalar(g.data().iter().sum()));
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).scalar_value();
                self.accumulate(grads, *a, g.map(|x| x * k));
                let dot = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&x, &y)| x * y)
                    .sum();
                self.accumulate(grads, *s, Tensor::scalar(dot));
            }
            Op::MulColVec(a, v) => {
                let (va, vv) = (self.value(*a), self.value(*v));
                let mut da = g.clone();
                let mut dv = Tensor::zeros(va.rows(), 1);
                for i in 0..va.rows() {
                    let s = vv.get(i, 0);
                    let mut acc = 0.0;
                    for (o, &x) in da.row_mut(i).iter_mut().zip(va.row(i)) {
                        acc += *o * x;
                        *o *= s;
                    }
                    dv.set(i, 0, acc);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *v, dv);
            }
            Op::ScaleConst(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::AddConst(a) => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::ConcatRows(a, b) => {
                let (da_cols, db_cols) = (self.value(*a).cols(), self.value(*b).cols());
                let n = g.rows();
                let mut da = Tensor::zeros(n, da_cols);
                let mut db = Tensor::zeros(n, db_cols);
                for i in 0..n {
                    da.row_mut(i).copy_from_slice(&g.row(i)[..da_cols]);
                    db.row_mut(i).copy_from_slice(&g.row(i)[da_cols..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).rows();
                let inv = 1.0 / n as f64;
                let mut da = Tensor::zeros(n, g.cols());
                for i in 0..n {
                    for (o, &x) in da.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = x * inv;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(va.rows(), va.cols());
                let mut db = Tensor::zeros(va.rows(), va.cols());
                for i in 0..va.rows() {
                    let gi = g.get(i, 0);
                    for ((o, &y), (p, &x)) in da
                        .row_mut(i)
                        .iter_mut()
                        .zip(vb.row(i))
                        .zip(db.row_mut(i).iter_mut().zip(va.row(i)))
                    {
                        *o = gi * y;
                        *p = gi * x;
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::SqrtNorm(a) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.rows(), va.cols());
                for i in 0..va.rows() {
                    let norm = out.get(i, 0);
                    if norm < SMALL_NORM_EPS {
                        continue;
                    }
                    let gi = g.get(i, 0) / norm;
                    for (o, &x) in da.row_mut(i).iter_mut().zip(va.row(i)) {
                        *o = gi * x;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::BroadcastCol(v) => {
                let mut dv = Tensor::zeros(g.rows(), 1);
                for i in 0..g.rows() {
                    dv.set(i, 0, g.row(i).iter().sum());
                }
                self.accumulate(grads, *v, dv);
            }
            Op::BroadcastRow(v) => {
                let mut dv = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &x) in dv.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *v, dv);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gi, y| gi * (1.0 - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gi, y| gi * y * (1.0 - y)));
            }
            Op::Relu(a) => {
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::RRelu { x, slopes } => {
                self.accumulate(grads, *x, g.zip_map(slopes, |gi, s| gi * s));
            }
            Op::ArctanhClamped(a) => {
                let k = 1.0 - ATANH_EPS;
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gi, x| {
                        if x.abs() < k {
                            gi / (1.0 - x * x)
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::LayerNorm { x, sigma } => {
                let n = g.rows();
                let d = g.cols() as f64;
                let mut dx = Tensor::zeros(n, g.cols());
                for (i, &sd) in sigma.iter().enumerate() {
                    let s = sd + 1e-8;
                    let gi = g.row(i);
                    let yi = out.row(i);
                    let g_mean = gi.iter().sum::<f64>() / d;
                    let gy = gi.iter().zip(yi).map(|(&a, &b)| a * b).sum::<f64>();
                    for ((o, &gj), &yj) in dx.row_mut(i).iter_mut().zip(gi).zip(yi) {
                        let mut v = (gj - g_mean) / s;
                        if sd > SMALL_NORM_EPS {
                            v -= yj * gy / (d * sd);
                        }
                        *o = v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Softplus(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gi, x| gi * sigmoid(x)));
            }
            Op::SqrtElem(a) => {
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(out, |gi, y| if y > SMALL_NORM_EPS { gi / (2.0 * y) } else { 0.0 }),
                );
            }
            Op::Recip(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gi, y| -gi * y * y));
            }
            Op::ExpMapScale(a) => {
                let cap = 1.0 - BALL_EPS;
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gi, x| {
                        if x.abs() < SMALL_NORM_EPS {
                            0.0
                        } else {
                            let t = x.tanh();
                            if t > cap {
                                gi * (-cap / (x * x))
                            } else {
                                gi * ((1.0 - t * t) * x - t) / (x * x)
                            }
                        }
                    }),
                );
            }
            Op::GatherRows { x, idx } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ScatterMeanRows { x, idx, counts } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &t) in idx.iter().enumerate() {
                    let inv = 1.0 / counts[t] as f64;
                    for (o, &v) in dx.row_mut(r).iter_mut().zip(g.row(t)) {
                        *o = v * inv;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::StackRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut dp = Tensor::zeros(vp.rows(), vp.cols());
                    for i in 0..vp.rows() {
                        dp.row_mut(i).copy_from_slice(g.row(at + i));
                    }
                    at += vp.rows();
                    self.accumulate(grads, p, dp);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let scale = g.scalar_value() / probs.rows() as f64;
                let mut dz = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    let v = dz.get(i, t) - 1.0;
                    dz.set(i, t, v);
                }
                dz.scale_assign(scale);
                self.accumulate(grads, *logits, dz);
            }
            Op::BinaryCrossEntropy { logits, labels } => {
                let vz = self.value(*logits);
                let scale = g.scalar_value() / vz.len() as f64;
                let dz = vz.zip_map(labels, |z, y| (sigmoid(z) - y) * scale);
                self.accumulate(grads, *logits, dz);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.hadamard(x, x).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn backward_rejects_nonscalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 0.5);
    }

    #[test]
    fn rrelu_is_identity_on_nonnegatives() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::row_vec(vec![0.0, 1.0, 2.5, 1e-9]))
            .unwrap();
        for training in [true, false] {
            let y = tape.rrelu(x, 1.0 / 8.0, 1.0 / 3.0, training, &mut rng).unwrap();
            assert_eq!(tape.value(y).data(), tape.value(x).data());
        }
    }

    #[test]
    fn rrelu_eval_uses_midpoint_slope() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vec(vec![-2.0])).unwrap();
        let y = tape.rrelu(x, 0.25, 0.75, false, &mut rng).unwrap();
        assert!((tape.value(y).data()[0] - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn rrelu_training_slopes_within_bounds_and_reused_in_backward() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::row_vec(vec![-1.0, -2.0, -3.0, -4.0]))
            .unwrap();
        let y = tape.rrelu(x, 1.0 / 8.0, 1.0 / 3.0, true, &mut rng).unwrap();
        let slopes: Vec<f64> = tape
            .value(y)
            .data()
            .iter()
            .zip(tape.value(x).data())
            .map(|(&o, &i)| o / i)
            .collect();
        for &s in &slopes {
            assert!((1.0 / 8.0..=1.0 / 3.0).contains(&s));
        }
        let loss = tape.row_dot(y, y).unwrap();
        let grads = tape.backward(loss).unwrap();
        // loss = Σ y_i² with y_i = s_i x_i, so dloss/dx_i = 2 x_i s_i².
        for (i, &s) in slopes.iter().enumerate() {
            let xi = tape.value(x).data()[i];
            let expect = 2.0 * xi * s * s;
            assert!((grads.get(x).unwrap().data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_matches_hand_oracle() {
        // [2,4,6]: mean 4, population std sqrt(8/3).
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vec(vec![2.0, 4.0, 6.0])).unwrap();
        let y = tape.layer_norm(x).unwrap();
        let want = (3.0f64 / 2.0).sqrt();
        let got = tape.value(y).data();
        assert!((got[0] + want).abs() < 1e-7);
        assert!(got[1].abs() < 1e-9);
        assert!((got[2] - want).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_normalizes_random_rows() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::gaussian(8, 33, 3.0, &mut rng)).unwrap();
        let y = tape.layer_norm(x).unwrap();
        let vy = tape.value(y);
        for i in 0..vy.rows() {
            let row = vy.row(i);
            let mu = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
            assert!(mu.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_silently_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vec(vec![5.0, 5.0, 5.0])).unwrap();
        let y = tape.layer_norm(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn scatter_mean_averages_duplicates() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0]).unwrap())
            .unwrap();
        let y = tape.scatter_mean_rows(x, &[1, 1, 0], 3).unwrap();
        assert_eq!(tape.value(y).row(0), &[10.0, 20.0]);
        assert_eq!(tape.value(y).row(1), &[2.0, 3.0]);
        assert_eq!(tape.value(y).row(2), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = tape.leaf(Tensor::zeros(3, 2)).unwrap();
        assert!(matches!(
            tape.add(a, b),
            Err(EthError::InvalidArgument(_))
        ));
    }

    #[test]
    fn nonfinite_output_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let err = tape.recip(a).unwrap_err();
        match err {
            EthError::Numeric { op, .. } => assert_eq!(op, "recip"),
            other => panic!("expected numeric error, got {other}"),
        }
    }

    #[test]
    fn softmax_ce_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(1, 4)).unwrap();
        let l = tape.softmax_cross_entropy(z, &[2]).unwrap();
        assert!((tape.value(l).scalar_value() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_saturates_to_zero() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(Tensor::row_vec(vec![50.0, 0.0, 0.0]))
            .unwrap();
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(tape.value(l).scalar_value() < 1e-12);
    }

    #[test]
    fn softmax_ce_matches_hand_computation() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(Tensor::from_vec(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap())
            .unwrap();
        let l = tape.softmax_cross_entropy(z, &[2, 0]).unwrap();
        let hand = {
            let r1: f64 = (0.3f64.exp() + (-1.2f64).exp() + 0.7f64.exp()).ln() - 0.7;
            let r2: f64 = (2.0f64.exp() + 0.1f64.exp() + (-0.4f64).exp()).ln() - 2.0;
            (r1 + r2) / 2.0
        };
        assert!((tape.value(l).scalar_value() - hand).abs() < 1e-12);
    }

    #[test]
    fn exp_map_scale_limit_and_cap() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(Tensor::row_vec(vec![0.0, 1e-14, 0.5, 25.0]))
            .unwrap();
        let y = tape.exp_map_scale(a).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 0.5f64.tanh() / 0.5).abs() < 1e-15);
        // tanh(25) saturates to 1.0 in f64; the cap keeps the scale strictly
        // below 1/25.
        assert!((v[3] - (1.0 - BALL_EPS) / 25.0).abs() < 1e-18);
    }

    #[test]
    fn gather_rejects_out_of_bounds() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        assert!(tape.gather_rows(a, &[0, 2]).is_err());
    }
}
