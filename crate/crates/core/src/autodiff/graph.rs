use std::sync::Arc;

use crate::tensor::{self, check_matvec, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fixed sparse matrix: `y[r] = Σ weight · x[col]` over the entries of row `r`.
///
/// Used to gather per-word channel confidences out of pooled feature scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for row in &rows {
            if let Some(&(c, _)) = row.iter().find(|(c, _)| *c >= cols) {
                return Err(TensorError::Shape {
                    op: "sparse_rows",
                    left: vec![rows.len(), cols],
                    right: vec![c],
                });
            }
        }
        Ok(Self { cols, rows })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, w)| w * x[c]).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// `w x (+ b)`
    Affine {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a fixed vector (dropout masks).
    MulConst(NodeId, Arc<Vec<f64>>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Dot(NodeId, NodeId),
    /// Scalars into a vector.
    Stack(Vec<NodeId>),
    Softmax(NodeId),
    /// `Σ_i weights[i] · rows[i]`
    WeightedSum {
        weights: NodeId,
        rows: Vec<NodeId>,
    },
    /// Per component, the row index (into `rows`) that won.
    MaxPool {
        rows: Vec<NodeId>,
        argmax: Vec<usize>,
    },
    Sparse(Arc<SparseRows>, NodeId),
    Sum(Vec<NodeId>),
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
    },
    /// Summed one-vs-all binary cross-entropy on raw logits.
    SigmoidBce {
        logits: NodeId,
        target: usize,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Affine { w, x, b } => {
                let mut p = vec![*w, *x];
                p.extend(b);
                p
            }
            Op::Add(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Slice { x: a, .. }
            | Op::Sparse(_, a)
            | Op::SoftmaxCrossEntropy { logits: a, .. }
            | Op::SigmoidBce { logits: a, .. } => vec![*a],
            Op::Concat(xs) | Op::Stack(xs) | Op::Sum(xs) | Op::MaxPool { rows: xs, .. } => {
                xs.clone()
            }
            Op::WeightedSum { weights, rows } => {
                let mut p = vec![*weights];
                p.extend(rows);
                p
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Append-only tape of tensor operations. Node ids are indices, so the
/// insertion order is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[id.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `id`, or zeros if nothing flowed into it.
    pub fn get_or_zero(&self, id: NodeId) -> Tensor {
        self.get(id).unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf, recorded in the parameter registry.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.push((name.into(), id));
        id
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::affine(self.value(w), self.value(x), self.value(b))?;
        Ok(self.push(Op::Affine { w, x, b: Some(b) }, value))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, xt) = (self.value(w), self.value(x));
        check_matvec(wt, xt, "matvec")?;
        let data = wt
            .data()
            .chunks_exact(wt.cols())
            .map(|row| tensor::dot(row, xt.data()))
            .collect();
        Ok(self.push(Op::Affine { w, x, b: None }, Tensor::vector(data)))
    }

    fn zip_map(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err(op, at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(at.shape().to_vec(), data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let at = self.value(a);
        let data = at.data().iter().map(|&x| f(x)).collect();
        Tensor::new(at.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_map("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_map("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.map(a, |x| x * factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Arc<Vec<f64>>) -> Result<NodeId> {
        let at = self.value(a);
        if at.len() != mask.len() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: at.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = at.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst(a, mask), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.map(a, tensor::sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 1 || len == 0 || start + len > t.len() {
            return Err(TensorError::Shape {
                op: "slice",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { x, start }, value))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("dot", at, bt));
        }
        let value = Tensor::scalar(tensor::dot(at.data(), bt.data()));
        Ok(self.push(Op::Dot(a, b), value))
    }

    pub fn stack(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::with_capacity(scalars.len());
        for &s in scalars {
            let t = self.value(s);
            if !t.is_scalar() {
                return Err(TensorError::Shape {
                    op: "stack",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.push(t.item());
        }
        if data.is_empty() {
            return Err(TensorError::Empty("stack"));
        }
        Ok(self.push(Op::Stack(scalars.to_vec()), Tensor::vector(data)))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::vector(tensor::softmax(self.value(a).data()));
        self.push(Op::Softmax(a), value)
    }

    pub fn weighted_sum(&mut self, weights: NodeId, rows: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if rows.is_empty() {
            return Err(TensorError::Empty("weighted_sum"));
        }
        if w.len() != rows.len() {
            return Err(TensorError::Shape {
                op: "weighted_sum",
                left: w.shape().to_vec(),
                right: vec![rows.len()],
            });
        }
        let width = self.value(rows[0]).len();
        let mut out = vec![0.0; width];
        for (&r, &alpha) in rows.iter().zip(w.data()) {
            let rt = self.value(r);
            if rt.len() != width {
                return Err(shape_err("weighted_sum", self.value(rows[0]), rt));
            }
            for (o, v) in out.iter_mut().zip(rt.data()) {
                *o += alpha * v;
            }
        }
        Ok(self.push(
            Op::WeightedSum {
                weights,
                rows: rows.to_vec(),
            },
            Tensor::vector(out),
        ))
    }

    /// Componentwise max over the rows whose mask entry is set. Returns the
    /// pooled node and, per component, the winning position in `rows`.
    pub fn masked_max_pool(&mut self, rows: &[NodeId], mask: &[bool]) -> Result<(NodeId, Vec<usize>)> {
        let values: Vec<&[f64]> = rows.iter().map(|&r| self.value(r).data()).collect();
        let (pooled, argmax) = tensor::masked_max_pool(&values, mask)?;
        let id = self.push(
            Op::MaxPool {
                rows: rows.to_vec(),
                argmax: argmax.clone(),
            },
            Tensor::vector(pooled),
        );
        Ok((id, argmax))
    }

    pub fn sparse(&mut self, matrix: Arc<SparseRows>, x: NodeId) -> Result<NodeId> {
        let xt = self.value(x);
        if xt.shape() != [matrix.cols()] {
            return Err(TensorError::Shape {
                op: "sparse",
                left: vec![matrix.rows(), matrix.cols()],
                right: xt.shape().to_vec(),
            });
        }
        let value = Tensor::vector(matrix.apply(xt.data()));
        Ok(self.push(Op::Sparse(matrix, x), value))
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or(TensorError::Empty("sum"))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            let t = self.value(x);
            if t.shape() != acc.shape() {
                return Err(shape_err("sum", &acc, t));
            }
            for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += v;
            }
        }
        Ok(self.push(Op::Sum(xs.to_vec()), acc))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let loss = tensor::softmax_cross_entropy(self.value(logits).data(), target)?;
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, target }, Tensor::scalar(loss)))
    }

    /// `Σ_w BCE(σ(z_w), 1[w = target])`.
    pub fn sigmoid_bce(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(TensorError::TargetOutOfRange {
                target,
                len: z.len(),
            });
        }
        // -log σ(z) = softplus(-z); -log(1-σ(z)) = softplus(z)
        let loss = z
            .iter()
            .enumerate()
            .map(|(w, &zw)| if w == target { tensor::softplus(-zw) } else { tensor::softplus(zw) })
            .sum();
        Ok(self.push(Op::SigmoidBce { logits, target }, Tensor::scalar(loss)))
    }

    /// Reverse-mode pass from a scalar node. Nodes are visited in exact
    /// reverse insertion order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let acc = |id: NodeId, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Affine { w, x, b } => {
                let wt = &nodes[w.0].value;
                let xt = &nodes[x.0].value;
                let cols = wt.cols();
                if wants(*w) {
                    acc(*w, grads, &mut |gw| {
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                let row = &mut gw[r * cols..(r + 1) * cols];
                                for (o, &xv) in row.iter_mut().zip(xt.data()) {
                                    *o += gr * xv;
                                }
                            }
                        }
                    });
                }
                if wants(*x) {
                    acc(*x, grads, &mut |gx| {
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                for (o, &wv) in gx.iter_mut().zip(wt.row(r)) {
                                    *o += gr * wv;
                                }
                            }
                        }
                    });
                }
                if let Some(b) = b {
                    if wants(*b) {
                        acc(*b, grads, &mut |gb| add_into(gb, g));
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if wants(*p) {
                        acc(*p, grads, &mut |gp| add_into(gp, g));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    acc(*a, grads, &mut |ga| {
                        for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, grads, &mut |gb| {
                        for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
            }
            Op::Scale(a, factor) => {
                if wants(*a) {
                    acc(*a, grads, &mut |ga| {
                        for (o, gi) in ga.iter_mut().zip(g) {
                            *o += gi * factor;
                        }
                    });
                }
            }
            Op::MulConst(a, mask) => {
                if wants(*a) {
                    acc(*a, grads, &mut |ga| {
                        for ((o, gi), m) in ga.iter_mut().zip(g).zip(mask.iter()) {
                            *o += gi * m;
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    acc(*a, grads, &mut |ga| {
                        for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    acc(*a, grads, &mut |ga| {
                        for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    });
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if wants(*p) {
                        acc(*p, grads, &mut |gp| add_into(gp, &g[offset..offset + n]));
                    }
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                if wants(*x) {
                    acc(*x, grads, &mut |gx| add_into(&mut gx[*start..*start + g.len()], g));
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let s = g[0];
                if wants(*a) {
                    acc(*a, grads, &mut |ga| {
                        for (o, bi) in ga.iter_mut().zip(bv) {
                            *o += s * bi;
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, grads, &mut |gb| {
                        for (o, ai) in gb.iter_mut().zip(av) {
                            *o += s * ai;
                        }
                    });
                }
            }
            Op::Stack(scalars) => {
                for (p, gi) in scalars.iter().zip(g) {
                    if wants(*p) {
                        acc(*p, grads, &mut |gp| gp[0] += gi);
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    acc(*a, grads, &mut |ga| {
                        for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                            *o += yi * (gi - inner);
                        }
                    });
                }
            }
            Op::WeightedSum { weights, rows } => {
                let wv = nodes[weights.0].value.data();
                if wants(*weights) {
                    acc(*weights, grads, &mut |gw| {
                        for (o, r) in gw.iter_mut().zip(rows) {
                            *o += tensor::dot(g, nodes[r.0].value.data());
                        }
                    });
                }
                for (r, &alpha) in rows.iter().zip(wv) {
                    if wants(*r) {
                        acc(*r, grads, &mut |gr| {
                            for (o, gi) in gr.iter_mut().zip(g) {
                                *o += alpha * gi;
                            }
                        });
                    }
                }
            }
            Op::MaxPool { rows, argmax } => {
                for (j, (&winner, gj)) in argmax.iter().zip(g).enumerate() {
                    let r = rows[winner];
                    if wants(r) {
                        acc(r, grads, &mut |gr| gr[j] += gj);
                    }
                }
            }
            Op::Sparse(matrix, x) => {
                if wants(*x) {
                    acc(*x, grads, &mut |gx| {
                        for (r, &gr) in g.iter().enumerate() {
                            for &(c, w) in matrix.row(r) {
                                gx[c] += w * gr;
                            }
                        }
                    });
                }
            }
            Op::Sum(xs) => {
                for x in xs {
                    if wants(*x) {
                        acc(*x, grads, &mut |gx| add_into(gx, g));
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                if wants(*logits) {
                    let probs = tensor::softmax(nodes[logits.0].value.data());
                    let s = g[0];
                    acc(*logits, grads, &mut |gl| {
                        for (i, (o, p)) in gl.iter_mut().zip(&probs).enumerate() {
                            let y = if i == *target { 1.0 } else { 0.0 };
                            *o += s * (p - y);
                        }
                    });
                }
            }
            Op::SigmoidBce { logits, target } => {
                if wants(*logits) {
                    let z = nodes[logits.0].value.data();
                    let s = g[0];
                    acc(*logits, grads, &mut |gl| {
                        for (i, (o, &zi)) in gl.iter_mut().zip(z).enumerate() {
                            let y = if i == *target { 1.0 } else { 0.0 };
                            *o += s * (tensor::sigmoid(zi) - y);
                        }
                    });
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
