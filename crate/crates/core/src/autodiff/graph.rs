//! Define-by-run reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every op in execution order. Nodes are appended only
//! after their inputs exist, so the node list is already topologically sorted
//! and [`Graph::backward`] simply walks it in reverse.
//!
//! Parameters are borrowed from a [`ModelParams`] for the lifetime of the
//! graph; backward returns their gradients in a [`Gradients`] map, which the
//! caller folds back with [`ModelParams::accumulate`] once the graph is gone.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::{ModelParams, Real, Tensor, TensorError};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(String),
    MatMul(NodeId, NodeId),
    Binary(Elementwise, NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Activation(Activation, NodeId),
    SoftmaxRows(NodeId),
    Concat(Vec<NodeId>),
    Dropout(NodeId, Vec<T>),
    Scale(NodeId, T),
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    SegmentAttention {
        query: NodeId,
        key: NodeId,
        value: NodeId,
        offsets: Vec<usize>,
        probs: Vec<T>,
        scale: T,
    },
    Mix {
        gates: NodeId,
        experts: Vec<NodeId>,
    },
    Detach,
    Sum(NodeId),
    Nll {
        probs: NodeId,
        labels: Vec<usize>,
        weights: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Binary(Elementwise::Add, ..) => "add",
            Op::Binary(Elementwise::Mul, ..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Activation(Activation::Relu, _) => "relu",
            Op::Activation(Activation::Sigmoid, _) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Concat(_) => "concat_cols",
            Op::Dropout(..) => "dropout",
            Op::Scale(..) => "scale",
            Op::Gather { .. } => "gather_rows",
            Op::SegmentAttention { .. } => "segment_attention",
            Op::Mix { .. } => "mix",
            Op::Detach => "detach",
            Op::Sum(_) => "sum",
            Op::Nll { .. } => "nll",
        }
    }
}

struct Node<'p, T: Real> {
    rows: usize,
    cols: usize,
    value: Cow<'p, [T]>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    params: BTreeMap<String, Vec<T>>,
    nodes: HashMap<NodeId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).map(Vec::as_slice)
    }

    /// Gradient with respect to a tracked input node.
    pub fn node(&self, id: NodeId) -> Option<&[T]> {
        self.nodes.get(&id).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Recorded computation; see the module docs.
pub struct Graph<'p, T: Real = f32> {
    params: Option<&'p ModelParams<T>>,
    param_nodes: HashMap<String, NodeId>,
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// A graph with no parameter store; only inputs are available.
    pub fn new() -> Self {
        Self {
            params: None,
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ModelParams<T>) -> Self {
        Self {
            params: Some(params),
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<T> {
        let n = &self.nodes[id.0];
        Tensor::new(n.rows, n.cols, n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    /// Sign pattern of every relu input, in recording order. Gradient checks
    /// use it to detect finite-difference probes that straddle a kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Activation(Activation::Relu, a) = node.op {
                sig.extend(self.nodes[a.0].value.iter().map(|&x| x > T::zero()));
            }
        }
        sig
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        value: Cow<'p, [T]>,
        op: Op<T>,
        tracked: bool,
    ) -> Result<NodeId, TensorError> {
        debug_assert_eq!(value.len(), rows * cols);
        if !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    /// Constant input; no gradient flows to it.
    pub fn input(&mut self, t: Tensor<T>) -> Result<NodeId, TensorError> {
        let (r, c) = t.shape();
        self.push(r, c, Cow::Owned(t.into_data()), Op::Input, false)
    }

    /// Input whose gradient is reported through [`Gradients::node`].
    pub fn input_tracked(&mut self, t: Tensor<T>) -> Result<NodeId, TensorError> {
        let (r, c) = t.shape();
        self.push(r, c, Cow::Owned(t.into_data()), Op::Input, true)
    }

    /// Looks up a parameter by name, reusing the node on repeated calls.
    pub fn param(&mut self, name: &str) -> Result<NodeId, TensorError> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let params = self
            .params
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let id = self.push(
            t.rows(),
            t.cols(),
            Cow::Borrowed(t.data()),
            Op::Param(name.to_string()),
            true,
        )?;
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let tracked = self.tracked(&[a, b]);
        self.push(m, n, Cow::Owned(out), Op::MatMul(a, b), tracked)
    }

    pub fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        kind: Elementwise,
    ) -> Result<NodeId, TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(TensorError::Shape {
                op: match kind {
                    Elementwise::Add => "add",
                    Elementwise::Mul => "mul",
                },
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<T> = match kind {
            Elementwise::Add => va.iter().zip(vb).map(|(&x, &y)| x + y).collect(),
            Elementwise::Mul => va.iter().zip(vb).map(|(&x, &y)| x * y).collect(),
        };
        let tracked = self.tracked(&[a, b]);
        self.push(sa.0, sa.1, Cow::Owned(out), Op::Binary(kind, a, b), tracked)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    /// Adds a 1×cols row vector to every row of `a`. This is the only
    /// row-replicating op; there is no implicit broadcasting.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let sb = self.shape(bias);
        if sb != (1, n) {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: (m, n),
                rhs: sb,
            });
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, &x) in row.iter_mut().zip(b) {
                *o += x;
            }
        }
        let tracked = self.tracked(&[a, bias]);
        self.push(m, n, Cow::Owned(out), Op::AddRow(a, bias), tracked)
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out: Vec<T> = match kind {
            Activation::Relu => self
                .value(a)
                .iter()
                .map(|&x| if x > T::zero() { x } else { T::zero() })
                .collect(),
            Activation::Sigmoid => self.value(a).iter().map(|&x| sigmoid(x)).collect(),
        };
        let tracked = self.tracked(&[a]);
        self.push(m, n, Cow::Owned(out), Op::Activation(kind, a), tracked)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Sigmoid)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        if n == 0 {
            return Err(TensorError::Shape {
                op: "softmax_rows",
                lhs: (m, n),
                rhs: (m, 1),
            });
        }
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let tracked = self.tracked(&[a]);
        self.push(m, n, Cow::Owned(out), Op::SoftmaxRows(a), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty { op: "concat_cols" });
        };
        let rows = self.shape(first).0;
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            width += s.1;
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let tracked = self.tracked(parts);
        self.push(rows, width, Cow::Owned(out), Op::Concat(parts.to_vec()), tracked)
    }

    /// Inverted dropout. In eval mode, or at rate 0, returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (m, n) = self.shape(a);
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..m * n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &k)| x * k)
            .collect();
        let tracked = self.tracked(&[a]);
        self.push(m, n, Cow::Owned(out), Op::Dropout(a, mask), tracked)
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let tracked = self.tracked(&[a]);
        self.push(m, n, Cow::Owned(out), Op::Scale(a, factor), tracked)
    }

    /// Row lookup: output row i is `table[indices[i]]`. Backward scatters
    /// into the selected rows only.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.shape(table);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, rows });
            }
            out.extend_from_slice(&self.value(table)[i * cols..(i + 1) * cols]);
        }
        let tracked = self.tracked(&[table]);
        self.push(
            indices.len(),
            cols,
            Cow::Owned(out),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            tracked,
        )
    }

    /// Single-head scaled dot-product attention over variable-length
    /// segments. Query row `b` attends to key/value rows
    /// `offsets[b]..offsets[b + 1]`; an empty segment yields a zero row.
    pub fn segment_attention(
        &mut self,
        query: NodeId,
        key: NodeId,
        value: NodeId,
        offsets: &[usize],
    ) -> Result<NodeId, TensorError> {
        let (b, d) = self.shape(query);
        let (nk, dk) = self.shape(key);
        let (nv, dv) = self.shape(value);
        if dk != d {
            return Err(TensorError::Shape {
                op: "segment_attention",
                lhs: (b, d),
                rhs: (nk, dk),
            });
        }
        if nv != nk {
            return Err(TensorError::Shape {
                op: "segment_attention",
                lhs: (nk, dk),
                rhs: (nv, dv),
            });
        }
        let valid = offsets.len() == b + 1
            && offsets[0] == 0
            && offsets[b] == nk
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !valid {
            return Err(TensorError::Segments {
                rows: b,
                keys: nk,
            });
        }
        let scale = T::lit(1.0 / (d.max(1) as f64).sqrt());
        let (q, k, v) = (self.value(query), self.value(key), self.value(value));
        let mut probs = vec![T::zero(); nk];
        let mut out = vec![T::zero(); b * dv];
        for r in 0..b {
            let (s, e) = (offsets[r], offsets[r + 1]);
            if s == e {
                continue;
            }
            let qr = &q[r * d..(r + 1) * d];
            for j in s..e {
                probs[j] = dot(qr, &k[j * d..(j + 1) * d]) * scale;
            }
            softmax_in_place(&mut probs[s..e]);
            let orow = &mut out[r * dv..(r + 1) * dv];
            for j in s..e {
                axpy(orow, probs[j], &v[j * dv..(j + 1) * dv]);
            }
        }
        let tracked = self.tracked(&[query, key, value]);
        self.push(
            b,
            dv,
            Cow::Owned(out),
            Op::SegmentAttention {
                query,
                key,
                value,
                offsets: offsets.to_vec(),
                probs,
                scale,
            },
            tracked,
        )
    }

    /// Per-row convex mixing: `out[r] = Σ_i gates[r, i] · experts[i][r]`.
    pub fn mix(&mut self, gates: NodeId, experts: &[NodeId]) -> Result<NodeId, TensorError> {
        let (b, n) = self.shape(gates);
        if experts.len() != n || n == 0 {
            return Err(TensorError::Shape {
                op: "mix",
                lhs: (b, n),
                rhs: (b, experts.len()),
            });
        }
        let (eb, d) = self.shape(experts[0]);
        for &e in experts {
            if self.shape(e) != (b, d) || eb != b {
                return Err(TensorError::Shape {
                    op: "mix",
                    lhs: (b, d),
                    rhs: self.shape(e),
                });
            }
        }
        let g = self.value(gates);
        let mut out = vec![T::zero(); b * d];
        for (i, &e) in experts.iter().enumerate() {
            let ev = self.value(e);
            for r in 0..b {
                axpy(&mut out[r * d..(r + 1) * d], g[r * n + i], &ev[r * d..(r + 1) * d]);
            }
        }
        let mut ids = experts.to_vec();
        ids.push(gates);
        let tracked = self.tracked(&ids);
        self.push(
            b,
            d,
            Cow::Owned(out),
            Op::Mix {
                gates,
                experts: experts.to_vec(),
            },
            tracked,
        )
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out = self.value(a).to_vec();
        self.push(m, n, Cow::Owned(out), Op::Detach, false)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let total = self.value(a).iter().copied().sum();
        let tracked = self.tracked(&[a]);
        self.push(1, 1, Cow::Owned(vec![total]), Op::Sum(a), tracked)
    }

    /// Weighted negative log-likelihood: `Σ_r w_r · -ln(max(p[r, label_r], 1e-12))`.
    pub fn nll(
        &mut self,
        probs: NodeId,
        labels: &[usize],
        weights: &[T],
    ) -> Result<NodeId, TensorError> {
        let (b, c) = self.shape(probs);
        if labels.len() != b || weights.len() != b {
            return Err(TensorError::Shape {
                op: "nll",
                lhs: (b, c),
                rhs: (labels.len(), weights.len()),
            });
        }
        let p = self.value(probs);
        let floor = T::lit(NLL_FLOOR);
        let mut total = T::zero();
        for (r, (&l, &w)) in labels.iter().zip(weights).enumerate() {
            if l >= c {
                return Err(TensorError::IndexOutOfRange { index: l, rows: c });
            }
            if w != T::zero() {
                total += -w * p[r * c + l].max(floor).ln();
            }
        }
        let tracked = self.tracked(&[probs]);
        self.push(
            1,
            1,
            Cow::Owned(vec![total]),
            Op::Nll {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            tracked,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TensorError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            // keep leaf gradients for collection below
            if matches!(node.op, Op::Param(_) | Op::Input) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients {
            params: BTreeMap::new(),
            nodes: HashMap::new(),
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Param(name) => {
                    let g = grads[idx]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); node.rows * node.cols]);
                    out.params.insert(name.clone(), g);
                }
                Op::Input if node.tracked => {
                    let g = grads[idx]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); node.rows * node.cols]);
                    out.nodes.insert(NodeId(idx), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut send = |id: NodeId, contribution: Vec<T>| {
            if !self.nodes[id.0].tracked {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(contribution) {
                        *a += x;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].tracked {
                    // dA = G · Bᵀ, accumulated row-wise so the inner loop is an axpy.
                    let mut bt = vec![T::zero(); k * n];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = vb[p * n + j];
                        }
                    }
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    send(*a, da);
                }
                if self.nodes[b.0].tracked {
                    // dB = Aᵀ · G
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va[i * k + p];
                            if av != T::zero() {
                                axpy(&mut db[p * n..(p + 1) * n], av, gi);
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Binary(kind, a, b) => match kind {
                Elementwise::Add => {
                    send(*a, g.to_vec());
                    send(*b, g.to_vec());
                }
                Elementwise::Mul => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    send(*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                    send(*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
                }
            },
            Op::AddRow(a, bias) => {
                let n = node.cols;
                let mut db = vec![T::zero(); n];
                for row in g.chunks(n.max(1)) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                send(*a, g.to_vec());
                send(*bias, db);
            }
            Op::Activation(kind, a) => {
                let da = match kind {
                    Activation::Relu => self
                        .value(*a)
                        .iter()
                        .zip(g)
                        .map(|(&x, &gx)| if x > T::zero() { gx } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => node
                        .value
                        .iter()
                        .zip(g)
                        .map(|(&y, &gx)| gx * y * (T::one() - y))
                        .collect(),
                };
                send(*a, da);
            }
            Op::SoftmaxRows(a) => {
                let n = node.cols;
                let mut da = vec![T::zero(); g.len()];
                for ((drow, yrow), grow) in da
                    .chunks_mut(n)
                    .zip(node.value.chunks(n))
                    .zip(g.chunks(n))
                {
                    let inner = dot(yrow, grow);
                    for ((d, &y), &gx) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = y * (gx - inner);
                    }
                }
                send(*a, da);
            }
            Op::Concat(parts) => {
                let width = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let mut dp = Vec::with_capacity(node.rows * c);
                    for r in 0..node.rows {
                        dp.extend_from_slice(&g[r * width + offset..r * width + offset + c]);
                    }
                    offset += c;
                    send(p, dp);
                }
            }
            Op::Dropout(a, mask) => {
                send(*a, g.iter().zip(mask).map(|(&x, &k)| x * k).collect());
            }
            Op::Scale(a, f) => {
                send(*a, g.iter().map(|&x| x * *f).collect());
            }
            Op::Gather { table, indices } => {
                let (rows, cols) = self.shape(*table);
                let mut dt = vec![T::zero(); rows * cols];
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &x) in dt[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *d += x;
                    }
                }
                send(*table, dt);
            }
            Op::SegmentAttention {
                query,
                key,
                value,
                offsets,
                probs,
                scale,
            } => {
                let (b, d) = self.shape(*query);
                let dv = node.cols;
                let (q, k, v) = (self.value(*query), self.value(*key), self.value(*value));
                let nk = probs.len();
                let mut dq = vec![T::zero(); b * d];
                let mut dk = vec![T::zero(); nk * d];
                let mut dval = vec![T::zero(); nk * dv];
                let mut dprob = vec![T::zero(); nk];
                for r in 0..b {
                    let (s, e) = (offsets[r], offsets[r + 1]);
                    if s == e {
                        continue;
                    }
                    let gr = &g[r * dv..(r + 1) * dv];
                    for j in s..e {
                        axpy(&mut dval[j * dv..(j + 1) * dv], probs[j], gr);
                        dprob[j] = dot(gr, &v[j * dv..(j + 1) * dv]);
                    }
                    let inner: T = (s..e).map(|j| probs[j] * dprob[j]).sum();
                    let qr = &q[r * d..(r + 1) * d];
                    for j in s..e {
                        let ds = probs[j] * (dprob[j] - inner) * *scale;
                        axpy(&mut dq[r * d..(r + 1) * d], ds, &k[j * d..(j + 1) * d]);
                        axpy(&mut dk[j * d..(j + 1) * d], ds, qr);
                    }
                }
                send(*query, dq);
                send(*key, dk);
                send(*value, dval);
            }
            Op::Mix { gates, experts } => {
                let (b, n) = self.shape(*gates);
                let d = node.cols;
                let gv = self.value(*gates);
                let mut dg = vec![T::zero(); b * n];
                for (i, &e) in experts.iter().enumerate() {
                    let ev = self.value(e);
                    let mut de = vec![T::zero(); b * d];
                    for r in 0..b {
                        let gr = &g[r * d..(r + 1) * d];
                        dg[r * n + i] = dot(gr, &ev[r * d..(r + 1) * d]);
                        axpy(&mut de[r * d..(r + 1) * d], gv[r * n + i], gr);
                    }
                    send(e, de);
                }
                send(*gates, dg);
            }
            Op::Sum(a) => {
                let (m, n) = self.shape(*a);
                send(*a, vec![g[0]; m * n]);
            }
            Op::Nll {
                probs,
                labels,
                weights,
            } => {
                let (b, c) = self.shape(*probs);
                let p = self.value(*probs);
                let floor = T::lit(NLL_FLOOR);
                let mut dp = vec![T::zero(); b * c];
                for (r, (&l, &w)) in labels.iter().zip(weights).enumerate() {
                    let pv = p[r * c + l];
                    if w != T::zero() && pv > floor {
                        dp[r * c + l] = -w / pv * g[0];
                    }
                }
                send(*probs, dp);
            }
        }
    }
}

const NLL_FLOOR: f64 = 1e-12;

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += a · b` for row-major `a` (m×k) and `b` (k×n). Each output row
/// depends only on the matching row of `a`, so results are independent of
/// batch composition.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(orow, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}
