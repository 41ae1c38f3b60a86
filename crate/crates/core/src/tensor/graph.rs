use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{gelu, gelu_grad, normalize_row, softmax_in_place};
use super::{dim_err, gemm, MatMut, MatRef, ParamId, ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Masking and head layout for [`Graph::attention`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub heads: usize,
    /// Causal masking inside the current block.
    pub causal: bool,
    /// Position of query row 0 inside the current block (incremental decoding).
    pub query_offset: usize,
}

struct Node<T> {
    value: Arc<Vec<T>>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    tracked: bool,
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Attention(Box<AttentionRecord<T>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
}

struct AttentionRecord<T> {
    q: Var,
    keys: Vec<Var>,
    values: Vec<Var>,
    spec: AttentionSpec,
    /// `heads × m × total` attention weights, zero on masked entries.
    probs: Vec<T>,
}

/// Append-only tape of values and the operations that produced them.
///
/// The tape order is a topological order, so the graph is acyclic by
/// construction. With gradients disabled, new nodes keep their values but
/// record no backward information.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    bound: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of every bound parameter that the loss reached.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params
            .iter()
            .filter_map(move |&(id, v)| self.get(v).map(|g| (id, g)))
    }

    /// Adds `scale * grad` into each reached parameter's gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) {
        for (id, g) in self.params() {
            store.accumulate_grad(id, g, scale);
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            bound: HashMap::new(),
        }
    }

    /// A graph that never records backward information.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Returns the previous setting.
    pub fn set_grad_enabled(&mut self, on: bool) -> bool {
        std::mem::replace(&mut self.grad_enabled, on)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Arc::new(value),
            rows,
            cols,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn track(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn as_matrix(t: &Tensor<T>) -> Result<(usize, usize)> {
        if t.shape().len() > 2 {
            return Err(dim_err("graph", format!("only 1-D/2-D values, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let (r, c) = Self::as_matrix(&t).expect("constant must be 1-D or 2-D");
        self.push(t.into_data(), r, c, Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(dim_err("constant", format!("{rows}x{cols} vs {}", data.len())));
        }
        Ok(self.push(data, rows, cols, Op::Leaf, false))
    }

    /// Tracked leaf whose gradient can be read back from [`Gradients`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let (r, c) = Self::as_matrix(&t).expect("variable must be 1-D or 2-D");
        self.push(t.into_data(), r, c, Op::Leaf, true)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let node = Node {
            value: p.shared_value(),
            rows: p.rows(),
            cols: p.cols(),
            op: Op::Param,
            tracked: true,
        };
        self.nodes.push(node);
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.node(v).rows
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.node(v).tracked
    }

    // ── forward operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(dim_err("matmul", format!("({m}x{k})·({k2}x{n})")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::dense(self.data(a), m, k),
            MatRef::dense(self.data(b), k, n),
            MatMut::dense(&mut out, n),
            false,
        );
        let tr = self.track(&[a, b]);
        Ok(self.push(out, m, n, Op::MatMul(a, b), tr))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let tr = self.track(&[a]);
        self.push(out, n, m, Op::Transpose(a), tr)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let tr = self.track(&[a, b]);
        Ok(self.push(out, r, c, Op::Add(a, b), tr))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let tr = self.track(&[a, b]);
        Ok(self.push(out, r, c, Op::Mul(a, b), tr))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(dim_err("add_row", format!("bias {:?} for width {c}", self.shape(bias))));
        }
        let b = self.data(bias);
        let out = self
            .data(a)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let tr = self.track(&[a, bias]);
        Ok(self.push(out, r, c, Op::AddRow(a, bias), tr))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|&x| x * s).collect();
        let tr = self.track(&[a]);
        self.push(out, r, c, Op::Scale(a, s), tr)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|&x| gelu(x)).collect();
        let tr = self.track(&[a]);
        self.push(out, r, c, Op::Gelu(a), tr)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(dim_err("softmax", "empty rows"));
        }
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let tr = self.track(&[a]);
        Ok(self.push(out, r, c, Op::SoftmaxRows(a), tr))
    }

    /// Row-wise layer normalization with `1×d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (r, d) = self.shape(x);
        if d == 0 || self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(dim_err(
                "layer_norm",
                format!("x width {d}, gain {:?}, bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let mut xhat = Vec::with_capacity(r * d);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.data(x).chunks(d) {
            let (h, inv) = normalize_row(row, eps);
            xhat.extend(h);
            inv_std.push(inv);
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let out = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g.iter().zip(b)).map(|(&h, (&g, &b))| h * g + b))
            .collect();
        let tr = self.track(&[x, gain, bias]);
        Ok(self.push(
            out,
            r,
            d,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            tr,
        ))
    }

    /// Gathers rows of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "embedding",
                    index: id,
                    size: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let tr = self.track(&[table]);
        Ok(self.push(
            out,
            ids.len(),
            d,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            tr,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_rows", "no inputs"));
        };
        let c = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(dim_err("concat_rows", format!("width {pc} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.data(p));
        }
        let tr = self.track(parts);
        Ok(self.push(out, rows, c, Op::ConcatRows(parts.to_vec()), tr))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > r {
            return Err(dim_err("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.data(x)[start * c..(start + len) * c].to_vec();
        let tr = self.track(&[x]);
        Ok(self.push(out, len, c, Op::SliceRows { x, start }, tr))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let tr = self.track(&[a]);
        self.push(vec![s], 1, 1, Op::Sum(a), tr)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.data(a).len();
        if n == 0 {
            return Err(dim_err("mean", "empty input"));
        }
        let s = self.data(a).iter().copied().sum::<T>() / T::of(n as f64);
        let tr = self.track(&[a]);
        Ok(self.push(vec![s], 1, 1, Op::Mean(a), tr))
    }

    /// Multi-head scaled dot-product attention over a sequence of key/value
    /// blocks.
    ///
    /// Every query sees all rows of the `prior` blocks. Inside `current`,
    /// query `i` sees rows `0..=i + query_offset` when `spec.causal` is set and
    /// every row otherwise. Blocks are never concatenated; scores are computed
    /// block by block against their own storage.
    pub fn attention(
        &mut self,
        q: Var,
        prior: &[(Var, Var)],
        current: (Var, Var),
        spec: AttentionSpec,
    ) -> Result<Var> {
        let (m, d) = self.shape(q);
        if spec.heads == 0 || d % spec.heads != 0 {
            return Err(dim_err("attention", format!("width {d} not divisible by {} heads", spec.heads)));
        }
        let mut keys = Vec::with_capacity(prior.len() + 1);
        let mut values = Vec::with_capacity(prior.len() + 1);
        for &(k, v) in prior.iter().chain(std::iter::once(&current)) {
            let (kr, kc) = self.shape(k);
            let (vr, vc) = self.shape(v);
            if kc != d || vc != d {
                return Err(dim_err("attention", format!("block width {kc}/{vc}, query width {d}")));
            }
            if kr != vr {
                return Err(dim_err("attention", format!("key rows {kr} vs value rows {vr}")));
            }
            keys.push(k);
            values.push(v);
        }
        let block_rows: Vec<usize> = keys.iter().map(|&k| self.rows(k)).collect();
        let total: usize = block_rows.iter().sum();
        let prior_rows = total - block_rows[block_rows.len() - 1];
        let cur_rows = block_rows[block_rows.len() - 1];
        let visible = |i: usize| -> usize {
            if spec.causal {
                prior_rows + cur_rows.min(i + spec.query_offset + 1)
            } else {
                total
            }
        };
        if m > 0 && visible(0) == 0 {
            return Err(TensorError::Contract("attention query sees no key rows".into()));
        }

        let heads = spec.heads;
        let dk = d / heads;
        let scale = T::one() / T::of(dk as f64).sqrt();
        let mut probs = vec![T::zero(); heads * m * total];
        let mut out = vec![T::zero(); m * d];
        let qd = self.data(q);
        for h in 0..heads {
            let p = &mut probs[h * m * total..(h + 1) * m * total];
            let mut off = 0;
            for (&k, &n) in keys.iter().zip(&block_rows) {
                gemm(
                    MatRef::cols_of(qd, m, d, h * dk, dk),
                    MatRef::cols_of(self.data(k), n, d, h * dk, dk).t(),
                    MatMut {
                        data: &mut *p,
                        offset: off,
                        rs: total,
                        cs: 1,
                    },
                    false,
                );
                off += n;
            }
            for i in 0..m {
                let row = &mut p[i * total..(i + 1) * total];
                let vis = visible(i);
                for s in &mut row[..vis] {
                    *s *= scale;
                }
                softmax_in_place(&mut row[..vis]);
                for s in &mut row[vis..] {
                    *s = T::zero();
                }
            }
            let mut off = 0;
            for (b, (&v, &n)) in values.iter().zip(&block_rows).enumerate() {
                gemm(
                    MatRef {
                        data: &*p,
                        offset: off,
                        rows: m,
                        cols: n,
                        rs: total,
                        cs: 1,
                    },
                    MatRef::cols_of(self.data(v), n, d, h * dk, dk),
                    MatMut::cols_of(&mut out, d, h * dk),
                    b > 0,
                );
                off += n;
            }
        }
        let mut inputs = vec![q];
        inputs.extend(&keys);
        inputs.extend(&values);
        let tr = self.track(&inputs);
        let record = AttentionRecord {
            q,
            keys,
            values,
            spec,
            probs: if tr { probs } else { Vec::new() },
        };
        Ok(self.push(out, m, d, Op::Attention(Box::new(record)), tr))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (t, v) = self.shape(logits);
        if targets.len() != t || mask.len() != t {
            return Err(dim_err(
                "cross_entropy",
                format!("{t} rows, {} targets, {} mask entries", targets.len(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::Contract("cross_entropy with every position masked".into()));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = T::zero();
        for (i, row) in probs.chunks_mut(v).enumerate() {
            if !mask[i] {
                continue;
            }
            if targets[i] >= v {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: targets[i],
                    size: v,
                });
            }
            // log-sum-exp for the loss, softmax kept for backward
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[targets[i]];
            softmax_in_place(row);
        }
        loss /= T::of(count as f64);
        let tr = self.track(&[logits]);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs: if tr { probs } else { Vec::new() },
                count,
            },
            tr,
        ))
    }

    // ── reverse pass ────────────────────────────────────────────────

    /// Gradients of a scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_seeded(loss, T::one())
    }

    /// Backward pass, then adds the parameter gradients into `store`.
    /// Repeated calls accumulate until [`ParamStore::zero_grads`].
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?.accumulate_into(store, T::one());
        Ok(())
    }

    pub fn backward_seeded(&self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if self.node(loss).tracked {
            grads[loss.0] = Some(vec![seed]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = self.bound.iter().map(|(&id, &v)| (id, v)).collect::<Vec<_>>();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        let n = &self.nodes[v.0];
        if !n.tracked {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.rows * n.cols]))
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
        if let Some(buf) = self.acc(grads, v) {
            for (b, &d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(da) = self.acc(grads, *a) {
                    gemm(
                        MatRef::dense(g, m, n),
                        MatRef::dense(bd, k, n).t(),
                        MatMut::dense(da, k),
                        true,
                    );
                }
                if let Some(db) = self.acc(grads, *b) {
                    gemm(
                        MatRef::dense(ad, m, k).t(),
                        MatRef::dense(g, m, n),
                        MatMut::dense(db, n),
                        true,
                    );
                }
            }
            Op::Transpose(a) => {
                if let Some(da) = self.acc(grads, *a) {
                    // node is rows×cols, input is cols×rows
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, g);
                self.add_into(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let da: Vec<T> = g.iter().zip(self.data(*b)).map(|(&g, &y)| g * y).collect();
                let db: Vec<T> = g.iter().zip(self.data(*a)).map(|(&g, &x)| g * x).collect();
                self.add_into(grads, *a, &da);
                self.add_into(grads, *b, &db);
            }
            Op::AddRow(a, bias) => {
                self.add_into(grads, *a, g);
                if let Some(db) = self.acc(grads, *bias) {
                    for row in g.chunks(cols.max(1)) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                let d: Vec<T> = g.iter().map(|&x| x * *s).collect();
                self.add_into(grads, *a, &d);
            }
            Op::Gelu(a) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(&g, &x)| g * gelu_grad(x))
                    .collect();
                self.add_into(grads, *a, &d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((o, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (g - dot);
                    }
                }
                self.add_into(grads, *a, &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = cols;
                let gv = self.data(*gain);
                if let Some(dg) = self.acc(grads, *gain) {
                    for (hr, gr) in xhat.chunks(d).zip(g.chunks(d)) {
                        for ((o, &h), &gg) in dg.iter_mut().zip(hr).zip(gr) {
                            *o += h * gg;
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *bias) {
                    for gr in g.chunks(d) {
                        for (o, &gg) in db.iter_mut().zip(gr) {
                            *o += gg;
                        }
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let n = T::of(d as f64);
                    for r in 0..rows {
                        let hr = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_h: T = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        let inv = inv_std[r] / n;
                        for j in 0..d {
                            dx[r * d + j] += inv * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            dt[id * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.data(p).len();
                    self.add_into(grads, p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let off = start * cols;
                    for (o, &v) in dx[off..off + g.len()].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.data(*a).len()];
                self.add_into(grads, *a, &d);
            }
            Op::Mean(a) => {
                let n = self.data(*a).len();
                let d = vec![g[0] / T::of(n as f64); n];
                self.add_into(grads, *a, &d);
            }
            Op::Attention(rec) => self.backward_attention(rec, rows, cols, g, grads),
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if let Some(dl) = self.acc(grads, *logits) {
                    let v = self.shape(*logits).1;
                    let s = g[0] / T::of(*count as f64);
                    for (i, &keep) in mask.iter().enumerate() {
                        if !keep {
                            continue;
                        }
                        for j in 0..v {
                            dl[i * v + j] += s * probs[i * v + j];
                        }
                        dl[i * v + targets[i]] -= s;
                    }
                }
            }
        }
    }

    fn backward_attention(
        &self,
        rec: &AttentionRecord<T>,
        m: usize,
        d: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let heads = rec.spec.heads;
        let dk = d / heads;
        let scale = T::one() / T::of(dk as f64).sqrt();
        let block_rows: Vec<usize> = rec.keys.iter().map(|&k| self.rows(k)).collect();
        let total: usize = block_rows.iter().sum();
        let qd = self.data(rec.q);

        let mut dq = vec![T::zero(); m * d];
        let mut dks: Vec<Vec<T>> = block_rows.iter().map(|&n| vec![T::zero(); n * d]).collect();
        let mut dvs: Vec<Vec<T>> = block_rows.iter().map(|&n| vec![T::zero(); n * d]).collect();
        let mut dp = vec![T::zero(); m * total];

        for h in 0..heads {
            let p = &rec.probs[h * m * total..(h + 1) * m * total];
            let mut off = 0;
            for (b, &n) in block_rows.iter().enumerate() {
                let vd = self.data(rec.values[b]);
                // dP = dO_h · V_hᵀ
                gemm(
                    MatRef::cols_of(g, m, d, h * dk, dk),
                    MatRef::cols_of(vd, n, d, h * dk, dk).t(),
                    MatMut {
                        data: &mut dp,
                        offset: off,
                        rs: total,
                        cs: 1,
                    },
                    false,
                );
                // dV_h += Pᵀ · dO_h
                gemm(
                    MatRef {
                        data: p,
                        offset: off,
                        rows: m,
                        cols: n,
                        rs: total,
                        cs: 1,
                    }
                    .t(),
                    MatRef::cols_of(g, m, d, h * dk, dk),
                    MatMut::cols_of(&mut dvs[b], d, h * dk),
                    true,
                );
                off += n;
            }
            // dS = P ⊙ (dP - rowsum(P ⊙ dP)), folded with the score scale
            for i in 0..m {
                let pr = &p[i * total..(i + 1) * total];
                let dr = &mut dp[i * total..(i + 1) * total];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot) * scale;
                }
            }
            let mut off = 0;
            for (b, &n) in block_rows.iter().enumerate() {
                let kd = self.data(rec.keys[b]);
                let ds = MatRef {
                    data: &dp[..],
                    offset: off,
                    rows: m,
                    cols: n,
                    rs: total,
                    cs: 1,
                };
                gemm(
                    ds,
                    MatRef::cols_of(kd, n, d, h * dk, dk),
                    MatMut::cols_of(&mut dq, d, h * dk),
                    true,
                );
                gemm(
                    ds.t(),
                    MatRef::cols_of(qd, m, d, h * dk, dk),
                    MatMut::cols_of(&mut dks[b], d, h * dk),
                    true,
                );
                off += n;
            }
        }
        self.add_into(grads, rec.q, &dq);
        for (b, dk_b) in dks.iter().enumerate() {
            self.add_into(grads, rec.keys[b], dk_b);
        }
        for (b, dv_b) in dvs.iter().enumerate() {
            self.add_into(grads, rec.values[b], dv_b);
        }
    }
}
