use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    SelfAttention,
    CrossAttention,
}

/// Sealed key/value blocks of one decoder layer, one entry per completed step.
///
/// Blocks are `rows × d_model`; head `h` is the column range
/// `h*d_k..(h+1)*d_k`.
#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    pub sa: Vec<(Var, Var)>,
    pub ca: Vec<(Var, Var)>,
}

/// Accumulated attention state carried from step to step.
///
/// Append-only: a sealed block is an immutable graph node and is never
/// replaced. After step `t`, the self-attention blocks hold
/// `step_lengths[..t].sum()` rows and the cross-attention blocks hold
/// `context_lengths[..t].sum()` rows in every layer.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    layers: Vec<LayerCache>,
    step_lengths: Vec<usize>,
    context_lengths: Vec<usize>,
}

impl AttentionCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            layers: vec![LayerCache::default(); n_layers],
            step_lengths: Vec::new(),
            context_lengths: Vec::new(),
        }
    }

    pub fn layer(&self, l: usize) -> &LayerCache {
        &self.layers[l]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Completed steps.
    pub fn steps(&self) -> usize {
        self.step_lengths.len()
    }

    /// Decoder rows sealed per step (`<bos>` plus generated tokens).
    pub fn step_lengths(&self) -> &[usize] {
        &self.step_lengths
    }

    /// Encoder rows sealed per step.
    pub fn context_lengths(&self) -> &[usize] {
        &self.context_lengths
    }

    pub fn sa_rows(&self) -> usize {
        self.step_lengths.iter().sum()
    }

    pub fn ca_rows(&self) -> usize {
        self.context_lengths.iter().sum()
    }

    pub(crate) fn seal<T: Real>(
        &mut self,
        graph: &Graph<T>,
        sa: Vec<(Var, Var)>,
        ca: Vec<(Var, Var)>,
    ) {
        assert_eq!(sa.len(), self.layers.len());
        assert_eq!(ca.len(), self.layers.len());
        let m = graph.rows(sa[0].0);
        let l = graph.rows(ca[0].0);
        for (layer, (s, c)) in self.layers.iter_mut().zip(sa.into_iter().zip(ca)) {
            debug_assert_eq!(graph.rows(s.0), m);
            debug_assert_eq!(graph.rows(c.0), l);
            layer.sa.push(s);
            layer.ca.push(c);
        }
        self.step_lengths.push(m);
        self.context_lengths.push(l);
    }

    /// Keys and values of one head for one sealed step, as
    /// `(rows × d_k, rows × d_k)` tensors.
    pub fn head_block<T: Real>(
        &self,
        graph: &Graph<T>,
        layer: usize,
        kind: BlockKind,
        step: usize,
        head: usize,
        n_heads: usize,
    ) -> (Tensor<T>, Tensor<T>) {
        let (k, v) = match kind {
            BlockKind::SelfAttention => self.layers[layer].sa[step],
            BlockKind::CrossAttention => self.layers[layer].ca[step],
        };
        let slice = |var: Var| {
            let (rows, d) = graph.shape(var);
            let dk = d / n_heads;
            let data = graph.data(var);
            let out = (0..rows)
                .flat_map(|r| data[r * d + head * dk..r * d + (head + 1) * dk].iter().copied())
                .collect();
            Tensor::matrix(rows, dk, out).expect("head block shape")
        };
        (slice(k), slice(v))
    }
}
