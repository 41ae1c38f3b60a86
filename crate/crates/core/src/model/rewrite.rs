use super::{AttentionCache, E2eqr, ModelError};
use crate::docgraph::{assemble_step_input, ArrangedExample};
use crate::tensor::{AttentionSpec, Graph, Real, Var};
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID};

/// Encoder input of one rewriting step (1-based `step_index`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInput {
    pub tokens: Vec<u32>,
    pub step_index: usize,
}

/// A fully tokenized arranged example: one input per step plus the gold
/// final question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub id: String,
    pub hops: usize,
    pub steps: Vec<StepInput>,
    pub gold: Vec<u32>,
}

impl EncodedExample {
    pub fn from_arranged(
        ex: &ArrangedExample,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self, crate::docgraph::ArrangeError> {
        let n = ex.documents.len();
        let mut steps = Vec::with_capacity(n);
        for (t, doc) in ex.documents.iter().enumerate() {
            let bridges = ex.bridges.get(t).map(|b| b.as_slice());
            let tokens = assemble_step_input(doc, bridges, &ex.answer, max_len)?;
            steps.push(StepInput {
                tokens: vocab.encode(&tokens),
                step_index: t + 1,
            });
        }
        Ok(Self {
            id: ex.id.clone(),
            hops: ex.hops,
            steps,
            gold: vocab.encode(&ex.gold_question),
        })
    }

    /// Final-step targets: the gold question followed by `<eos>`.
    pub fn targets(&self) -> Vec<usize> {
        self.gold
            .iter()
            .map(|&t| t as usize)
            .chain(std::iter::once(EOS_ID as usize))
            .collect()
    }
}

/// Decoder state inside one step: the step's encoder output, its
/// cross-attention projections, and the self-attention rows fed so far.
#[derive(Clone, Debug)]
pub struct StepState {
    pub encoder_output: Var,
    cross: Vec<(Var, Var)>,
    rows: Vec<Option<(Var, Var)>>,
    position: usize,
}

impl StepState {
    /// Number of decoder positions fed in this step.
    pub fn position(&self) -> usize {
        self.position
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutput {
    pub question_tokens: Vec<u32>,
    pub encoder_output: Var,
    /// Generation hit `max_len` before `<eos>`.
    pub truncated: bool,
}

/// Lowest index among the maximal entries.
pub fn argmax_lowest<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Scaled dot-product attention of `q` over `[blocks; current]`.
///
/// Every query row sees all rows of `blocks`. With `causal_within_step`,
/// query `i` sees current rows `0..=i`; otherwise all current rows.
pub fn accumulated_attention<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    blocks: &[(Var, Var)],
    current_k: Var,
    current_v: Var,
    causal_within_step: bool,
    heads: usize,
) -> Result<Var, ModelError> {
    let spec = AttentionSpec {
        heads,
        causal: causal_within_step,
        query_offset: 0,
    };
    Ok(g.attention(q, blocks, (current_k, current_v), spec)?)
}

/// Owns the graph and the accumulated cache for one example.
pub struct RewriteSession<'m, T: Real> {
    model: &'m E2eqr<T>,
    graph: Graph<T>,
    cache: AttentionCache,
}

impl<'m, T: Real> RewriteSession<'m, T> {
    /// `track_grads` selects a training graph; otherwise nothing is recorded
    /// for backward.
    pub fn new(model: &'m E2eqr<T>, track_grads: bool) -> Self {
        let graph = if track_grads { Graph::new() } else { Graph::inference() };
        Self {
            model,
            graph,
            cache: AttentionCache::new(model.n_dec_layers()),
        }
    }

    /// Builds on an existing (possibly non-empty) graph.
    pub fn with_graph(model: &'m E2eqr<T>, graph: Graph<T>) -> Self {
        Self {
            model,
            graph,
            cache: AttentionCache::new(model.n_dec_layers()),
        }
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }

    pub fn cache(&self) -> &AttentionCache {
        &self.cache
    }

    pub fn model(&self) -> &E2eqr<T> {
        self.model
    }

    pub fn encode(&mut self, input: &StepInput) -> Result<Var, ModelError> {
        self.model.encode(&mut self.graph, &input.tokens)
    }

    /// Starts decoding a step against encoder output `h`.
    pub fn begin_step(&mut self, h: Var) -> Result<StepState, ModelError> {
        let cross = self.model.cross_blocks(&mut self.graph, h)?;
        Ok(StepState {
            encoder_output: h,
            cross,
            rows: vec![None; self.model.n_dec_layers()],
            position: 0,
        })
    }

    /// Feeds `tokens` at the next positions of the step; returns logits
    /// (`tokens.len() × vocab_size`).
    pub fn feed(&mut self, state: &mut StepState, tokens: &[u32]) -> Result<Var, ModelError> {
        let x = self.feed_hidden(state, tokens)?;
        self.model.logits(&mut self.graph, x)
    }

    fn feed_hidden(&mut self, state: &mut StepState, tokens: &[u32]) -> Result<Var, ModelError> {
        let max = self.model.config().max_len;
        if state.position + tokens.len() > max {
            return Err(ModelError::Length {
                what: "decoder input",
                len: state.position + tokens.len(),
                max,
            });
        }
        let x = self.model.decoder_layers(
            &mut self.graph,
            tokens,
            state.position,
            &mut state.rows,
            &self.cache,
            &state.cross,
        )?;
        state.position += tokens.len();
        Ok(x)
    }

    /// One incremental decoder step for the newest position; returns
    /// `1 × vocab_size` logits.
    pub fn decode_token(&mut self, state: &mut StepState, token: u32) -> Result<Var, ModelError> {
        self.feed(state, &[token])
    }

    /// Appends the step's self-attention rows and cross-attention blocks to
    /// the cache.
    pub fn seal(&mut self, state: StepState) -> Result<(), ModelError> {
        let sa = state
            .rows
            .into_iter()
            .map(|r| r.ok_or_else(|| ModelError::Contract("sealing a step with no decoder rows".into())))
            .collect::<Result<Vec<_>, _>>()?;
        self.cache.seal(&self.graph, sa, state.cross);
        Ok(())
    }

    /// Greedy decoding from `<bos>` until `<eos>` or `max_len` decoder
    /// positions, then seals the step. The sealed self-attention block has
    /// one row for `<bos>` and one per emitted token; `<eos>` is not fed.
    pub fn greedy_decode_step(
        &mut self,
        h: Var,
        bos: u32,
        eos: u32,
        max_len: usize,
    ) -> Result<StepOutput, ModelError> {
        let max_len = max_len.min(self.model.config().max_len);
        let mut state = self.begin_step(h)?;
        let mut out = Vec::new();
        let mut token = bos;
        let truncated = loop {
            let logits = self.decode_token(&mut state, token)?;
            let next = argmax_lowest(self.graph.data(logits)) as u32;
            if next == eos {
                break false;
            }
            if state.position >= max_len {
                break true;
            }
            out.push(next);
            token = next;
        };
        self.seal(state)?;
        Ok(StepOutput {
            question_tokens: out,
            encoder_output: h,
            truncated,
        })
    }

    /// Recomputes a step's decoder rows for fixed `question` tokens in one
    /// batched pass and seals them.
    pub fn replay_step(&mut self, h: Var, question: &[u32], bos: u32) -> Result<(), ModelError> {
        let mut state = self.begin_step(h)?;
        let mut input = Vec::with_capacity(question.len() + 1);
        input.push(bos);
        input.extend_from_slice(question);
        self.feed_hidden(&mut state, &input)?;
        self.seal(state)
    }

    /// Teacher-forced pass over `[bos] + gold`; returns per-position logits
    /// (`(gold.len() + 1) × vocab_size`) and seals the step.
    pub fn teacher_forced_step(&mut self, h: Var, gold: &[u32], bos: u32) -> Result<Var, ModelError> {
        let mut state = self.begin_step(h)?;
        let mut input = Vec::with_capacity(gold.len() + 1);
        input.push(bos);
        input.extend_from_slice(gold);
        let logits = self.feed(&mut state, &input)?;
        self.seal(state)?;
        Ok(logits)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RewriteOptions<'a> {
    /// Gold final question; when set the last step runs under teacher forcing.
    pub teacher_forced_final: Option<&'a [u32]>,
    /// Fixed intermediate questions `Q^1..Q^{N-1}` used instead of greedy
    /// decoding.
    pub pinned_intermediates: Option<&'a [Vec<u32>]>,
    /// Decoding budget; defaults to the model's `max_len`.
    pub max_decode_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinalOutput {
    /// `(m_N + 1) × vocab_size` logits from teacher forcing.
    Logits(Var),
    Tokens { tokens: Vec<u32>, truncated: bool },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewriteOutput {
    pub intermediates: Vec<Vec<u32>>,
    pub intermediate_truncated: Vec<bool>,
    pub final_output: FinalOutput,
}

/// Runs every step of an example.
///
/// Steps `1..N-1` decode greedily (or use pinned questions) and seal their
/// blocks; step `N` decodes greedily or, with `teacher_forced_final`, returns
/// logits over the gold question. On a training graph the greedy search runs
/// without gradient tracking and the chosen tokens are then replayed in one
/// tracked pass, so gradients reach every earlier step through the sealed
/// key/value blocks but not through token identity.
pub fn rewrite_forward<T: Real>(
    session: &mut RewriteSession<'_, T>,
    example: &EncodedExample,
    opts: &RewriteOptions<'_>,
) -> Result<RewriteOutput, ModelError> {
    let n = example.steps.len();
    if n == 0 || example.hops != n {
        return Err(ModelError::Contract(format!(
            "example {} has {} step inputs for {} hops",
            example.id, n, example.hops
        )));
    }
    if let Some(p) = opts.pinned_intermediates {
        if p.len() != n - 1 {
            return Err(ModelError::Contract(format!(
                "{} pinned intermediates for {} hops",
                p.len(),
                n
            )));
        }
    }
    let max_len = opts.max_decode_len.unwrap_or(session.model.config().max_len);
    let mut intermediates = Vec::with_capacity(n - 1);
    let mut intermediate_truncated = Vec::with_capacity(n - 1);
    for (t, input) in example.steps.iter().enumerate().take(n - 1) {
        let h = session.encode(input)?;
        let (question, truncated) = match opts.pinned_intermediates {
            Some(p) => (p[t].clone(), false),
            None if !session.graph.grad_enabled() => {
                let out = session.greedy_decode_step(h, BOS_ID, EOS_ID, max_len)?;
                intermediates.push(out.question_tokens);
                intermediate_truncated.push(out.truncated);
                continue;
            }
            None => {
                // search without a tape, then replay the chosen tokens tracked
                let prev = session.graph.set_grad_enabled(false);
                let saved = session.cache.clone();
                let out = session.greedy_decode_step(h, BOS_ID, EOS_ID, max_len);
                session.cache = saved;
                session.graph.set_grad_enabled(prev);
                let out = out?;
                (out.question_tokens, out.truncated)
            }
        };
        session.replay_step(h, &question, BOS_ID)?;
        intermediates.push(question);
        intermediate_truncated.push(truncated);
    }
    let h = session.encode(&example.steps[n - 1])?;
    let final_output = match opts.teacher_forced_final {
        Some(gold) => FinalOutput::Logits(session.teacher_forced_step(h, gold, BOS_ID)?),
        None => {
            let out = session.greedy_decode_step(h, BOS_ID, EOS_ID, max_len)?;
            FinalOutput::Tokens {
                tokens: out.question_tokens,
                truncated: out.truncated,
            }
        }
    };
    Ok(RewriteOutput {
        intermediates,
        intermediate_truncated,
        final_output,
    })
}

/// Mean cross-entropy of teacher-forced final-step logits against
/// `gold + <eos>`.
pub fn final_step_loss<T: Real>(g: &mut Graph<T>, logits: Var, gold: &[u32]) -> Result<Var, ModelError> {
    let rows = g.rows(logits);
    if rows != gold.len() + 1 {
        return Err(ModelError::Contract(format!(
            "{rows} logit rows for a {}-token gold question",
            gold.len()
        )));
    }
    let targets: Vec<usize> = gold
        .iter()
        .map(|&t| t as usize)
        .chain(std::iter::once(EOS_ID as usize))
        .collect();
    Ok(g.cross_entropy(logits, &targets, &vec![true; rows])?)
}
