use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionCache, ModelConfig, ModelError};
use crate::tensor::{AttentionSpec, Graph, ParamId, ParamStore, Real, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Ffn {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncLayer {
    ln1: Norm,
    sa: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    ln1: Norm,
    sa: Attn,
    ln2: Norm,
    ca: Attn,
    ln3: Norm,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_embed: ParamId,
    enc_layers: Vec<EncLayer>,
    enc_norm: Norm,
    dec_embed: ParamId,
    dec_layers: Vec<DecLayer>,
    dec_norm: Norm,
    out: Linear,
}

/// Encoder–decoder transformer: sinusoidal positions, pre-norm residual
/// blocks, GELU feed-forward, no weight tying.
#[derive(Clone, Debug)]
pub struct E2eqr<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
    positions: Vec<T>,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> Result<ParamId, ModelError> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.gen_range(-bound..bound))).collect();
        Ok(self.store.insert(name, Tensor::new(shape, data)?)?)
    }

    fn fill(&mut self, name: String, n: usize, v: f64) -> Result<ParamId, ModelError> {
        Ok(self.store.insert(name, Tensor::new(vec![n], vec![T::of(v); n])?)?)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear, ModelError> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Linear {
            w: self.uniform(format!("{name}.w"), vec![fan_in, fan_out], bound)?,
            b: self.fill(format!("{name}.b"), fan_out, 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm, ModelError> {
        Ok(Norm {
            gain: self.fill(format!("{name}.gain"), d, 1.0)?,
            bias: self.fill(format!("{name}.bias"), d, 0.0)?,
        })
    }

    fn attn(&mut self, name: &str, d: usize) -> Result<Attn, ModelError> {
        Ok(Attn {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            o: self.linear(&format!("{name}.o"), d, d)?,
        })
    }

    fn ffn(&mut self, name: &str, d: usize, d_ff: usize) -> Result<Ffn, ModelError> {
        Ok(Ffn {
            up: self.linear(&format!("{name}.up"), d, d_ff)?,
            down: self.linear(&format!("{name}.down"), d_ff, d)?,
        })
    }
}

fn sinusoidal_table<T: Real>(max_len: usize, d: usize) -> Vec<T> {
    let mut pe = vec![T::zero(); max_len * d];
    for p in 0..max_len {
        for i in 0..d {
            let expo = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(expo);
            pe[p * d + i] = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

impl<T: Real> E2eqr<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, v) = (config.d_model, config.vocab_size);
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let emb_bound = (3.0 / d as f64).sqrt();
        let enc_embed = init.uniform("enc.embed".into(), vec![v, d], emb_bound)?;
        let mut enc_layers = Vec::new();
        for i in 0..config.n_enc_layers {
            let p = format!("enc.layer{i}");
            enc_layers.push(EncLayer {
                ln1: init.norm(&format!("{p}.ln1"), d)?,
                sa: init.attn(&format!("{p}.sa"), d)?,
                ln2: init.norm(&format!("{p}.ln2"), d)?,
                ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff)?,
            });
        }
        let enc_norm = init.norm("enc.norm", d)?;
        let dec_embed = init.uniform("dec.embed".into(), vec![v, d], emb_bound)?;
        let mut dec_layers = Vec::new();
        for i in 0..config.n_dec_layers {
            let p = format!("dec.layer{i}");
            dec_layers.push(DecLayer {
                ln1: init.norm(&format!("{p}.ln1"), d)?,
                sa: init.attn(&format!("{p}.sa"), d)?,
                ln2: init.norm(&format!("{p}.ln2"), d)?,
                ca: init.attn(&format!("{p}.ca"), d)?,
                ln3: init.norm(&format!("{p}.ln3"), d)?,
                ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff)?,
            });
        }
        let dec_norm = init.norm("dec.norm", d)?;
        let out = init.linear("dec.out", d, v)?;
        let layout = Layout {
            enc_embed,
            enc_layers,
            enc_norm,
            dec_embed,
            dec_layers,
            dec_norm,
            out,
        };
        let positions = sinusoidal_table(config.max_len, d);
        Ok(Self {
            config,
            params: store,
            layout,
            positions,
        })
    }

    /// Rebuilds a model around loaded parameters; names and shapes must match
    /// a freshly initialized model of the same config.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Contract(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (id, p) in model.params.iter() {
            let q = params.get(id);
            if q.name() != p.name() || q.shape() != p.shape() {
                return Err(ModelError::Contract(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    q.name(),
                    q.shape(),
                    p.name(),
                    p.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Switches the accumulated attention modes (ablations).
    pub fn set_accumulation(&mut self, sa: bool, ca: bool) {
        self.config.mode_accumulated_sa = sa;
        self.config.mode_accumulated_ca = ca;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn p(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        g.param(&self.params, id)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, l: Linear) -> Result<Var, ModelError> {
        let (w, b) = (self.p(g, l.w), self.p(g, l.b));
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, n: Norm) -> Result<Var, ModelError> {
        let (gain, bias) = (self.p(g, n.gain), self.p(g, n.bias));
        Ok(g.layer_norm(x, gain, bias, T::of(LN_EPS))?)
    }

    fn ffn(&self, g: &mut Graph<T>, x: Var, f: Ffn) -> Result<Var, ModelError> {
        let h = self.linear(g, x, f.up)?;
        let h = g.gelu(h);
        self.linear(g, h, f.down)
    }

    fn spec(&self, causal: bool, query_offset: usize) -> AttentionSpec {
        AttentionSpec {
            heads: self.config.n_heads,
            causal,
            query_offset,
        }
    }

    /// Token embeddings scaled by `sqrt(d_model)` plus sinusoidal positions
    /// `start..start + tokens.len()`.
    fn embed(&self, g: &mut Graph<T>, table: ParamId, tokens: &[u32], start: usize) -> Result<Var, ModelError> {
        let d = self.config.d_model;
        if start + tokens.len() > self.config.max_len {
            return Err(ModelError::Length {
                what: "sequence",
                len: start + tokens.len(),
                max: self.config.max_len,
            });
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let t = self.p(g, table);
        let e = g.embedding(t, &ids)?;
        let e = g.scale(e, T::of(d as f64).sqrt());
        let pe = self.positions[start * d..(start + tokens.len()) * d].to_vec();
        let pe = g.constant_matrix(tokens.len(), d, pe)?;
        Ok(g.add(e, pe)?)
    }

    /// Encoder stack over one step's input; returns `H_t` (`l_t × d_model`).
    pub fn encode(&self, g: &mut Graph<T>, tokens: &[u32]) -> Result<Var, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Contract("empty encoder input".into()));
        }
        let mut x = self.embed(g, self.layout.enc_embed, tokens, 0)?;
        for layer in &self.layout.enc_layers {
            let h = self.norm(g, x, layer.ln1)?;
            let q = self.linear(g, h, layer.sa.q)?;
            let k = self.linear(g, h, layer.sa.k)?;
            let v = self.linear(g, h, layer.sa.v)?;
            let a = g.attention(q, &[], (k, v), self.spec(false, 0))?;
            let o = self.linear(g, a, layer.sa.o)?;
            x = g.add(x, o)?;
            let h = self.norm(g, x, layer.ln2)?;
            let f = self.ffn(g, h, layer.ffn)?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, self.layout.enc_norm)
    }

    /// Cross-attention key/value projections of `H_t` for every decoder layer.
    pub fn cross_blocks(&self, g: &mut Graph<T>, h: Var) -> Result<Vec<(Var, Var)>, ModelError> {
        self.layout
            .dec_layers
            .iter()
            .map(|layer| {
                let k = self.linear(g, h, layer.ca.k)?;
                let v = self.linear(g, h, layer.ca.v)?;
                Ok((k, v))
            })
            .collect()
    }

    /// Runs the decoder layers over `tokens` placed at positions
    /// `start..start + n` of the current step.
    ///
    /// `rows` holds the current step's self-attention keys/values for
    /// positions `0..start` per layer and is extended with the new rows.
    /// Returns the final hidden states (before the output norm).
    pub(crate) fn decoder_layers(
        &self,
        g: &mut Graph<T>,
        tokens: &[u32],
        start: usize,
        rows: &mut [Option<(Var, Var)>],
        cache: &AttentionCache,
        cross: &[(Var, Var)],
    ) -> Result<Var, ModelError> {
        let mut x = self.embed(g, self.layout.dec_embed, tokens, start)?;
        for (l, layer) in self.layout.dec_layers.iter().enumerate() {
            let h = self.norm(g, x, layer.ln1)?;
            let q = self.linear(g, h, layer.sa.q)?;
            let k = self.linear(g, h, layer.sa.k)?;
            let v = self.linear(g, h, layer.sa.v)?;
            let (k, v) = match rows[l] {
                Some((pk, pv)) => (g.concat_rows(&[pk, k])?, g.concat_rows(&[pv, v])?),
                None if start == 0 => (k, v),
                None => {
                    return Err(ModelError::Contract(format!(
                        "decoding position {start} without earlier rows"
                    )))
                }
            };
            if g.rows(k) != start + tokens.len() {
                return Err(ModelError::Contract("within-step rows out of sync".into()));
            }
            rows[l] = Some((k, v));
            let prior: &[(Var, Var)] = if self.config.mode_accumulated_sa {
                &cache.layer(l).sa
            } else {
                &[]
            };
            let a = g.attention(q, prior, (k, v), self.spec(true, start))?;
            let o = self.linear(g, a, layer.sa.o)?;
            x = g.add(x, o)?;

            let h = self.norm(g, x, layer.ln2)?;
            let q = self.linear(g, h, layer.ca.q)?;
            let prior: &[(Var, Var)] = if self.config.mode_accumulated_ca {
                &cache.layer(l).ca
            } else {
                &[]
            };
            let a = g.attention(q, prior, cross[l], self.spec(false, 0))?;
            let o = self.linear(g, a, layer.ca.o)?;
            x = g.add(x, o)?;

            let h = self.norm(g, x, layer.ln3)?;
            let f = self.ffn(g, h, layer.ffn)?;
            x = g.add(x, f)?;
        }
        Ok(x)
    }

    /// Output norm and vocabulary projection.
    pub(crate) fn logits(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let h = self.norm(g, x, self.layout.dec_norm)?;
        self.linear(g, h, self.layout.out)
    }

    pub(crate) fn n_dec_layers(&self) -> usize {
        self.layout.dec_layers.len()
    }
}
