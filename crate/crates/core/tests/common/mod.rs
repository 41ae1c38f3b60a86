//! Shared test support: a naive reference transformer and small fixtures.
#![allow(dead_code)]

use e2eqr::model::{E2eqr, EncodedExample, ModelConfig, StepInput};

pub type Mat = Vec<Vec<f64>>;

fn param(model: &E2eqr<f64>, name: &str) -> Vec<f64> {
    model
        .params()
        .by_name(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"))
        .value()
        .to_vec()
}

fn weight(model: &E2eqr<f64>, name: &str) -> Mat {
    let p = model.params().by_name(name).unwrap();
    let (r, c) = (p.shape()[0], p.shape()[1]);
    let v = p.value();
    (0..r).map(|i| v[i * c..(i + 1) * c].to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn linear(m: &E2eqr<f64>, x: &Mat, name: &str) -> Mat {
    let w = weight(m, &format!("{name}.w"));
    let b = param(m, &format!("{name}.b"));
    matmul(x, &w)
        .into_iter()
        .map(|r| r.iter().zip(&b).map(|(x, y)| x + y).collect())
        .collect()
}

fn layer_norm(m: &E2eqr<f64>, x: &Mat, name: &str) -> Mat {
    let g = param(m, &format!("{name}.gain"));
    let b = param(m, &format!("{name}.bias"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            let s = (var + 1e-5).sqrt();
            r.iter().enumerate().map(|(i, v)| (v - mu) / s * g[i] + b[i]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Multi-head attention where `visible(i, j)` says whether query `i` may
/// see key `j`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, heads: usize, visible: impl Fn(usize, usize) -> bool) -> Mat {
    let d = q[0].len();
    let dk = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<Option<f64>> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| {
                    visible(i, j).then(|| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dk as f64).sqrt())
                })
                .collect();
            let mx = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - mx).exp())).collect();
            let z: f64 = e.iter().sum();
            for (j, vj) in v.iter().enumerate() {
                for c in cols.clone() {
                    out[i][c] += e[j] / z * vj[c];
                }
            }
        }
    }
    out
}

fn embed(m: &E2eqr<f64>, table: &str, tokens: &[u32]) -> Mat {
    let w = weight(m, table);
    let d = w[0].len();
    tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..d)
                .map(|i| {
                    let angle = p as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                    w[t as usize][i] * (d as f64).sqrt() + pe
                })
                .collect()
        })
        .collect()
}

fn ffn(m: &E2eqr<f64>, x: &Mat, name: &str) -> Mat {
    let h: Mat = linear(m, x, &format!("{name}.up"))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    linear(m, &h, &format!("{name}.down"))
}

/// Plain encoder–decoder transformer (no accumulation): logits of the
/// decoder over `dec_tokens` given `enc_tokens`.
pub fn reference_seq2seq(m: &E2eqr<f64>, enc_tokens: &[u32], dec_tokens: &[u32]) -> Mat {
    let cfg = m.config();
    let heads = cfg.n_heads;
    let mut x = embed(m, "enc.embed", enc_tokens);
    for l in 0..cfg.n_enc_layers {
        let p = format!("enc.layer{l}");
        let h = layer_norm(m, &x, &format!("{p}.ln1"));
        let a = attention(
            &linear(m, &h, &format!("{p}.sa.q")),
            &linear(m, &h, &format!("{p}.sa.k")),
            &linear(m, &h, &format!("{p}.sa.v")),
            heads,
            |_, _| true,
        );
        x = add(&x, &linear(m, &a, &format!("{p}.sa.o")));
        let h = layer_norm(m, &x, &format!("{p}.ln2"));
        x = add(&x, &ffn(m, &h, &format!("{p}.ffn")));
    }
    let memory = layer_norm(m, &x, "enc.norm");

    let mut y = embed(m, "dec.embed", dec_tokens);
    for l in 0..cfg.n_dec_layers {
        let p = format!("dec.layer{l}");
        let h = layer_norm(m, &y, &format!("{p}.ln1"));
        let a = attention(
            &linear(m, &h, &format!("{p}.sa.q")),
            &linear(m, &h, &format!("{p}.sa.k")),
            &linear(m, &h, &format!("{p}.sa.v")),
            heads,
            |i, j| j <= i,
        );
        y = add(&y, &linear(m, &a, &format!("{p}.sa.o")));
        let h = layer_norm(m, &y, &format!("{p}.ln2"));
        let a = attention(
            &linear(m, &h, &format!("{p}.ca.q")),
            &linear(m, &memory, &format!("{p}.ca.k")),
            &linear(m, &memory, &format!("{p}.ca.v")),
            heads,
            |_, _| true,
        );
        y = add(&y, &linear(m, &a, &format!("{p}.ca.o")));
        let h = layer_norm(m, &y, &format!("{p}.ln3"));
        y = add(&y, &ffn(m, &h, &format!("{p}.ffn")));
    }
    linear(m, &layer_norm(m, &y, "dec.norm"), "dec.out")
}

pub fn small_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        n_enc_layers: 2,
        n_dec_layers: 2,
        max_len: 24,
        ..ModelConfig::default()
    }
}

/// Random example with `steps` steps over token ids `8..vocab`.
pub fn random_example(rng: &mut impl rand::Rng, vocab: usize, steps: usize) -> EncodedExample {
    let mut toks = |n: usize| (0..n).map(|_| rng.gen_range(8..vocab as u32)).collect::<Vec<_>>();
    let inputs: Vec<StepInput> = (0..steps)
        .map(|i| StepInput {
            tokens: toks(4 + i),
            step_index: i + 1,
        })
        .collect();
    EncodedExample {
        id: format!("rand-{steps}"),
        hops: steps,
        steps: inputs,
        gold: toks(5),
    }
}

/// Decodes every step of `ex` greedily one token at a time against the
/// sealed cache (at most `max_tokens` tokens per step), then recomputes each
/// step from scratch by replaying all earlier steps in batched passes.
/// Returns the largest per-logit deviation and the decoded questions.
pub fn incremental_vs_replay(model: &E2eqr<f64>, ex: &EncodedExample, max_tokens: usize) -> (f64, Vec<Vec<u32>>) {
    use e2eqr::model::{argmax_lowest, RewriteSession};
    use e2eqr::vocab::{BOS_ID, EOS_ID};

    let mut inc = RewriteSession::new(model, false);
    let mut questions = Vec::new();
    let mut inc_logits: Vec<Vec<Vec<f64>>> = Vec::new();
    for input in &ex.steps {
        let h = inc.encode(input).unwrap();
        let mut state = inc.begin_step(h).unwrap();
        let (mut token, mut out, mut rows) = (BOS_ID, Vec::new(), Vec::new());
        loop {
            let l = inc.decode_token(&mut state, token).unwrap();
            let row = inc.graph().data(l).to_vec();
            let next = argmax_lowest(&row) as u32;
            rows.push(row);
            if next == EOS_ID || out.len() == max_tokens {
                break;
            }
            out.push(next);
            token = next;
        }
        inc.seal(state).unwrap();
        questions.push(out);
        inc_logits.push(rows);
    }

    let mut worst = 0.0f64;
    for t in 0..ex.steps.len() {
        let mut full = RewriteSession::new(model, false);
        for s in 0..t {
            let h = full.encode(&ex.steps[s]).unwrap();
            full.replay_step(h, &questions[s], BOS_ID).unwrap();
        }
        let h = full.encode(&ex.steps[t]).unwrap();
        let mut state = full.begin_step(h).unwrap();
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&questions[t]);
        let l = full.feed(&mut state, &input).unwrap();
        let data = full.graph().data(l);
        let v = model.config().vocab_size;
        assert_eq!(data.len(), inc_logits[t].len() * v);
        for (i, row) in inc_logits[t].iter().enumerate() {
            for (a, b) in row.iter().zip(&data[i * v..(i + 1) * v]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    (worst, questions)
}
