use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
}

/// Denominator floor of [`relative_error`]. Central differences of an O(1)
/// loss carry roughly `1e-16 / eps` of rounding noise, so coordinates whose
/// true gradient is zero (attention key biases, for one) would otherwise
/// report noise as a large relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `backward()` against central differences on `n_samples`
/// parameter coordinates drawn uniformly (with `seed`) over every element
/// of `store`.
///
/// `loss` builds the scalar loss on a fresh graph; it must be a deterministic
/// function of the parameter values. The store's values are restored and its
/// gradient buffers are left untouched.
pub fn grad_check<E, F>(
    mut loss: F,
    store: &mut ParamStore<f64>,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var, E>,
{
    if n_samples == 0 {
        log::warn!("grad_check called with n_samples = 0; nothing checked");
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            samples: Vec::new(),
        });
    }
    let total = store.num_elements();
    if total == 0 {
        return Err(TensorError::Contract("grad_check on an empty parameter store".into()).into());
    }

    let mut g = Graph::new();
    let out = loss(store, &mut g)?;
    let grads = g.backward(out)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, gr) in grads.params() {
        analytic[id.index()] = Some(gr.to_vec());
    }
    drop(grads);
    drop(g);

    let offsets: Vec<usize> = store
        .iter()
        .scan(0, |acc, (_, p)| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64, E> {
        let mut g = Graph::inference();
        let v = loss(store, &mut g)?;
        Ok(g.scalar(v))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_samples {
        let flat = rng.gen_range(0..total);
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let index = flat - offsets[pi];
        let id = ids[pi];
        let a = analytic[pi].as_ref().map_or(0.0, |g| g[index]);

        let orig = store.get(id).value()[index];
        store.get_mut(id).value_mut()[index] = orig + eps;
        let plus = eval(store);
        store.get_mut(id).value_mut()[index] = orig - eps;
        let minus = eval(store);
        store.get_mut(id).value_mut()[index] = orig;
        let n = (plus? - minus?) / (2.0 * eps);

        let rel = relative_error(a, n);
        max_rel = max_rel.max(rel);
        samples.push(GradSample {
            param: store.get(id).name().to_string(),
            index,
            analytic: a,
            numeric: n,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{AttentionSpec, Tensor};

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn quadratic_form_is_exact() {
        // f = sum((x·A) ⊙ x)
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = store.insert("a", random_tensor(&mut rng, 4, 4)).unwrap();
        let x = store.insert("x", random_tensor(&mut rng, 1, 4)).unwrap();
        let report = grad_check::<TensorError, _>(
            |s, g| {
                let (av, xv) = (g.param(s, a), g.param(s, x));
                let xa = g.matmul(xv, av)?;
                let p = g.mul(xa, xv)?;
                Ok(g.sum(p))
            },
            &mut store,
            1e-4,
            40,
            7,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn zero_samples_returns_zero() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::<f64>::zeros(vec![2])).unwrap();
        let r = grad_check::<TensorError, _>(
            |s, g| {
                let w = g.param(s, s.id("w").unwrap());
                Ok(g.sum(w))
            },
            &mut store,
            1e-4,
            0,
            0,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.samples.is_empty());
    }

    #[test]
    fn composite_of_every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let emb = store.insert("emb", random_tensor(&mut rng, 6, 4)).unwrap();
        let w = store.insert("w", random_tensor(&mut rng, 4, 4)).unwrap();
        let b = store.insert("b", random_tensor(&mut rng, 1, 4)).unwrap();
        let gain = store.insert("gain", random_tensor(&mut rng, 1, 4)).unwrap();
        let bias = store.insert("bias", random_tensor(&mut rng, 1, 4)).unwrap();
        let prior = store.insert("prior", random_tensor(&mut rng, 2, 4)).unwrap();
        let out = store.insert("out", random_tensor(&mut rng, 4, 6)).unwrap();
        let report = grad_check::<TensorError, _>(
            |s, g| {
                let e = g.param(s, emb);
                let x = g.embedding(e, &[1, 4, 2])?;
                let x = g.scale(x, 1.3);
                let (wv, bv) = (g.param(s, w), g.param(s, b));
                let h = g.matmul(x, wv)?;
                let h = g.add_row(h, bv)?;
                let h = g.gelu(h);
                let (gv, biv) = (g.param(s, gain), g.param(s, bias));
                let h = g.layer_norm(h, gv, biv, 1e-5)?;
                let pv = g.param(s, prior);
                let kt = g.transpose(h);
                let k = g.transpose(kt);
                let spec = AttentionSpec {
                    heads: 2,
                    causal: true,
                    query_offset: 0,
                };
                let a = g.attention(h, &[(pv, pv)], (k, h), spec)?;
                let a = g.add(a, h)?;
                let first = g.slice_rows(a, 0, 2)?;
                let cat = g.concat_rows(&[first, a])?;
                let ov = g.param(s, out);
                let logits = g.matmul(cat, ov)?;
                let sm = g.softmax_rows(logits)?;
                let smm = g.mean(sm)?;
                let ce = g.cross_entropy(logits, &[0, 5, 2, 3, 1], &[true, true, false, true, true])?;
                let both = g.concat_rows(&[ce, smm])?;
                Ok(g.sum(both))
            },
            &mut store,
            1e-4,
            120,
            11,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{:?}", report.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)));
    }
}
