use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_iteration_dataset, loss_weight, lr_at, AdamW, AdamWState, ComplexityDataset, CurriculumConfig, Schedule,
    TrainError,
};
use crate::metrics;
use crate::model::{
    final_step_loss, rewrite_forward, E2eqr, EncodedExample, FinalOutput, ModelError, RewriteOptions, RewriteSession,
};
use crate::tensor::{Gradients, Real};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub main_complexity: usize,
    pub optimizer: AdamWState,
}

/// One metrics-log line, written after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    #[serde(rename = "H")]
    pub main_complexity: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean weighted training loss over the epoch.
    pub train_loss: f64,
    /// Validation loss; absent without validation data.
    pub loss: Option<f64>,
    pub rouge_l: Option<f64>,
    pub exact_match: Option<f64>,
}

pub enum TrainEvent<'a, T: Real> {
    Eval(&'a EvalRecord),
    /// Training at `main_complexity` finished.
    ComplexityDone {
        main_complexity: usize,
        model: &'a E2eqr<T>,
        state: &'a TrainState,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub state: TrainState,
    pub total_steps: usize,
    /// Mean weighted training loss of the last epoch.
    pub final_train_loss: f64,
    pub last_eval: Option<EvalRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub loss: f64,
    pub rouge_l: f64,
    pub exact_match: f64,
}

/// Teacher-forced final-step loss of one example and its gradients.
fn example_loss<T: Real>(
    model: &E2eqr<T>,
    ex: &EncodedExample,
    max_decode_len: Option<usize>,
    track: bool,
) -> Result<(f64, Option<Gradients<T>>), ModelError> {
    let mut session = RewriteSession::new(model, track);
    let opts = RewriteOptions {
        teacher_forced_final: Some(&ex.gold),
        pinned_intermediates: None,
        max_decode_len,
    };
    let out = rewrite_forward(&mut session, ex, &opts)?;
    let FinalOutput::Logits(logits) = out.final_output else {
        unreachable!("teacher forcing yields logits")
    };
    let loss = final_step_loss(session.graph_mut(), logits, &ex.gold)?;
    let value = session.graph().scalar(loss).as_f64();
    let grads = if track { Some(session.graph().backward(loss)?) } else { None };
    Ok((value, grads))
}

/// Greedy final question for one example.
pub fn predict<T: Real>(
    model: &E2eqr<T>,
    ex: &EncodedExample,
    max_decode_len: Option<usize>,
) -> Result<(Vec<Vec<u32>>, Vec<u32>), ModelError> {
    let mut session = RewriteSession::new(model, false);
    let opts = RewriteOptions {
        max_decode_len,
        ..Default::default()
    };
    let out = rewrite_forward(&mut session, ex, &opts)?;
    let FinalOutput::Tokens { tokens, .. } = out.final_output else {
        unreachable!("greedy decoding yields tokens")
    };
    Ok((out.intermediates, tokens))
}

/// Mean teacher-forced loss, ROUGE-L and exact match of greedy predictions.
pub fn evaluate<T: Real>(
    model: &E2eqr<T>,
    examples: &[EncodedExample],
    max_decode_len: Option<usize>,
) -> Result<EvalSummary, ModelError> {
    let mut s = EvalSummary::default();
    for ex in examples {
        let (loss, _) = example_loss(model, ex, max_decode_len, false)?;
        let (_, pred) = predict(model, ex, max_decode_len)?;
        let refs = [ex.gold.clone()];
        s.loss += loss;
        s.rouge_l += metrics::rouge_l(&pred, &refs);
        s.exact_match += metrics::exact_match(&pred, &refs);
        s.count += 1;
    }
    if s.count > 0 {
        let n = s.count as f64;
        s.loss /= n;
        s.rouge_l /= n;
        s.exact_match /= n;
    }
    Ok(s)
}

struct Plan {
    levels: Vec<usize>,
    epochs: usize,
}

impl Plan {
    fn new(cfg: &CurriculumConfig, data: &ComplexityDataset) -> Self {
        let levels = data.levels();
        match cfg.schedule {
            Schedule::Curriculum => Self {
                levels,
                epochs: cfg.epochs_per_main_complexity,
            },
            Schedule::Standard => Self {
                epochs: cfg.epochs_per_main_complexity * levels.len(),
                levels: vec![data.max_complexity()],
            },
        }
    }

    fn weight(&self, cfg: &CurriculumConfig, complexity: usize, main: usize) -> f64 {
        match cfg.schedule {
            Schedule::Standard => 1.0,
            Schedule::Curriculum => loss_weight(complexity, main, cfg.gamma_low, cfg.gamma_high),
        }
    }

    /// Optimizer steps of the whole run; iteration sizes do not depend on
    /// the random draw.
    fn total_steps(&self, cfg: &CurriculumConfig, data: &ComplexityDataset) -> usize {
        self.levels
            .iter()
            .map(|&main| {
                let n: usize = data
                    .groups()
                    .iter()
                    .filter(|(&h, _)| self.weight(cfg, h, main) > 0.0)
                    .map(|(&h, g)| {
                        if h <= main {
                            g.len()
                        } else {
                            (cfg.rho * g.len() as f64).floor() as usize
                        }
                    })
                    .sum();
                self.epochs * n.div_ceil(cfg.batch_size)
            })
            .sum()
    }
}

/// Runs the curriculum over `data`, reporting through `on_event`.
///
/// Zero-weight examples are dropped from batches since they contribute
/// nothing to the loss. Each batch loss is `Σ w_i·L_i / B` over the
/// examples actually in the batch.
pub fn train<T: Real>(
    model: &mut E2eqr<T>,
    data: &ComplexityDataset,
    validation: &[EncodedExample],
    cfg: &CurriculumConfig,
    mut on_event: impl FnMut(TrainEvent<'_, T>) -> Result<(), TrainError>,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Contract("training set is empty".into()));
    }
    let plan = Plan::new(cfg, data);
    let total_steps = plan.total_steps(cfg, data);
    if total_steps <= cfg.warmup_steps {
        return Err(TrainError::Config(format!(
            "run has {total_steps} optimizer steps, not more than warmup_steps = {}",
            cfg.warmup_steps
        )));
    }
    let validation = &validation[..cfg.eval_limit.unwrap_or(validation.len()).min(validation.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut state = TrainState::default();
    let mut final_train_loss = f64::NAN;
    let mut last_eval = None;

    for &main in &plan.levels {
        state.main_complexity = main;
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for epoch in 0..plan.epochs {
            let mut items = build_iteration_dataset(data.groups(), main, cfg.rho, &mut rng)?;
            items.retain(|i| plan.weight(cfg, i.complexity, main) > 0.0);
            let mut epoch_loss = 0.0;
            let mut lr = 0.0;
            for chunk in items.chunks(cfg.batch_size) {
                model.params_mut().zero_grads();
                let batch = chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &item in chunk {
                    let w = plan.weight(cfg, item.complexity, main);
                    let (loss, grads) = example_loss(model, data.get(item), cfg.max_decode_len, true)?;
                    if !loss.is_finite() {
                        return Err(TrainError::Diverged { step: state.step, loss });
                    }
                    grads
                        .expect("tracked forward")
                        .accumulate_into(model.params_mut(), T::of(w / batch));
                    batch_loss += w * loss / batch;
                }
                if let Some(max) = cfg.max_grad_norm {
                    let norm = model.params().grad_norm();
                    if norm > max {
                        let s = T::of(max / norm);
                        for p in model.params_mut().iter_mut() {
                            p.grad_mut().iter_mut().for_each(|g| *g *= s);
                        }
                    }
                }
                lr = lr_at(state.step, cfg.warmup_steps, total_steps, cfg.lr_alpha)?;
                opt.step(model.params_mut(), lr);
                state.step += 1;
                epoch_loss += batch_loss * chunk.len() as f64;
            }
            let train_loss = epoch_loss / items.len().max(1) as f64;
            final_train_loss = train_loss;
            let eval = if validation.is_empty() {
                None
            } else {
                Some(evaluate(model, validation, cfg.max_decode_len)?)
            };
            let rec = EvalRecord {
                step: state.step,
                main_complexity: main,
                epoch,
                lr,
                train_loss,
                loss: eval.map(|e| e.loss),
                rouge_l: eval.map(|e| e.rouge_l),
                exact_match: eval.map(|e| e.exact_match),
            };
            log::info!(
                "H={main} epoch={epoch} step={} train_loss={train_loss:.4} val_loss={:?} em={:?}",
                state.step,
                rec.loss,
                rec.exact_match
            );
            on_event(TrainEvent::Eval(&rec))?;
            last_eval = Some(rec);
            if let (Some(patience), Some(e)) = (cfg.patience, eval) {
                if e.loss < best {
                    best = e.loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        log::info!("validation loss plateaued; leaving H={main} after epoch {epoch}");
                        break;
                    }
                }
            }
        }
        state.optimizer = opt.state.clone();
        on_event(TrainEvent::ComplexityDone {
            main_complexity: main,
            model,
            state: &state,
        })?;
    }
    Ok(TrainSummary {
        state,
        total_steps,
        final_train_loss,
        last_eval,
    })
}
