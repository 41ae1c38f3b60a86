//! Command-line workflows: gen-data, arrange, train, generate, evaluate and
//! grad-check. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::curriculum::{self, ComplexityDataset, TrainError, TrainEvent};
use crate::docgraph::ArrangeError;
use crate::io::{
    load_checkpoint, read_jsonl, read_jsonl_lenient, save_checkpoint, write_jsonl, DatasetRecord, IoError,
    Manifest, RunConfigFile,
};
use crate::metrics::{self, EvalPair, ExampleScores, MetricSummary};
use crate::model::{
    final_step_loss, rewrite_forward, E2eqr, EncodedExample, FinalOutput, ModelConfig, ModelError, RewriteOptions,
    RewriteSession, StepInput,
};
use crate::synthetic::{self, SplitCounts, SyntheticError, WorldSizes};
use crate::tensor::{grad_check, Graph, ParamStore, Real, TensorError, Var};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Data(e.to_string())
            }
        }
    )*};
}
data_errors!(IoError, VocabError, ArrangeError, SyntheticError, serde_json::Error);

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => Self::Numeric(t.to_string()),
            e => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::Numeric(e.to_string()),
            TrainError::Config(m) => Self::Usage(m),
            TrainError::Model(m) => m.into(),
            e => Self::Data(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Decoder self-attention ignores earlier steps.
    Sa,
    /// Decoder cross-attention ignores earlier steps.
    Ca,
}

#[derive(Debug, Parser)]
#[command(name = "e2eqr", version, about = "End-to-end question rewriting for multi-hop question generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (flat TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    /// Disable accumulated attention of one kind.
    #[arg(long, value_enum)]
    pub ablate: Option<Ablation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-hop dataset and its vocabulary.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        entities: usize,
        #[arg(long, default_value_t = 6)]
        relation_types: usize,
        #[arg(long, default_value_t = 200)]
        facts_per_relation: usize,
        /// Hop counts to generate, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        hops: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        validation: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
    },
    /// Arrange each record's documents by BFS from the answer document.
    Arrange { input: PathBuf, output: PathBuf },
    /// Train with the configured curriculum.
    Train {
        /// Directory with train.jsonl, vocab.txt and optional validation.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate final (and optionally intermediate) questions.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_intermediates: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against gold questions, broken down by hop count.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the unrolled multi-step loss.
    GradCheck {
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData {
            out,
            seed,
            entities,
            relation_types,
            facts_per_relation,
            hops,
            train,
            validation,
            test,
        } => {
            let sizes = WorldSizes {
                entities,
                relation_types,
                facts_per_relation,
            };
            let counts: Vec<SplitCounts> = hops
                .iter()
                .map(|&h| SplitCounts {
                    hops: h,
                    train,
                    validation,
                    test,
                })
                .collect();
            cmd_gen_data(&out, seed, sizes, &counts)
        }
        Command::Arrange { input, output } => {
            let s = cmd_arrange(&input, &output)?;
            eprintln!("arranged {} records, skipped {}", s.arranged, s.failures.len());
            Ok(())
        }
        Command::Train { data, out, common } => match common.precision {
            Precision::F32 => cmd_train::<f32>(&data, &out, &common),
            Precision::F64 => cmd_train::<f64>(&data, &out, &common),
        },
        Command::Generate {
            checkpoint,
            vocab,
            input,
            out,
            emit_intermediates,
            common,
        } => {
            let opts = GenerateOptions {
                emit_intermediates,
                ablate: common.ablate,
                max_decode_len: None,
            };
            let n = match common.precision {
                Precision::F32 => cmd_generate::<f32>(&checkpoint, &vocab, &input, &out, &opts)?,
                Precision::F64 => cmd_generate::<f64>(&checkpoint, &vocab, &input, &out, &opts)?,
            };
            eprintln!("wrote {n} predictions");
            Ok(())
        }
        Command::Evaluate { predictions, gold, out } => {
            let report = cmd_evaluate(&predictions, &gold, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            Ok(())
        }
        Command::GradCheck {
            steps,
            samples,
            eps,
            tolerance,
            common,
        } => {
            let report = cmd_grad_check(steps, samples, eps, common.seed.unwrap_or(0), common.ablate)?;
            println!(
                "grad-check: {} coordinates, max relative error {:.3e} (tolerance {tolerance:.1e}); step-1-only gradient norm {:.3e}",
                report.samples, report.max_rel_error, report.step1_only_grad_norm
            );
            if report.max_rel_error > tolerance || report.step1_only_grad_norm == 0.0 {
                return Err(CliError::Numeric("gradient check failed".into()));
            }
            Ok(())
        }
    }
}

pub fn cmd_gen_data(out: &Path, seed: u64, sizes: WorldSizes, counts: &[SplitCounts]) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| IoError::file(out, e))?;
    let world = synthetic::generate_world(seed, sizes)?;
    let splits = synthetic::make_splits(&world, counts, seed)?;
    let vocab = synthetic::vocabulary(&world)?;
    vocab.save(&out.join("vocab.txt"))?;
    write_jsonl(&out.join("train.jsonl"), &splits.train)?;
    write_jsonl(&out.join("validation.jsonl"), &splits.validation)?;
    write_jsonl(&out.join("test.jsonl"), &splits.test)?;
    let config = serde_json::json!({
        "entities": sizes.entities,
        "relation_types": sizes.relation_types,
        "facts_per_relation": sizes.facts_per_relation,
        "splits": counts.iter().map(|c| [c.hops, c.train, c.validation, c.test]).collect::<Vec<_>>(),
    });
    Manifest::new("gen-data", Some(seed), None, config).write(&out.join("manifest.json"))?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ArrangeSummary {
    pub arranged: usize,
    /// `(record id or line, error)` for every skipped record.
    pub failures: Vec<(String, String)>,
}

/// Adds an arrangement to every record; bad records are reported and
/// skipped.
pub fn cmd_arrange(input: &Path, output: &Path) -> Result<ArrangeSummary, CliError> {
    let mut summary = ArrangeSummary::default();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl_lenient::<DatasetRecord>(input)? {
        let mut rec = match rec {
            Ok(r) => r,
            Err(e) => {
                summary.failures.push((format!("line {line}"), e));
                continue;
            }
        };
        match rec.arrange() {
            Ok(a) => {
                rec.arrangement = Some(a);
                out.push(rec);
            }
            Err(e) => summary.failures.push((rec.id.clone(), e.to_string())),
        }
    }
    for (id, e) in &summary.failures {
        eprintln!("skipped {id}: {e}");
    }
    summary.arranged = out.len();
    write_jsonl(output, &out)?;
    Ok(summary)
}

/// Tokenizes arranged records; records that fail are reported as errors.
pub fn encode_records(
    records: &[DatasetRecord],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<EncodedExample>, CliError> {
    records
        .iter()
        .map(|r| {
            let ex = r.arranged().map_err(|e| CliError::Data(format!("record {}: {e}", r.id)))?;
            EncodedExample::from_arranged(&ex, vocab, max_len).map_err(|e| CliError::Data(format!("record {}: {e}", r.id)))
        })
        .collect()
}

fn apply_ablation<T: Real>(model: &mut E2eqr<T>, ablate: Option<Ablation>) {
    match ablate {
        Some(Ablation::Sa) => model.set_accumulation(false, true),
        Some(Ablation::Ca) => model.set_accumulation(true, false),
        None => {}
    }
}

pub fn cmd_train<T: Real>(data: &Path, out: &Path, common: &Common) -> Result<(), CliError> {
    let file = match &common.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    let mut rc = file.resolve().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(seed) = common.seed {
        rc.curriculum.seed = seed;
    }
    let vocab_path = data.join("vocab.txt");
    let vocab = Vocabulary::load(&vocab_path)?;
    if file.vocab_size.is_some() && rc.model.vocab_size != vocab.len() {
        return Err(CliError::Data(format!(
            "config vocab_size = {} but {} has {} tokens",
            rc.model.vocab_size,
            vocab_path.display(),
            vocab.len()
        )));
    }
    rc.model.vocab_size = vocab.len();
    let train_path = data.join("train.jsonl");
    let records: Vec<DatasetRecord> = read_jsonl(&train_path)?;
    let train_set = ComplexityDataset::from_examples(encode_records(&records, &vocab, rc.model.max_len)?);
    let val_path = data.join("validation.jsonl");
    let validation = if val_path.exists() {
        encode_records(&read_jsonl(&val_path)?, &vocab, rc.model.max_len)?
    } else {
        Vec::new()
    };

    std::fs::create_dir_all(out).map_err(|e| IoError::file(out, e))?;
    let mut manifest = Manifest::new(
        "train",
        Some(rc.curriculum.seed),
        Some(common.precision.name()),
        serde_json::to_value(&rc)?,
    );
    manifest.add_input(&vocab_path)?;
    manifest.add_input(&train_path)?;
    if val_path.exists() {
        manifest.add_input(&val_path)?;
    }
    manifest.write(&out.join("manifest.json"))?;

    let mut model = E2eqr::<T>::new(rc.model.clone(), rc.curriculum.seed)?;
    apply_ablation(&mut model, common.ablate);
    let hash = vocab.hash();
    let mut log_lines = String::new();
    let summary = curriculum::train(&mut model, &train_set, &validation, &rc.curriculum, |event| {
        match event {
            TrainEvent::Eval(rec) => {
                log_lines.push_str(&serde_json::to_string(rec).map_err(|e| TrainError::Hook(e.to_string()))?);
                log_lines.push('\n');
                std::fs::write(out.join("metrics.jsonl"), &log_lines).map_err(|e| TrainError::Hook(e.to_string()))?;
            }
            TrainEvent::ComplexityDone {
                main_complexity,
                model,
                state,
            } => {
                let path = out.join(format!("checkpoint_H{main_complexity}.e2qr"));
                save_checkpoint(&path, model, &hash, Some(state)).map_err(|e| TrainError::Hook(e.to_string()))?;
            }
        }
        Ok(())
    })?;
    save_checkpoint(&out.join("final.e2qr"), &model, &hash, Some(&summary.state))?;
    eprintln!(
        "trained {} steps; final training loss {:.4}",
        summary.state.step, summary.final_train_loss
    );
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub hops: usize,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediates: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GenerateOptions {
    pub emit_intermediates: bool,
    pub ablate: Option<Ablation>,
    pub max_decode_len: Option<usize>,
}

/// Greedy predictions for every record of `records`, in order.
pub fn generate_predictions<T: Real>(
    model: &E2eqr<T>,
    vocab: &Vocabulary,
    records: &[DatasetRecord],
    opts: &GenerateOptions,
) -> Result<Vec<PredictionRecord>, CliError> {
    let examples = encode_records(records, vocab, model.config().max_len)?;
    let mut out = Vec::with_capacity(examples.len());
    for ex in &examples {
        let (intermediates, tokens) = curriculum::predict(model, ex, opts.max_decode_len)?;
        let text = |ids: &[u32]| vocab.decode(ids).join(" ");
        out.push(PredictionRecord {
            id: ex.id.clone(),
            hops: ex.hops,
            question: text(&tokens),
            intermediates: opts
                .emit_intermediates
                .then(|| intermediates.iter().map(|q| text(q)).collect()),
        });
    }
    Ok(out)
}

pub fn load_model<T: Real>(checkpoint: &Path, vocab: &Vocabulary) -> Result<E2eqr<T>, CliError> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    if ck.vocab_hash != vocab.hash() {
        return Err(CliError::Data(format!(
            "{} was trained with a different vocabulary (hash {}, vocabulary file has {})",
            checkpoint.display(),
            hex::encode(ck.vocab_hash),
            hex::encode(vocab.hash())
        )));
    }
    if ck.stored_bytes != T::BYTES {
        log::warn!("checkpoint stores {}-byte floats; converting to {}", ck.stored_bytes, T::NAME);
    }
    Ok(ck.model)
}

pub fn cmd_generate<T: Real>(
    checkpoint: &Path,
    vocab_path: &Path,
    input: &Path,
    out: &Path,
    opts: &GenerateOptions,
) -> Result<usize, CliError> {
    let vocab = Vocabulary::load(vocab_path)?;
    let mut model = load_model::<T>(checkpoint, &vocab)?;
    apply_ablation(&mut model, opts.ablate);
    let records: Vec<DatasetRecord> = read_jsonl(input)?;
    let preds = generate_predictions(&model, &vocab, &records, opts)?;
    write_jsonl(out, &preds)?;
    Ok(preds.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub summary: MetricSummary,
    /// Keyed by hop count.
    pub by_hops: BTreeMap<usize, MetricSummary>,
    pub records: Vec<ExampleScores>,
    /// How scores were aggregated.
    pub notes: Vec<String>,
}

/// Scores predictions against gold records matched by id.
pub fn evaluate_predictions(
    predictions: &[PredictionRecord],
    gold: &[DatasetRecord],
) -> Result<EvaluationReport, CliError> {
    let by_id: BTreeMap<&str, &DatasetRecord> = gold.iter().map(|g| (g.id.as_str(), g)).collect();
    let missing: Vec<&str> = predictions
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let predicted: std::collections::BTreeSet<&str> = predictions.iter().map(|p| p.id.as_str()).collect();
    let unpredicted: Vec<&str> = gold.iter().map(|g| g.id.as_str()).filter(|id| !predicted.contains(id)).collect();
    if !missing.is_empty() || !unpredicted.is_empty() {
        return Err(CliError::Data(format!(
            "prediction/gold ids do not align; no gold for {missing:?}, no prediction for {unpredicted:?}"
        )));
    }
    let mut records = Vec::with_capacity(predictions.len());
    let mut hops_of = Vec::with_capacity(predictions.len());
    for p in predictions {
        let g = by_id[p.id.as_str()];
        let pair = EvalPair {
            id: p.id.clone(),
            prediction: metrics::eval_tokenize(&p.question),
            references: vec![metrics::eval_tokenize(&g.question)],
        };
        records.push(metrics::score_pair(&pair));
        hops_of.push(g.hops);
    }
    let mut groups: BTreeMap<usize, Vec<&ExampleScores>> = BTreeMap::new();
    for (r, &h) in records.iter().zip(&hops_of) {
        groups.entry(h).or_default().push(r);
    }
    Ok(EvaluationReport {
        summary: MetricSummary::mean_of(&records),
        by_hops: groups
            .into_iter()
            .map(|(h, rs)| (h, MetricSummary::mean_of(rs)))
            .collect(),
        records,
        notes: vec![
            "scores are means of sentence-level scores".into(),
            "meteor_lite uses exact unigram matches only; not comparable to toolkit METEOR".into(),
        ],
    })
}

pub fn cmd_evaluate(predictions: &Path, gold: &Path, out: &Path) -> Result<EvaluationReport, CliError> {
    let preds: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let gold: Vec<DatasetRecord> = read_jsonl(gold)?;
    let report = evaluate_predictions(&preds, &gold)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(out, text).map_err(|e| IoError::file(out, e))?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSummary {
    pub samples: usize,
    pub max_rel_error: f64,
    /// Gradient norm of the encoder embedding row of a token that occurs
    /// only in the first step's input.
    pub step1_only_grad_norm: f64,
}

/// A small random double-precision model and example with `steps` steps
/// and pinned intermediates.
pub fn grad_check_fixture(steps: usize, seed: u64) -> (ModelConfig, E2eqr<f64>, EncodedExample, Vec<Vec<u32>>) {
    let config = ModelConfig {
        vocab_size: 24,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        n_enc_layers: 1,
        n_dec_layers: 2,
        max_len: 12,
        ..ModelConfig::default()
    };
    let model = E2eqr::new(config.clone(), seed).expect("valid fixture config");
    // token 20 occurs only in step 1
    let inputs = [vec![3, 9, 20, 5, 10], vec![3, 9, 6, 11, 12], vec![3, 9, 13, 14]];
    let ex = EncodedExample {
        id: "grad-check".into(),
        hops: steps,
        steps: inputs
            .iter()
            .take(steps)
            .enumerate()
            .map(|(i, t)| StepInput {
                tokens: t.clone(),
                step_index: i + 1,
            })
            .collect(),
        gold: vec![15, 16, 17],
    };
    let pinned = [vec![18, 19], vec![21]].into_iter().take(steps - 1).collect();
    (config, model, ex, pinned)
}

pub fn cmd_grad_check(
    steps: usize,
    samples: usize,
    eps: f64,
    seed: u64,
    ablate: Option<Ablation>,
) -> Result<GradCheckSummary, CliError> {
    if !(1..=3).contains(&steps) {
        return Err(CliError::Usage(format!("--steps must be 1..=3, got {steps}")));
    }
    let (config, mut model, ex, pinned) = grad_check_fixture(steps, seed);
    apply_ablation(&mut model, ablate);
    let loss_fn = |store: &ParamStore<f64>, g: &mut Graph<f64>| {
        unrolled_loss(&config, store, g, &ex, &pinned, ablate)
    };
    let mut store = model.params().clone();
    let report = grad_check(loss_fn, &mut store, eps, samples, seed).map_err(CliError::from)?;
    // analytic gradient of the step-1-only embedding row
    let mut g = Graph::new();
    let loss = unrolled_loss(&config, model.params(), &mut g, &ex, &pinned, ablate)?;
    let grads = g.backward(loss).map_err(ModelError::from)?;
    let embed = model.params().id("enc.embed").expect("encoder embedding");
    let d = config.d_model;
    let norm = grads
        .params()
        .find(|(id, _)| *id == embed)
        .map_or(0.0, |(_, gr)| gr[20 * d..21 * d].iter().map(|x| x * x).sum::<f64>().sqrt());
    Ok(GradCheckSummary {
        samples: report.samples.len(),
        max_rel_error: report.max_rel_error,
        step1_only_grad_norm: norm,
    })
}

/// Final-step loss of `ex` under parameters `store`, with intermediates
/// pinned.
pub fn unrolled_loss(
    config: &ModelConfig,
    store: &ParamStore<f64>,
    g: &mut Graph<f64>,
    ex: &EncodedExample,
    pinned: &[Vec<u32>],
    ablate: Option<Ablation>,
) -> Result<Var, ModelError> {
    let mut model = E2eqr::from_params(config.clone(), store.clone())?;
    apply_ablation(&mut model, ablate);
    let mut session = RewriteSession::with_graph(&model, std::mem::take(g));
    let opts = RewriteOptions {
        teacher_forced_final: Some(&ex.gold),
        pinned_intermediates: Some(pinned),
        max_decode_len: None,
    };
    let out = rewrite_forward(&mut session, ex, &opts)?;
    let FinalOutput::Logits(logits) = out.final_output else {
        unreachable!("teacher forcing yields logits")
    };
    let loss = final_step_loss(session.graph_mut(), logits, &ex.gold)?;
    *g = session.into_graph();
    Ok(loss)
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self::Numeric(e.to_string())
    }
}
