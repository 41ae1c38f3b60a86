//! Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
//! below. Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use e2eqr::cli::{self, GenerateOptions};
use e2eqr::curriculum::{
    self, build_iteration_dataset, weighted_loss, ComplexityDataset, CurriculumConfig, CurriculumPreset, TrainEvent,
};
use e2eqr::docgraph::{arrange, extract_entities, ArrangeError, Document};
use e2eqr::io::{DatasetRecord, RunConfigFile};
use e2eqr::metrics::{bleu4, meteor_lite, rouge_l};
use e2eqr::model::{
    accumulated_attention, rewrite_forward, E2eqr, EncodedExample, FinalOutput, ModelConfig, RewriteOptions,
    RewriteSession,
};
use e2eqr::synthetic::{self, SplitCounts, WorldSizes};
use e2eqr::tensor::{Graph, Tensor};
use e2eqr::vocab::{Vocabulary, BOS_ID};

const REDUCTION_TOL: f64 = 1e-12;
const REDUCTION_MAX_SECS: f64 = 1.0;
const BLOCK_TOL: f64 = 1e-12;
const BLOCK_CASES: usize = 200;
const REPLAY_TOL: f64 = 1e-10;
const REPLAY_CASES: usize = 10;
const GRAD_EPS: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SAMPLES: usize = 100;
const WEIGHTED_LOSS_WANT: f64 = 2.0667;
const WEIGHTED_LOSS_TOL: f64 = 1e-4;
const ARRANGE_EXAMPLES: usize = 1000;
const BLEU_WANT: f64 = 0.66874;
const BLEU_TOL: f64 = 1e-5;
const ROUGE_WANT: f64 = 0.75;
const ROUGE_TOL: f64 = 1e-9;
const METEOR_WANT: f64 = 0.625;
const METEOR_TOL: f64 = 1e-4;
const TOY_MAX_TRAIN_LOSS: f64 = 0.1;
const TOY_MIN_EXACT_MATCH: f64 = 0.9;
const TOY_MAX_SECS: f64 = 15.0 * 60.0;

/// Toy task and training setup shared by criteria 8 and 10.
const TOY_WORLD_SEED: u64 = 7;
const TOY_ENTITIES: usize = 50;
const TOY_FACTS_PER_RELATION: usize = 100;
const TOY_TRAIN: usize = 2000;
const TOY_VALIDATION: usize = 100;
const TOY_TEST: usize = 200;
const TOY_D_FF: usize = 256;
const TOY_LR: f64 = 1e-3;
const TOY_WARMUP: usize = 100;
const TOY_EPOCHS: usize = 30;
const TOY_WEIGHT_DECAY: f64 = 0.5;
const TOY_EVAL_LIMIT: usize = 50;
const TOY_MAX_DECODE: usize = 24;

type Outcome = Result<String, String>;

struct Toy {
    model: E2eqr<f32>,
    vocab: Vocabulary,
    test: Vec<DatasetRecord>,
    outcome: Outcome,
}

#[derive(Default)]
struct Ctx {
    toy: Option<Toy>,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small(vocab_size: usize) -> ModelConfig {
    common::small_config(vocab_size)
}

fn logits_of(s: &RewriteSession<'_, f64>, out: &FinalOutput) -> Vec<f64> {
    match out {
        FinalOutput::Logits(l) => s.graph().data(*l).to_vec(),
        FinalOutput::Tokens { .. } => panic!("expected logits"),
    }
}

fn c1_reduction(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let m = E2eqr::<f64>::new(small(40), seed).map_err(|e| e.to_string())?;
        let ex = common::random_example(&mut rng, 40, 1);
        let mut s = RewriteSession::new(&m, false);
        let opts = RewriteOptions {
            teacher_forced_final: Some(&ex.gold),
            ..Default::default()
        };
        let out = rewrite_forward(&mut s, &ex, &opts).map_err(|e| e.to_string())?;
        let got = logits_of(&s, &out.final_output);
        let mut dec = vec![BOS_ID];
        dec.extend_from_slice(&ex.gold);
        let want = common::reference_seq2seq(&m, &ex.steps[0].tokens, &dec);
        for (a, b) in want.iter().flatten().zip(&got) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= REDUCTION_TOL && secs < REDUCTION_MAX_SECS,
        format!("max |Δ| {worst:.2e} (≤ {REDUCTION_TOL:e}), {secs:.3} s (< {REDUCTION_MAX_SECS} s)"),
    )
}

fn c2_blocks(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| -> Vec<Vec<f64>> {
        (0..r).map(|_| (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    };
    for case in 0..BLOCK_CASES {
        let heads = [1, 2, 4][case % 3];
        let d = heads * rng.gen_range(1..=4);
        let k_blocks = rng.gen_range(0..=4);
        let causal = case % 2 == 0;
        let m = rng.gen_range(1..=5);
        let q = rand_mat(&mut rng, m, d);
        let blocks: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..k_blocks)
            .map(|_| {
                let r = rng.gen_range(1..=4);
                (rand_mat(&mut rng, r, d), rand_mat(&mut rng, r, d))
            })
            .collect();
        let (ck, cv) = (rand_mat(&mut rng, m, d), rand_mat(&mut rng, m, d));

        let mut g = Graph::<f64>::inference();
        let var = |g: &mut Graph<f64>, x: &Vec<Vec<f64>>| {
            g.constant(Tensor::matrix(x.len(), d, x.concat()).expect("shape"))
        };
        let qv = var(&mut g, &q);
        let bv: Vec<_> = blocks.iter().map(|(k, v)| (var(&mut g, k), var(&mut g, v))).collect();
        let (kv, vv) = (var(&mut g, &ck), var(&mut g, &cv));
        let out = accumulated_attention(&mut g, qv, &bv, kv, vv, causal, heads).map_err(|e| e.to_string())?;
        let got = g.data(out).to_vec();

        let prior: usize = blocks.iter().map(|b| b.0.len()).sum();
        let all_k: Vec<Vec<f64>> = blocks.iter().flat_map(|b| b.0.clone()).chain(ck).collect();
        let all_v: Vec<Vec<f64>> = blocks.iter().flat_map(|b| b.1.clone()).chain(cv).collect();
        let want = common::attention(&q, &all_k, &all_v, heads, |i, j| j < prior || !causal || j - prior <= i);
        for (a, b) in want.iter().flatten().zip(&got) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= BLOCK_TOL,
        format!("{BLOCK_CASES} random cases (k ≤ 4), max |Δ| {worst:.2e} (≤ {BLOCK_TOL:e})"),
    )
}

fn c3_replay(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let mut tokens = 0;
    for seed in 0..REPLAY_CASES as u64 {
        let m = E2eqr::<f64>::new(small(40), 100 + seed).map_err(|e| e.to_string())?;
        let ex = common::random_example(&mut rng, 40, 3);
        let (dev, qs) = common::incremental_vs_replay(&m, &ex, 8);
        tokens += qs.iter().map(Vec::len).sum::<usize>();
        worst = worst.max(dev);
    }
    check(
        worst <= REPLAY_TOL,
        format!("{REPLAY_CASES} 3-step examples ({tokens} decoded tokens), max per-logit |Δ| {worst:.2e} (≤ {REPLAY_TOL:e})"),
    )
}

fn c4_grad(_: &mut Ctx) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for steps in [2, 3] {
        let r = cli::cmd_grad_check(steps, GRAD_SAMPLES, GRAD_EPS, 1, None).map_err(|e| e.to_string())?;
        ok &= r.samples >= GRAD_SAMPLES && r.max_rel_error <= GRAD_TOL && r.step1_only_grad_norm > 0.0;
        parts.push(format!(
            "{steps} steps: {} coords, max rel err {:.2e}, step-1-only |g| {:.2e}",
            r.samples, r.max_rel_error, r.step1_only_grad_norm
        ));
    }
    check(ok, format!("{} (tol {GRAD_TOL:e}, eps {GRAD_EPS:e})", parts.join("; ")))
}

fn c5_curriculum(_: &mut Ctx) -> Outcome {
    let groups: BTreeMap<usize, Vec<()>> = [(1, vec![(); 37]), (2, vec![(); 50]), (3, vec![(); 23]), (4, vec![(); 9])]
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut cases = 0;
    for main in 1..=4 {
        for rho in [0.0, 0.05, 0.1, 0.25, 1.0 / 3.0, 0.5, 0.9, 1.0] {
            let got = build_iteration_dataset(&groups, main, rho, &mut rng).map_err(|e| e.to_string())?;
            let mut want = 0usize;
            for (&h, g) in &groups {
                want += if h <= main { g.len() } else { (rho * g.len() as f64).floor() as usize };
            }
            if got.len() != want {
                return Err(format!("H={main} ρ={rho}: |D| = {} but expected {want}", got.len()));
            }
            cases += 1;
        }
    }
    let wl = weighted_loss(&[2.0, 4.0, 6.0], &[1, 2, 3], 2, 0.8, 0.1);
    let want_wl = (0.8 * 2.0 + 4.0 + 0.1 * 6.0) / 3.0;
    if (wl - want_wl).abs() > 1e-9 || (wl - WEIGHTED_LOSS_WANT).abs() > WEIGHTED_LOSS_TOL {
        return Err(format!("weighted_loss = {wl} (want {want_wl})"));
    }
    let mut presets = Vec::new();
    for (text, want) in [
        ("curriculum = \"step_by_step\"", (0.0, 0.0, 0.0)),
        ("curriculum = \"cumulative\"", (1.0, 0.0, 0.0)),
        ("", (0.8, 0.1, 0.1)),
        ("gamma_low = 0.8\ngamma_high = 0.1\nrho = 0.1", (0.8, 0.1, 0.1)),
    ] {
        let c = RunConfigFile::parse(text)
            .and_then(|f| f.resolve())
            .map_err(|e| e.to_string())?
            .curriculum;
        let got = (c.gamma_low, c.gamma_high, c.rho);
        if got != want {
            return Err(format!("config {text:?} resolved to {got:?}, expected {want:?}"));
        }
        presets.push(format!("{want:?}"));
    }
    Ok(format!(
        "{cases} (H, ρ) cases exact; weighted_loss {wl:.6} (want {WEIGHTED_LOSS_WANT} ± {WEIGHTED_LOSS_TOL:e}); presets {}",
        presets.join(" ")
    ))
}

fn c6_arrangement(_: &mut Ctx) -> Outcome {
    let world = synthetic::generate_world(
        21,
        WorldSizes {
            entities: 200,
            relation_types: 6,
            facts_per_relation: 150,
        },
    )
    .map_err(|e| e.to_string())?;
    let vocab = synthetic::vocabulary(&world).map_err(|e| e.to_string())?;
    let bridge_id = vocab.id(e2eqr::vocab::BRIDGE).ok_or("vocabulary lacks <bridge>")?;
    let chains = (1..=4)
        .map(|h| synthetic::enumerate_chains(&world, h))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut checked = 0;
    for i in 0..ARRANGE_EXAMPLES {
        let pool = &chains[i % 4];
        let chain = &pool[rng.gen_range(0..pool.len())];
        let rec = synthetic::render_example(&world, chain, format!("arr-{i}"), &mut rng);
        let ex = rec.arranged().map_err(|e| format!("{}: {e}", rec.id))?;
        let docs = &ex.documents;
        if !docs[0].is_answer_doc {
            return Err(format!("{}: answer document is not first", rec.id));
        }
        let ents: Vec<_> = docs.iter().map(extract_entities).collect();
        for t in 1..docs.len() {
            if !(0..t).any(|s| ex.bridges[s].iter().any(|b| ents[t].contains(b))) {
                return Err(format!("{}: document {t} shares no bridge with earlier ones", rec.id));
            }
        }
        let enc = EncodedExample::from_arranged(&ex, &vocab, 64).map_err(|e| e.to_string())?;
        let (last, earlier) = enc.steps.split_last().expect("nonempty");
        if last.tokens.contains(&bridge_id) || earlier.iter().any(|s| !s.tokens.contains(&bridge_id)) {
            return Err(format!("{}: bridge sections misplaced", rec.id));
        }
        checked += 1;
    }
    let disconnected = [
        Document::new(0, "A", "alpha beta", true, vec!["alpha".into()]),
        Document::new(1, "B", "gamma delta", false, vec!["gamma".into()]),
    ];
    let err = arrange(&disconnected);
    if !matches!(err, Err(ArrangeError::Disconnected { .. })) {
        return Err(format!("disconnected fixture gave {err:?}"));
    }
    Ok(format!("{checked} examples (1–4 hops) ok; disconnected fixture → {}", err.unwrap_err()))
}

fn c7_metrics(_: &mut Ctx) -> Outcome {
    let t = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let bleu = bleu4(&t("a b c d e"), &[t("a b c d f")]).score;
    let rouge = rouge_l(&t("a b c d"), &[t("a c b d")]);
    let meteor = meteor_lite(&t("the cat sat"), &[t("the cat slept")]);
    let same = t("who directed the film starring person_9 ?");
    let id_bleu = bleu4(&same, std::slice::from_ref(&same)).score;
    let id_rouge = rouge_l(&same, std::slice::from_ref(&same));
    check(
        (bleu - BLEU_WANT).abs() <= BLEU_TOL
            && (rouge - ROUGE_WANT).abs() <= ROUGE_TOL
            && (meteor - METEOR_WANT).abs() <= METEOR_TOL
            && id_bleu == 1.0
            && id_rouge == 1.0,
        format!("BLEU-4 {bleu:.6} ROUGE-L {rouge:.6} METEOR-lite {meteor:.6}; identical pair BLEU {id_bleu} ROUGE-L {id_rouge}"),
    )
}

fn toy_config() -> CurriculumConfig {
    let mut cfg = CurriculumPreset::Adaptive.config();
    cfg.lr_alpha = TOY_LR;
    cfg.warmup_steps = TOY_WARMUP;
    cfg.epochs_per_main_complexity = TOY_EPOCHS;
    cfg.weight_decay = TOY_WEIGHT_DECAY;
    cfg.eval_limit = Some(TOY_EVAL_LIMIT);
    cfg.max_decode_len = Some(TOY_MAX_DECODE);
    cfg.seed = TOY_WORLD_SEED;
    cfg
}

fn encode(records: &[DatasetRecord], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedExample>, String> {
    cli::encode_records(records, vocab, max_len).map_err(|e| e.to_string())
}

fn train_toy() -> Result<Toy, String> {
    let start = Instant::now();
    let world = synthetic::generate_world(
        TOY_WORLD_SEED,
        WorldSizes {
            entities: TOY_ENTITIES,
            relation_types: 6,
            facts_per_relation: TOY_FACTS_PER_RELATION,
        },
    )
    .map_err(|e| e.to_string())?;
    let vocab = synthetic::vocabulary(&world).map_err(|e| e.to_string())?;
    let splits = synthetic::make_splits(
        &world,
        &[SplitCounts {
            hops: 2,
            train: TOY_TRAIN,
            validation: TOY_VALIDATION,
            test: TOY_TEST,
        }],
        TOY_WORLD_SEED,
    )
    .map_err(|e| e.to_string())?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_ff: TOY_D_FF,
        ..ModelConfig::default()
    };
    let (d, h, layers) = (config.d_model, config.n_heads, (config.n_enc_layers, config.n_dec_layers));
    let train = ComplexityDataset::from_examples(encode(&splits.train, &vocab, config.max_len)?);
    let val = encode(&splits.validation, &vocab, config.max_len)?;
    let test = encode(&splits.test, &vocab, config.max_len)?;
    let mut model = E2eqr::<f32>::new(config, TOY_WORLD_SEED).map_err(|e| e.to_string())?;
    let cfg = toy_config();
    let summary = curriculum::train(&mut model, &train, &val, &cfg, |e| {
        if let TrainEvent::Eval(r) = e {
            eprintln!("    [toy] {}", serde_json::to_string(r).unwrap_or_default());
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let report = curriculum::evaluate(&model, &test, cfg.max_decode_len).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let outcome = check(
        summary.final_train_loss < TOY_MAX_TRAIN_LOSS && report.exact_match >= TOY_MIN_EXACT_MATCH && secs <= TOY_MAX_SECS,
        format!(
            "d_model {d}, {h} heads, {}+{} layers, vocab {}, batch {}, lr {TOY_LR}, weight decay {TOY_WEIGHT_DECAY}, \
             {TOY_EPOCHS} epochs: final train loss {:.4} (< {TOY_MAX_TRAIN_LOSS}), \
             held-out EM {:.3} on {} (≥ {TOY_MIN_EXACT_MATCH}), {secs:.0} s (≤ {TOY_MAX_SECS} s)",
            layers.0,
            layers.1,
            vocab.len(),
            cfg.batch_size,
            summary.final_train_loss,
            report.exact_match,
            report.count,
        ),
    );
    Ok(Toy {
        model,
        vocab,
        test: splits.test,
        outcome,
    })
}

fn toy(ctx: &mut Ctx) -> Result<&Toy, String> {
    if ctx.toy.is_none() {
        ctx.toy = Some(train_toy()?);
    }
    Ok(ctx.toy.as_ref().expect("set above"))
}

fn c8_toy(ctx: &mut Ctx) -> Outcome {
    toy(ctx)?.outcome.clone()
}

fn one_hop_em(model: &E2eqr<f32>, test: &[EncodedExample]) -> Result<f64, String> {
    let ones: Vec<EncodedExample> = test.iter().filter(|e| e.hops == 1).cloned().collect();
    Ok(curriculum::evaluate(model, &ones, Some(TOY_MAX_DECODE))
        .map_err(|e| e.to_string())?
        .exact_match)
}

fn c9_direction(_: &mut Ctx) -> Outcome {
    let world = synthetic::generate_world(
        9,
        WorldSizes {
            entities: 50,
            relation_types: 6,
            facts_per_relation: 100,
        },
    )
    .map_err(|e| e.to_string())?;
    let vocab = synthetic::vocabulary(&world).map_err(|e| e.to_string())?;
    let counts: Vec<SplitCounts> = (1..=3)
        .map(|hops| SplitCounts {
            hops,
            train: 300,
            validation: 1,
            test: 100,
        })
        .collect();
    let splits = synthetic::make_splits(&world, &counts, 9).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        ..ModelConfig::default()
    };
    let train = ComplexityDataset::from_examples(encode(&splits.train, &vocab, config.max_len)?);
    let test = encode(&splits.test, &vocab, config.max_len)?;
    let mut ems = Vec::new();
    for preset in [CurriculumPreset::StepByStep, CurriculumPreset::Adaptive] {
        let mut model = E2eqr::<f32>::new(config.clone(), 9).map_err(|e| e.to_string())?;
        let mut cfg = preset.config();
        cfg.lr_alpha = 2e-3;
        cfg.warmup_steps = 50;
        cfg.epochs_per_main_complexity = 4;
        cfg.max_decode_len = Some(TOY_MAX_DECODE);
        cfg.seed = 9;
        curriculum::train(&mut model, &train, &[], &cfg, |_| Ok(())).map_err(|e| e.to_string())?;
        ems.push(one_hop_em(&model, &test)?);
    }
    check(
        ems[0] < ems[1],
        format!("held-out 1-hop EM: step_by_step {:.3} < adaptive {:.3}", ems[0], ems[1]),
    )
}

fn c10_ablation(ctx: &mut Ctx) -> Outcome {
    let toy = toy(ctx)?;
    let opts = GenerateOptions {
        max_decode_len: Some(TOY_MAX_DECODE),
        ..Default::default()
    };
    let full = cli::generate_predictions(&toy.model, &toy.vocab, &toy.test, &opts).map_err(|e| e.to_string())?;
    let one_hop: Vec<DatasetRecord> = toy
        .test
        .iter()
        .map(|r| {
            // the answer document on its own is a 1-hop input
            let mut r = r.clone();
            let a = r.arrange().expect("generated records arrange");
            r.documents = vec![r.documents[a.order[0]].clone()];
            r.hops = 1;
            r.reference_intermediates = None;
            r
        })
        .collect();
    let full_one = cli::generate_predictions(&toy.model, &toy.vocab, &one_hop, &opts).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, sa, ca) in [("sa", false, true), ("ca", true, false)] {
        let mut m = toy.model.clone();
        m.set_accumulation(sa, ca);
        let preds = cli::generate_predictions(&m, &toy.vocab, &toy.test, &opts).map_err(|e| e.to_string())?;
        let changed = preds.iter().zip(&full).filter(|(a, b)| a.question != b.question).count();
        let one = cli::generate_predictions(&m, &toy.vocab, &one_hop, &opts).map_err(|e| e.to_string())?;
        let same_one = one == full_one;
        ok &= changed >= 1 && same_one;
        parts.push(format!(
            "--ablate {name}: {changed}/{} predictions changed, t=1 outputs identical: {same_one}",
            full.len()
        ));
    }
    check(ok, parts.join("; "))
}

fn c11_determinism(_: &mut Ctx) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let counts: Vec<SplitCounts> = (1..=2)
        .map(|hops| SplitCounts {
            hops,
            train: 24,
            validation: 4,
            test: 4,
        })
        .collect();
    cli::cmd_gen_data(
        &data,
        3,
        WorldSizes {
            entities: 40,
            relation_types: 6,
            facts_per_relation: 40,
        },
        &counts,
    )
    .map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "d_model = 16\nn_heads = 2\nd_ff = 32\nn_enc_layers = 1\nn_dec_layers = 1\n\
         lr_alpha = 0.001\nwarmup_steps = 2\nepochs_per_main_complexity = 2\nmax_decode_len = 12\nseed = 5\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |out: &Path| {
        cli::run(cli::Command::Train {
            data: data.clone(),
            out: out.to_path_buf(),
            common: cli::Common {
                config: Some(config.clone()),
                seed: None,
                precision: cli::Precision::F32,
                ablate: None,
            },
        })
        .map_err(|e| e.to_string())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    let files = ["metrics.jsonl", "checkpoint_H1.e2qr", "checkpoint_H2.e2qr", "final.e2qr", "manifest.json"];
    let mut bytes = 0;
    for f in files {
        let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
        let (x, y) = (x.map_err(|e| format!("{f}: {e}"))?, y.map_err(|e| format!("{f}: {e}"))?);
        if x != y {
            return Err(format!("{f} differs between identical runs"));
        }
        bytes += x.len();
    }
    Ok(format!("{} files byte-identical across two runs ({bytes} bytes)", files.len()))
}

type Criterion = (usize, &'static str, fn(&mut Ctx) -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "reduction identity (t = 1 vs plain seq2seq)", c1_reduction),
        (2, "block-concatenation oracle", c2_blocks),
        (3, "cache-recompute oracle", c3_replay),
        (4, "gradient check (unrolled 2/3 steps)", c4_grad),
        (5, "curriculum composition", c5_curriculum),
        (6, "arrangement", c6_arrangement),
        (7, "metric golden values", c7_metrics),
        (8, "toy learning", c8_toy),
        (9, "curriculum direction", c9_direction),
        (10, "ablation wiring", c10_ablation),
        (11, "determinism", c11_determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2}. {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2}. {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
