//! Generates a small 2-hop synthetic task, trains a toy model on it with
//! the adaptive curriculum, and reports held-out exact match.
//!
//!     cargo run --release --example train_toy

use std::time::Instant;

use e2eqr::curriculum::{train, ComplexityDataset, CurriculumPreset, TrainEvent};
use e2eqr::model::{E2eqr, EncodedExample, ModelConfig};
use e2eqr::synthetic::{generate_world, make_splits, vocabulary, SplitCounts, WorldSizes};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let sizes = WorldSizes {
        entities: env("ENTITIES", 50),
        relation_types: 6,
        facts_per_relation: env("FACTS", 100),
    };
    let seed: u64 = env("SEED", 7);
    let world = generate_world(seed, sizes)?;
    let vocab = vocabulary(&world)?;
    let counts = [SplitCounts {
        hops: 2,
        train: env("TRAIN", 2000),
        validation: 100,
        test: 200,
    }];
    let splits = make_splits(&world, &counts, seed)?;
    let encode = |recs: &[e2eqr::io::DatasetRecord]| -> Result<Vec<EncodedExample>, Box<dyn std::error::Error>> {
        recs.iter()
            .map(|r| Ok(EncodedExample::from_arranged(&r.arranged()?, &vocab, 64)?))
            .collect()
    };
    let train_set = ComplexityDataset::from_examples(encode(&splits.train)?);
    let val = encode(&splits.validation)?;
    let test = encode(&splits.test)?;

    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_ff: env("DFF", 256),
        ..ModelConfig::default()
    };
    let mut model = E2eqr::<f32>::new(config, seed)?;
    let mut cfg = CurriculumPreset::Adaptive.config();
    cfg.lr_alpha = env("LR", 1e-3);
    cfg.warmup_steps = env("WARMUP", 100);
    cfg.epochs_per_main_complexity = env("EPOCHS", 30);
    cfg.eval_limit = Some(env("EVAL", 50));
    cfg.max_decode_len = Some(env("MAXDEC", 24));
    cfg.weight_decay = env("WD", 0.5);
    cfg.seed = seed;

    let start = Instant::now();
    let summary = train(&mut model, &train_set, &val, &cfg, |e| {
        if let TrainEvent::Eval(r) = e {
            println!("{:>7.1}s {}", start.elapsed().as_secs_f64(), serde_json::to_string(r).unwrap());
        }
        Ok(())
    })?;
    let report = e2eqr::curriculum::evaluate(&model, &test, cfg.max_decode_len)?;
    let mut shown = 0;
    for ex in &test {
        let (_, pred) = e2eqr::curriculum::predict(&model, ex, cfg.max_decode_len)?;
        if pred != ex.gold && shown < env("SHOW", 5) {
            for step in &ex.steps {
                println!("  in:   {}", vocab.decode(&step.tokens).join(" "));
            }
            println!("  gold: {}\n  pred: {}", vocab.decode(&ex.gold).join(" "), vocab.decode(&pred).join(" "));
            shown += 1;
        }
    }
    println!(
        "final train loss {:.4}; test exact match {:.3} ({} examples) in {:.0}s",
        summary.final_train_loss,
        report.exact_match,
        report.count,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
