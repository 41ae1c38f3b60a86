//! Runs the step-by-step rewriting loop of an (untrained) model on a 3-hop
//! synthetic example and reports how the accumulated attention cache grows.
//! With `--ablate sa` or `--ablate ca` the corresponding accumulation is
//! switched off.
//!
//!     cargo run --example rewrite_steps -- --ablate ca

use e2eqr::model::{E2eqr, EncodedExample, ModelConfig, RewriteSession};
use e2eqr::synthetic::{generate_example, generate_world, vocabulary, WorldSizes};
use e2eqr::vocab::{BOS_ID, EOS_ID};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let ablate = args.iter().position(|a| a == "--ablate").and_then(|i| args.get(i + 1)).cloned();
    let world = generate_world(
        1,
        WorldSizes {
            entities: 100,
            relation_types: 6,
            facts_per_relation: 60,
        },
    )?;
    let vocab = vocabulary(&world)?;
    let (rec, _) = generate_example(&world, 3, 5)?;
    let ex = EncodedExample::from_arranged(&rec.arranged()?, &vocab, 64)?;

    let mut model = E2eqr::<f32>::new(
        ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        },
        0,
    )?;
    match ablate.as_deref() {
        Some("sa") => model.set_accumulation(false, true),
        Some("ca") => model.set_accumulation(true, false),
        _ => {}
    }
    let mut session = RewriteSession::new(&model, false);
    for step in &ex.steps {
        println!("step {} input: {}", step.step_index, vocab.decode(&step.tokens).join(" "));
        let h = session.encode(step)?;
        let out = session.greedy_decode_step(h, BOS_ID, EOS_ID, 12)?;
        let cache = session.cache();
        println!(
            "  → {} (truncated: {}); cache: self-attention rows {:?}, cross-attention rows {:?}",
            vocab.decode(&out.question_tokens).join(" "),
            out.truncated,
            cache.step_lengths(),
            cache.context_lengths()
        );
    }
    println!("gold: {}", rec.question);
    Ok(())
}
