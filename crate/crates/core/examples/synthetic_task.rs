//! Generates a synthetic world, renders one example per hop count, and
//! checks that each gold question reduces back to its answer.
//!
//!     cargo run --example synthetic_task

use e2eqr::synthetic::{generate_example, generate_world, reduce_question, WorldSizes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate_world(
        3,
        WorldSizes {
            entities: 120,
            relation_types: 6,
            facts_per_relation: 80,
        },
    )?;
    println!("{} entities, {} facts", world.entities.len(), world.facts.len());
    for hops in 1..=4 {
        let (rec, chain) = generate_example(&world, hops, hops as u64)?;
        let facts: Vec<_> = chain.facts.iter().map(|&i| world.facts[i]).collect();
        println!("\n{hops}-hop: {}", rec.question);
        for (i, q) in rec.reference_intermediates.iter().flatten().enumerate() {
            println!("  Q{}: {q}", i + 1);
        }
        for d in &rec.documents {
            let mark = if d.is_answer_doc { "*" } else { " " };
            println!("  {mark} [{}] {}", d.title, d.text);
        }
        let reduced = reduce_question(&world, &rec.question, &facts);
        println!("  reduces to {reduced:?} (answer {})", rec.answer);
    }
    Ok(())
}
