//! Builds the document graph of a small multi-hop example, arranges it by
//! breadth-first search from the answer document, and prints the per-step
//! encoder inputs.
//!
//! Text is pre-tokenized: punctuation is split off by whitespace.
//!
//!     cargo run --example arrange_documents

use e2eqr::docgraph::{arrange, assemble_step_input, bridge_entities, ArrangedExample, Document};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = vec![
        Document::new(
            0,
            "Interstellar",
            "Interstellar is a science fiction film starring Matthew McConaughey .",
            false,
            vec![],
        ),
        Document::new(
            1,
            "Christopher Nolan",
            "Christopher Nolan directed Interstellar and was born in London .",
            true,
            vec![],
        ),
        Document::new(
            2,
            "Matthew McConaughey",
            "Matthew McConaughey was born in Uvalde , Texas .",
            false,
            vec![],
        ),
    ];
    for ((a, b), shared) in bridge_entities(&docs) {
        println!("edge {a} — {b}: {shared:?}");
    }
    let arrangement = arrange(&docs)?;
    println!("order: {:?}", arrangement.order);
    let ex = ArrangedExample::new(
        "nolan",
        "Christopher Nolan",
        "who directed the film starring Matthew McConaughey ?",
        &docs,
        &arrangement,
    )?;
    for (t, doc) in ex.documents.iter().enumerate() {
        let bridges = ex.bridges.get(t).map(|b| b.as_slice());
        let tokens = assemble_step_input(doc, bridges, &ex.answer, 64)?;
        println!("step {}: {}", t + 1, tokens.join(" "));
    }
    Ok(())
}
