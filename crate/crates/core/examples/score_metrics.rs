//! Scores a few predictions against references with BLEU-4, ROUGE-L,
//! METEOR-lite and exact match.
//!
//!     cargo run --example score_metrics

use e2eqr::metrics::{corpus_eval, eval_tokenize, EvalPair};

fn main() {
    let pairs = [
        ("who directed the film starring person_9 ?", "who directed the film starring person_9 ?"),
        ("who directed the film starring person_4 ?", "who directed the film starring person_9 ?"),
        ("where was the person born ?", "where was the director of film_3 born ?"),
        ("", "which company does person_2 work for ?"),
    ];
    let pairs: Vec<EvalPair> = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, r))| EvalPair {
            id: i.to_string(),
            prediction: eval_tokenize(p),
            references: vec![eval_tokenize(r)],
        })
        .collect();
    let report = corpus_eval(&pairs);
    for r in &report.records {
        println!("{r:?}");
    }
    println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
}
