use std::path::Path;

use e2eqr::cli::{cmd_evaluate, EvaluationReport};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/report");

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn report_matches_hand_values_and_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let fixtures = Path::new(FIXTURES);
    let report = cmd_evaluate(&fixtures.join("predictions.jsonl"), &fixtures.join("gold.jsonl"), &out).unwrap();

    // g1: "a b c d e" vs "a b c d f": p_n = 4/5, 3/4, 2/3, 1/2, no brevity
    // penalty; LCS 4 → P = R = F = 0.8; METEOR m = 4 in one chunk
    let bleu1 = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
    let meteor1 = 0.8 * (1.0 - 0.5 * (1.0f64 / 4.0).powi(3));
    // g2 identical, 7 tokens; g3 empty prediction
    let meteor2 = 1.0 - 0.5 * (1.0f64 / 7.0).powi(3);

    let s = &report.summary;
    assert_eq!(s.count, 3);
    assert!(close(s.bleu4, (bleu1 + 1.0) / 3.0));
    assert!(close(s.rouge_l, 1.8 / 3.0));
    assert!(close(s.meteor_lite, (meteor1 + meteor2) / 3.0));
    assert!(close(s.exact_match, 1.0 / 3.0));
    let one = &report.by_hops[&1];
    assert!(close(one.bleu4, bleu1) && close(one.rouge_l, 0.8) && close(one.meteor_lite, meteor1));
    let two = &report.by_hops[&2];
    assert!(close(two.bleu4, 0.5) && close(two.exact_match, 0.5) && close(two.meteor_lite, meteor2 / 2.0));

    let golden = std::fs::read_to_string(fixtures.join("report.json")).unwrap();
    let written = std::fs::read_to_string(&out).unwrap();
    assert_eq!(written, golden);
    let parsed: EvaluationReport = serde_json::from_str(&golden).unwrap();
    assert_eq!(parsed, report);
}
