//! Sentence-level BLEU-4, ROUGE-L, METEOR-lite and exact match.
//!
//! All scorers are generic over the token type so they work on strings and
//! on token ids alike. Corpus scores are arithmetic means of sentence scores.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub const ROUGE_BETA: f64 = 1.2;

/// Search budget for the minimum-chunk METEOR alignment.
const METEOR_NODE_BUDGET: usize = 200_000;

/// Lowercases and splits on whitespace, detaching ASCII punctuation into
/// separate tokens. `_`, `<` and `>` stay attached so entity names and
/// special tokens survive.
pub fn eval_tokenize(s: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(s.len() + 8);
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_punctuation() && !matches!(c, '_' | '<' | '>') {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts<T: Eq + Hash>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bleu {
    pub score: f64,
    /// Set when the prediction was empty (score 0).
    pub empty_prediction: bool,
}

/// Unsmoothed BLEU-4 with clipped counts and a brevity penalty against the
/// closest reference length (ties go to the shorter reference).
pub fn bleu4<T: Eq + Hash>(pred: &[T], refs: &[Vec<T>]) -> Bleu {
    if pred.is_empty() || refs.is_empty() {
        return Bleu {
            score: 0.0,
            empty_prediction: pred.is_empty(),
        };
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let p = ngram_counts(pred, n);
        let total: usize = p.values().sum();
        if total == 0 {
            return Bleu { score: 0.0, empty_prediction: false };
        }
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = p.iter().map(|(g, &c)| c.min(*max_ref.get(g).unwrap_or(&0))).sum();
        if clipped == 0 {
            return Bleu { score: 0.0, empty_prediction: false };
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = pred.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("refs nonempty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Bleu {
        score: bp * (log_sum / 4.0).exp(),
        empty_prediction: false,
    }
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with recall weighted by `β = 1.2`, maximized over
/// references.
pub fn rouge_l<T: Eq>(pred: &[T], refs: &[Vec<T>]) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    refs.iter()
        .map(|r| {
            let l = lcs_len(pred, r);
            if l == 0 {
                return 0.0;
            }
            let rec = l as f64 / r.len() as f64;
            let prec = l as f64 / pred.len() as f64;
            (1.0 + b2) * rec * prec / (rec + b2 * prec)
        })
        .fold(0.0, f64::max)
}

/// Exact-match unigram alignment with the most matches and, among those,
/// the fewest chunks. Returns `(matches, chunks)`.
pub fn meteor_alignment<T: Eq + Hash>(pred: &[T], reference: &[T]) -> (usize, usize) {
    let mut positions: HashMap<&T, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        positions.entry(t).or_default().push(j);
    }
    let mut budget: HashMap<&T, usize> = HashMap::new();
    for t in pred {
        *budget.entry(t).or_insert(0) += 1;
    }
    let target: usize = budget
        .iter()
        .map(|(t, &c)| c.min(positions.get(t).map_or(0, Vec::len)))
        .sum();
    if target == 0 {
        return (0, 0);
    }
    // how many more matches pred[i..] can contribute, ignoring conflicts
    let mut reachable = vec![0usize; pred.len() + 1];
    for i in (0..pred.len()).rev() {
        reachable[i] = reachable[i + 1] + usize::from(positions.contains_key(&pred[i]));
    }
    let mut search = ChunkSearch {
        pred,
        positions: &positions,
        reachable: &reachable,
        target,
        used: vec![false; reference.len()],
        best: usize::MAX,
        nodes: 0,
    };
    search.run(0, 0, None, 0);
    (target, search.best)
}

struct ChunkSearch<'a, T> {
    pred: &'a [T],
    positions: &'a HashMap<&'a T, Vec<usize>>,
    reachable: &'a [usize],
    target: usize,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl<T: Eq + Hash> ChunkSearch<'_, T> {
    fn run(&mut self, i: usize, matches: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best || matches + self.reachable[i] < self.target {
            return;
        }
        if matches == self.target {
            self.best = chunks;
            return;
        }
        if i == self.pred.len() || (self.nodes > METEOR_NODE_BUDGET && self.best != usize::MAX) {
            return;
        }
        if let Some(cands) = self.positions.get(&self.pred[i]) {
            // extending the current chunk first makes the first leaf greedy
            let mut order: Vec<usize> = cands.iter().copied().filter(|&j| !self.used[j]).collect();
            order.sort_by_key(|&j| (Some(j) != prev.map(|p| p + 1), j));
            for j in order {
                let new_chunk = prev.is_none_or(|p| p + 1 != j);
                self.used[j] = true;
                self.run(i + 1, matches + 1, Some(j), chunks + usize::from(new_chunk));
                self.used[j] = false;
            }
        }
        self.run(i + 1, matches, None, chunks);
    }
}

/// `F_mean · (1 − 0.5·(chunks/matches)³)` with `F_mean = 10PR/(R+9P)`,
/// maximized over references. No stemming or synonym stage.
pub fn meteor_lite<T: Eq + Hash>(pred: &[T], refs: &[Vec<T>]) -> f64 {
    refs.iter()
        .map(|r| {
            let (m, ch) = meteor_alignment(pred, r);
            if m == 0 {
                return 0.0;
            }
            let p = m as f64 / pred.len() as f64;
            let rec = m as f64 / r.len() as f64;
            let fmean = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (ch as f64 / m as f64).powi(3);
            fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

pub fn exact_match<T: Eq>(pred: &[T], refs: &[Vec<T>]) -> f64 {
    if refs.iter().any(|r| r.as_slice() == pred) {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub id: String,
    pub prediction: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub exact_match: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_prediction: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub exact_match: f64,
}

impl MetricSummary {
    pub fn mean_of<'a>(scores: impl IntoIterator<Item = &'a ExampleScores>) -> Self {
        let mut s = Self::default();
        for e in scores {
            s.count += 1;
            s.bleu4 += e.bleu4;
            s.rouge_l += e.rouge_l;
            s.meteor_lite += e.meteor_lite;
            s.exact_match += e.exact_match;
        }
        if s.count > 0 {
            let n = s.count as f64;
            s.bleu4 /= n;
            s.rouge_l /= n;
            s.meteor_lite /= n;
            s.exact_match /= n;
        }
        s
    }
}

pub fn score_pair(pair: &EvalPair) -> ExampleScores {
    let (p, r) = (&pair.prediction, &pair.references);
    let bleu = bleu4(p, r);
    ExampleScores {
        id: pair.id.clone(),
        bleu4: bleu.score,
        rouge_l: rouge_l(p, r),
        meteor_lite: meteor_lite(p, r),
        exact_match: exact_match(p, r),
        empty_prediction: bleu.empty_prediction,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub summary: MetricSummary,
    pub records: Vec<ExampleScores>,
}

/// Per-example scores in input order plus their means.
pub fn corpus_eval(pairs: &[EvalPair]) -> CorpusReport {
    let records: Vec<ExampleScores> = pairs.iter().map(score_pair).collect();
    CorpusReport {
        summary: MetricSummary::mean_of(&records),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_hand_case() {
        let b = bleu4(&t("a b c d e"), &[t("a b c d f")]);
        let want = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((b.score - want).abs() < 1e-12);
        assert!((b.score - 0.66874).abs() < 1e-5);
        assert_eq!(bleu4(&t("a b c d"), &[t("a b c d")]).score, 1.0);
        assert_eq!(bleu4(&t("a b c d"), &[t("d c b a")]).score, 0.0);
        let empty = bleu4::<&str>(&[], &[t("a")]);
        assert_eq!(empty, Bleu { score: 0.0, empty_prediction: true });
    }

    #[test]
    fn bleu_brevity_uses_closest_reference() {
        // c = 4; refs of length 5 and 8 → r = 5
        let b = bleu4(&t("a b c d"), &[t("a b c d e"), t("a b c d e f g h")]);
        assert!((b.score - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_hand_case() {
        assert!((rouge_l(&t("a b c d"), &[t("a c b d")]) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&t("a b"), &[t("a b")]), 1.0);
        assert_eq!(rouge_l(&t("a b"), &[t("c d")]), 0.0);
        assert_eq!(rouge_l::<&str>(&[], &[t("c d")]), 0.0);
    }

    #[test]
    fn meteor_hand_cases() {
        assert!((meteor_lite(&t("the cat sat"), &[t("the cat slept")]) - 0.625).abs() < 1e-12);
        assert_eq!(meteor_lite(&t("x y"), &[t("a b")]), 0.0);
        let m = 5.0f64;
        let same = meteor_lite(&t("a b c d e"), &[t("a b c d e")]);
        assert!((same - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12);
    }

    #[test]
    fn meteor_prefers_fewer_chunks_among_max_matches() {
        // greedy left-to-right would pair the first "a" with ref 0 and split
        // into more chunks than the optimum
        assert_eq!(meteor_alignment(&t("a b a b"), &t("b a b")), (3, 1));
        assert_eq!(meteor_alignment(&t("a b c"), &t("c b a")), (3, 3));
    }

    #[test]
    fn eval_tokenization() {
        assert_eq!(eval_tokenize("Who directed film_3?"), vec!["who", "directed", "film_3", "?"]);
        assert_eq!(eval_tokenize("<bos> It's"), vec!["<bos>", "it", "'", "s"]);
    }

    #[test]
    fn corpus_means() {
        let pair = |id: &str, p: &str, r: &str| EvalPair {
            id: id.into(),
            prediction: eval_tokenize(p),
            references: vec![eval_tokenize(r)],
        };
        let rep = corpus_eval(&[pair("0", "a b c d", "a b c d"), pair("1", "x", "a b c d")]);
        assert_eq!(rep.summary.count, 2);
        assert_eq!(rep.summary.exact_match, 0.5);
        assert_eq!(rep.summary.bleu4, 0.5);
        assert_eq!(rep.records[1].id, "1");
    }
}
