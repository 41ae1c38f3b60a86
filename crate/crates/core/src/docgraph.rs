//! Bridge entities, the document graph, BFS arrangement, and step-input
//! assembly.
//!
//! Documents link when they share at least one entity. The answer document
//! is the BFS root; neighbours are visited in ascending document id. The
//! bridge set of position `t` holds the entities of `C_t` that appear in any
//! later arranged document, and the final position has none.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::vocab::{self, ANS, BRIDGE, DOC, SEP};

/// Lowercase tokens allowed inside a capitalized entity run.
const CONNECTORS: [&str; 7] = ["of", "the", "de", "and", "for", "in", "on"];

/// Capitalized single tokens that are never entities on their own.
const CAPITALIZED_STOPWORDS: [&str; 9] = ["The", "A", "An", "It", "He", "She", "They", "This", "In"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: usize,
    pub title: Vec<String>,
    pub text: Vec<String>,
    pub is_answer_doc: bool,
    /// Entity spans supplied by the dataset record (space-joined tokens).
    pub annotations: Vec<String>,
}

impl Document {
    pub fn new(id: usize, title: &str, text: &str, is_answer_doc: bool, annotations: Vec<String>) -> Self {
        Self {
            id,
            title: tokenize(title),
            text: tokenize(text),
            is_answer_doc,
            annotations,
        }
    }
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ArrangeError {
    #[error("no document is marked as the answer document")]
    NoAnswerDoc,
    #[error("documents {0:?} are all marked as answer documents")]
    MultipleAnswerDocs(Vec<usize>),
    #[error("document graph is disconnected; unreachable from the answer document: {unreachable:?}")]
    Disconnected { unreachable: Vec<usize> },
    #[error("example has no documents")]
    Empty,
    #[error("assembled step input has {len} tokens, max_len is {max}")]
    TooLong { len: usize, max: usize },
    #[error("reserved token {0:?} inside document content")]
    ReservedToken(String),
    #[error("malformed step input: {0}")]
    Malformed(String),
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

/// Annotated spans plus maximal capitalized runs of the title and text.
///
/// A run may continue through connector words ("Battle of Atlanta") but never
/// ends on one; leading capitalized stopwords ("The", "In") are trimmed.
pub fn extract_entities(doc: &Document) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = doc.annotations.iter().cloned().collect();
    for seq in [&doc.title, &doc.text] {
        capitalized_runs(seq, &mut out);
    }
    out
}

fn capitalized_runs(tokens: &[String], out: &mut BTreeSet<String>) {
    let mut i = 0;
    while i < tokens.len() {
        if !is_capitalized(&tokens[i]) || vocab::is_special(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        let mut j = end;
        while j < tokens.len() {
            if is_capitalized(&tokens[j]) {
                j += 1;
                end = j;
            } else if CONNECTORS.contains(&tokens[j].as_str()) {
                j += 1;
            } else {
                break;
            }
        }
        let mut run = &tokens[start..end];
        while let Some(first) = run.first() {
            let w = first.as_str();
            if CAPITALIZED_STOPWORDS.contains(&w) || CONNECTORS.contains(&w) {
                run = &run[1..];
            } else {
                break;
            }
        }
        if !run.is_empty() {
            out.insert(run.join(" "));
        }
        i = end;
    }
}

/// Shared-entity sets for every document pair `(i, j)` with `i < j` that
/// shares at least one entity.
pub fn bridge_entities(docs: &[Document]) -> BTreeMap<(usize, usize), BTreeSet<String>> {
    let ents: Vec<BTreeSet<String>> = docs.iter().map(extract_entities).collect();
    let mut out = BTreeMap::new();
    for a in 0..docs.len() {
        for b in a + 1..docs.len() {
            let shared: BTreeSet<String> = ents[a].intersection(&ents[b]).cloned().collect();
            if !shared.is_empty() {
                let key = if docs[a].id < docs[b].id {
                    (docs[a].id, docs[b].id)
                } else {
                    (docs[b].id, docs[a].id)
                };
                out.insert(key, shared);
            }
        }
    }
    out
}

/// Document order and per-position bridge sets.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Arrangement {
    /// Document ids, answer document first.
    pub order: Vec<usize>,
    /// `B_1..B_{N-1}`, each sorted.
    pub bridges: Vec<Vec<String>>,
}

pub fn arrange(docs: &[Document]) -> Result<Arrangement, ArrangeError> {
    if docs.is_empty() {
        return Err(ArrangeError::Empty);
    }
    let answers: Vec<usize> = docs.iter().filter(|d| d.is_answer_doc).map(|d| d.id).collect();
    let root = match answers.as_slice() {
        [] => return Err(ArrangeError::NoAnswerDoc),
        [r] => *r,
        _ => return Err(ArrangeError::MultipleAnswerDocs(answers)),
    };
    let edges = bridge_entities(docs);
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = docs.iter().map(|d| (d.id, BTreeSet::new())).collect();
    for &(a, b) in edges.keys() {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }
    let mut order = Vec::with_capacity(docs.len());
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        order.push(n);
        for &m in &adj[&n] {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    if order.len() < adj.len() {
        let unreachable = adj.keys().copied().filter(|id| !seen.contains(id)).collect();
        return Err(ArrangeError::Disconnected { unreachable });
    }
    let ents: BTreeMap<usize, BTreeSet<String>> = docs.iter().map(|d| (d.id, extract_entities(d))).collect();
    let bridges = (0..order.len().saturating_sub(1))
        .map(|t| {
            let later: BTreeSet<&String> = order[t + 1..].iter().flat_map(|id| &ents[id]).collect();
            ents[&order[t]].iter().filter(|e| later.contains(e)).cloned().collect()
        })
        .collect();
    Ok(Arrangement { order, bridges })
}

/// An example with its documents in arranged order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrangedExample {
    pub id: String,
    pub hops: usize,
    pub answer: Vec<String>,
    pub documents: Vec<Document>,
    /// `B_1..B_{N-1}`.
    pub bridges: Vec<Vec<String>>,
    pub gold_question: Vec<String>,
}

impl ArrangedExample {
    pub fn new(
        id: impl Into<String>,
        answer: &str,
        gold_question: &str,
        docs: &[Document],
        arrangement: &Arrangement,
    ) -> Result<Self, ArrangeError> {
        let documents = arrangement
            .order
            .iter()
            .map(|&i| {
                docs.iter()
                    .find(|d| d.id == i)
                    .cloned()
                    .ok_or_else(|| ArrangeError::Malformed(format!("arranged document {i} does not exist")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if arrangement.bridges.len() + 1 != documents.len() {
            return Err(ArrangeError::Malformed(format!(
                "{} bridge sets for {} documents",
                arrangement.bridges.len(),
                documents.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            hops: documents.len(),
            answer: tokenize(answer),
            documents,
            bridges: arrangement.bridges.clone(),
            gold_question: tokenize(gold_question),
        })
    }
}

fn check_content(tokens: &[String]) -> Result<(), ArrangeError> {
    match tokens.iter().find(|t| vocab::is_special(t)) {
        Some(t) => Err(ArrangeError::ReservedToken(t.clone())),
        None => Ok(()),
    }
}

/// `<ans> answer <bridge> e1 <sep> e2 … <doc> title <sep> text`; the bridge
/// section is omitted when `bridges` is `None` (the final step).
pub fn assemble_step_input(
    doc: &Document,
    bridges: Option<&[String]>,
    answer: &[String],
    max_len: usize,
) -> Result<Vec<String>, ArrangeError> {
    check_content(answer)?;
    check_content(&doc.title)?;
    check_content(&doc.text)?;
    let mut out = vec![ANS.to_string()];
    out.extend(answer.iter().cloned());
    if let Some(bridges) = bridges {
        out.push(BRIDGE.to_string());
        for (i, e) in bridges.iter().enumerate() {
            let toks = tokenize(e);
            check_content(&toks)?;
            if i > 0 {
                out.push(SEP.to_string());
            }
            out.extend(toks);
        }
    }
    out.push(DOC.to_string());
    out.extend(doc.title.iter().cloned());
    out.push(SEP.to_string());
    out.extend(doc.text.iter().cloned());
    if out.len() > max_len {
        return Err(ArrangeError::TooLong { len: out.len(), max: max_len });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedStepInput {
    pub answer: Vec<String>,
    pub bridges: Option<Vec<String>>,
    pub title: Vec<String>,
    pub text: Vec<String>,
}

/// Inverse of [`assemble_step_input`].
pub fn parse_step_input(tokens: &[String]) -> Result<ParsedStepInput, ArrangeError> {
    let bad = |m: &str| ArrangeError::Malformed(m.to_string());
    if tokens.first().map(String::as_str) != Some(ANS) {
        return Err(bad("missing leading <ans>"));
    }
    let doc = tokens.iter().position(|t| t == DOC).ok_or_else(|| bad("missing <doc>"))?;
    let head = &tokens[1..doc];
    let (answer, bridges) = match head.iter().position(|t| t == BRIDGE) {
        None => (head.to_vec(), None),
        Some(b) => {
            let section = &head[b + 1..];
            let bridges = if section.is_empty() {
                Vec::new()
            } else {
                section.split(|t| t == SEP).map(|s| s.join(" ")).collect()
            };
            (head[..b].to_vec(), Some(bridges))
        }
    };
    let body = &tokens[doc + 1..];
    let sep = body.iter().position(|t| t == SEP).ok_or_else(|| bad("missing title separator"))?;
    Ok(ParsedStepInput {
        answer,
        bridges,
        title: body[..sep].to_vec(),
        text: body[sep + 1..].to_vec(),
    })
}
