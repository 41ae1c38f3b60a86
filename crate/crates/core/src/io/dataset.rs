use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::docgraph::{arrange, ArrangeError, Arrangement, ArrangedExample, Document};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub title: String,
    pub text: String,
    pub is_answer_doc: bool,
    #[serde(default)]
    pub entities: Vec<String>,
}

/// One line of a dataset file. `arrangement` is filled in by `arrange`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub hops: usize,
    pub answer: String,
    pub question: String,
    pub documents: Vec<DocumentRecord>,
    /// Evaluation only; never a training target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_intermediates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrangement: Option<Arrangement>,
}

impl DatasetRecord {
    /// Documents with ids equal to their position in the record.
    pub fn documents(&self) -> Vec<Document> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| Document::new(i, &d.title, &d.text, d.is_answer_doc, d.entities.clone()))
            .collect()
    }

    /// Computes the arrangement and checks it covers `hops` documents.
    pub fn arrange(&self) -> Result<Arrangement, ArrangeError> {
        let a = arrange(&self.documents())?;
        if a.order.len() != self.hops {
            return Err(ArrangeError::Malformed(format!(
                "record declares {} hops but has {} connected documents",
                self.hops,
                a.order.len()
            )));
        }
        Ok(a)
    }

    /// Uses the stored arrangement, or computes one if absent.
    pub fn arranged(&self) -> Result<ArrangedExample, ArrangeError> {
        let a = match &self.arrangement {
            Some(a) => a.clone(),
            None => self.arrange()?,
        };
        let ex = ArrangedExample::new(&self.id, &self.answer, &self.question, &self.documents(), &a)?;
        if ex.hops != self.hops {
            return Err(ArrangeError::Malformed(format!(
                "record declares {} hops, arrangement has {}",
                self.hops, ex.hops
            )));
        }
        Ok(ex)
    }
}

/// Reads a line-delimited JSON file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| IoError::Record {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses each non-blank line separately so one bad record does not abort
/// the file. Line numbers are 1-based.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, Result<T, String>)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
        .collect())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| IoError::file(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}
