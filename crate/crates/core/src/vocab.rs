//! Token vocabulary shared by the generator, the model, and the checkpoint.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const ANS: &str = "<ans>";
pub const BRIDGE: &str = "<bridge>";
pub const DOC: &str = "<doc>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

/// Special tokens in their fixed leading order.
pub const SPECIALS: [&str; 8] = [PAD, BOS, EOS, ANS, BRIDGE, DOC, SEP, UNK];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 7;

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary must start with the special tokens {SPECIALS:?}")]
    MissingSpecials,
    #[error("duplicate token {0:?} in vocabulary")]
    Duplicate(String),
    #[error("token {0:?} contains whitespace")]
    Whitespace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Vocabulary {
    /// Specials first, then `words` in the given order (duplicates of earlier
    /// entries are skipped).
    pub fn build<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.as_ref();
            if w.chars().any(char::is_whitespace) || w.is_empty() {
                return Err(VocabError::Whitespace(w.to_string()));
            }
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len() as u32);
                tokens.push(w.to_string());
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn from_lines(text: &str) -> Result<Self, VocabError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(VocabError::MissingSpecials);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(VocabError::Whitespace(t.clone()));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_lines(&std::fs::read_to_string(path)?)
    }

    /// One token per line, newline-terminated.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_lines())?;
        Ok(())
    }

    /// SHA-256 of the serialized vocabulary, stored in checkpoints.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_lines().as_bytes()).into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_lead_and_ids_are_fixed() {
        let v = Vocabulary::build(["who", "film_3", "who"]).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v.id(BOS), Some(BOS_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        assert_eq!(v.id(UNK), Some(UNK_ID));
        assert_eq!(v.encode(&["who", "nope"]), vec![8, UNK_ID]);
    }

    #[test]
    fn lines_round_trip_and_hash_is_stable() {
        let v = Vocabulary::build(["a", "b"]).unwrap();
        let w = Vocabulary::from_lines(&v.to_lines()).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.hash(), w.hash());
        let other = Vocabulary::build(["b", "a"]).unwrap();
        assert_ne!(v.hash(), other.hash());
    }

    #[test]
    fn rejects_missing_specials() {
        assert!(matches!(
            Vocabulary::from_lines("a\nb\n"),
            Err(VocabError::MissingSpecials)
        ));
    }
}
