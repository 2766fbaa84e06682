use std::collections::HashSet;

use crate::error::{Error, Result};

/// Reserved ids, fixed across every vocabulary.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PLACEHOLDER_ID: u32 = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Canonical placeholder. Corpus readers rewrite their own marker
/// (`XXXXX`, `@placeholder`) to this token.
pub const PLACEHOLDER_TOKEN: &str = "@placeholder";

/// A comprehension instance in token form, as read from a corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub source_id: String,
    pub query: Vec<String>,
    pub document: Vec<String>,
    pub candidates: Vec<String>,
    pub answer: String,
}

fn integrity(source_id: &str, message: impl Into<String>) -> Error {
    Error::Integrity {
        source_id: source_id.to_string(),
        message: message.into(),
    }
}

impl RawExample {
    pub fn validate(&self) -> Result<()> {
        let id = self.source_id.as_str();
        let placeholders = self.query.iter().filter(|t| *t == PLACEHOLDER_TOKEN).count();
        if placeholders != 1 {
            return Err(integrity(
                id,
                format!("query holds {placeholders} placeholders, expected exactly one"),
            ));
        }
        if self.document.is_empty() {
            return Err(integrity(id, "empty document"));
        }
        if self.candidates.len() < 2 {
            return Err(integrity(
                id,
                format!("{} candidates, need at least two", self.candidates.len()),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.as_str()) {
                return Err(integrity(id, format!("duplicate candidate {c:?}")));
            }
        }
        if !seen.contains(self.answer.as_str()) {
            return Err(integrity(
                id,
                format!("answer {:?} is not a candidate", self.answer),
            ));
        }
        let doc: HashSet<&str> = self.document.iter().map(String::as_str).collect();
        for c in &self.candidates {
            if !doc.contains(c.as_str()) {
                return Err(integrity(id, format!("candidate {c:?} absent from document")));
            }
        }
        Ok(())
    }

    pub fn lowercased(mut self) -> Self {
        let lower = |t: &mut String| {
            if t != PLACEHOLDER_TOKEN {
                *t = t.to_lowercase();
            }
        };
        self.query.iter_mut().for_each(lower);
        self.document.iter_mut().for_each(lower);
        self.candidates.iter_mut().for_each(lower);
        lower(&mut self.answer);
        self
    }
}

/// A comprehension instance over vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source_id: String,
    pub query: Vec<u32>,
    pub document: Vec<u32>,
    pub candidates: Vec<u32>,
    pub answer: u32,
    /// Positions in `document` holding `answer`.
    pub answer_positions: Vec<usize>,
}

impl Example {
    /// Builds an example and checks every structural invariant.
    pub fn new(
        source_id: impl Into<String>,
        query: Vec<u32>,
        document: Vec<u32>,
        candidates: Vec<u32>,
        answer: u32,
    ) -> Result<Self> {
        let source_id = source_id.into();
        let placeholders = query.iter().filter(|&&t| t == PLACEHOLDER_ID).count();
        if placeholders != 1 {
            return Err(integrity(
                &source_id,
                format!("query holds {placeholders} placeholders, expected exactly one"),
            ));
        }
        if candidates.len() < 2 {
            return Err(integrity(&source_id, "fewer than two candidates"));
        }
        let distinct: HashSet<u32> = candidates.iter().copied().collect();
        if distinct.len() != candidates.len() {
            return Err(integrity(&source_id, "candidates are not distinct"));
        }
        if !distinct.contains(&answer) {
            return Err(integrity(&source_id, "answer is not a candidate"));
        }
        for &c in &candidates {
            if !document.contains(&c) {
                return Err(integrity(&source_id, format!("candidate id {c} absent from document")));
            }
        }
        let answer_positions = positions_of(&document, answer);
        Ok(Example {
            source_id,
            query,
            document,
            candidates,
            answer,
            answer_positions,
        })
    }

    pub fn answer_index(&self) -> usize {
        self.candidates
            .iter()
            .position(|&c| c == self.answer)
            .expect("answer is a candidate")
    }

    pub fn as_item(&self) -> Item<'_> {
        Item {
            source_id: &self.source_id,
            query: &self.query,
            query_len: self.query.len(),
            document: &self.document,
            doc_len: self.document.len(),
            candidates: &self.candidates,
            answer: self.answer,
            answer_positions: &self.answer_positions,
        }
    }
}

pub fn positions_of(document: &[u32], token: u32) -> Vec<usize> {
    document
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == token)
        .map(|(i, _)| i)
        .collect()
}

/// Borrowed view of one example, possibly padded past its true lengths.
#[derive(Clone, Copy, Debug)]
pub struct Item<'a> {
    pub source_id: &'a str,
    pub query: &'a [u32],
    pub query_len: usize,
    pub document: &'a [u32],
    pub doc_len: usize,
    pub candidates: &'a [u32],
    pub answer: u32,
    pub answer_positions: &'a [usize],
}

impl Item<'_> {
    pub fn query_mask(&self) -> Vec<bool> {
        (0..self.query.len()).map(|i| i < self.query_len).collect()
    }

    pub fn doc_mask(&self) -> Vec<bool> {
        (0..self.document.len()).map(|i| i < self.doc_len).collect()
    }

    pub fn answer_index(&self) -> usize {
        self.candidates
            .iter()
            .position(|&c| c == self.answer)
            .expect("answer is a candidate")
    }
}
