use std::collections::HashMap;

use super::example::{
    Example, RawExample, PAD_TOKEN, PLACEHOLDER_TOKEN, UNK_ID, UNK_TOKEN,
};
use crate::error::{Error, Result};

/// Default hard cap on document length. Longer documents are an error,
/// never silently truncated.
pub const DEFAULT_MAX_DOC_LEN: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Examples that encoded cleanly plus those that could not be answered
/// under this vocabulary (a candidate or the answer fell out of it).
#[derive(Clone, Debug, Default)]
pub struct EncodedCorpus {
    pub examples: Vec<Example>,
    pub unanswerable: Vec<String>,
}

impl EncodedCorpus {
    /// Examples scored, counting unanswerable ones as misses.
    pub fn total(&self) -> usize {
        self.examples.len() + self.unanswerable.len()
    }
}

impl Vocabulary {
    fn reserved() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN] {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) {
        let id = self.tokens.len() as u32;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
    }

    /// Frequency-ranked vocabulary over query and document tokens. Ties are
    /// broken by byte order so the result does not depend on hash order.
    pub fn build(examples: &[RawExample], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in examples {
            for t in ex.query.iter().chain(&ex.document) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        for t in [PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN] {
            counts.remove(t);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Self::reserved();
        for (t, _) in ranked {
            v.push(t.to_string());
        }
        v
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = [PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN];
        if tokens.len() < 3 || tokens[..3] != reserved {
            return Err(Error::Config("vocabulary does not start with the reserved tokens".into()));
        }
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    /// Maps an example onto ids. Fails with an integrity error when the
    /// answer or a candidate is out of vocabulary.
    pub fn encode_example(&self, raw: &RawExample) -> Result<Example> {
        for c in &raw.candidates {
            if self.id(c) == UNK_ID {
                return Err(Error::Integrity {
                    source_id: raw.source_id.clone(),
                    message: format!("candidate {c:?} is out of vocabulary"),
                });
            }
        }
        Example::new(
            raw.source_id.clone(),
            self.encode(&raw.query),
            self.encode(&raw.document),
            self.encode(&raw.candidates),
            self.id(&raw.answer),
        )
    }

    /// Encodes a whole split. Unanswerable examples are collected by id;
    /// documents over `max_doc_len` are an error.
    pub fn encode_corpus(&self, raws: &[RawExample], max_doc_len: usize) -> Result<EncodedCorpus> {
        let mut out = EncodedCorpus::default();
        for raw in raws {
            if raw.document.len() > max_doc_len {
                return Err(Error::Integrity {
                    source_id: raw.source_id.clone(),
                    message: format!(
                        "document has {} tokens, above the cap of {max_doc_len}",
                        raw.document.len()
                    ),
                });
            }
            match self.encode_example(raw) {
                Ok(ex) => out.examples.push(ex),
                Err(Error::Integrity { .. }) => out.unanswerable.push(raw.source_id.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}
