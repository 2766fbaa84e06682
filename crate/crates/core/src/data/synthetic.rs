//! Seeded Cloze benchmark small enough to learn on one CPU core.
//!
//! Each document hides one key phrase `f1 K a f2`, where `K` is a marker
//! token and `a` the answer. The query is that phrase with `a` replaced by
//! the placeholder, surrounded by random filler words, so a reader that
//! pools the whole query evenly sees the marker through a lot of noise.
//! Other markers also occur in the document, each followed by a distractor
//! candidate, so the query marker must be matched rather than any marker.
//! Every candidate occurs once or twice, so occurrence counts carry no
//! signal about the answer.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::example::{RawExample, PLACEHOLDER_TOKEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    /// Number of ordinary word types (markers come on top).
    pub vocab_size: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub n_candidates: usize,
    pub n_markers: usize,
    /// Filler words around the key phrase in the query, inclusive range.
    pub query_noise_min: usize,
    pub query_noise_max: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_examples: 5000,
            vocab_size: 200,
            doc_len_min: 30,
            doc_len_max: 60,
            n_candidates: 10,
            n_markers: 3,
            query_noise_min: 4,
            query_noise_max: 8,
            seed: 1,
        }
    }
}

pub fn word(i: usize) -> String {
    format!("w{i}")
}

pub fn marker(i: usize) -> String {
    format!("k{i}")
}

const MAX_OCCURRENCES: usize = 2;
const KEY_SENTENCE_LEN: usize = 4;

impl SyntheticConfig {
    fn check(&self) -> Result<()> {
        let fixed = KEY_SENTENCE_LEN + self.n_markers.saturating_sub(1) + MAX_OCCURRENCES * self.n_candidates - 1;
        if self.n_candidates < 2 {
            return Err(Error::contract("synthetic corpus needs at least two candidates"));
        }
        if self.n_markers == 0 || self.n_markers > self.n_candidates {
            return Err(Error::contract("marker count must lie in 1..=n_candidates"));
        }
        if self.doc_len_min > self.doc_len_max || self.doc_len_min < fixed {
            return Err(Error::contract(format!(
                "document length range {}..={} cannot hold {fixed} structural tokens",
                self.doc_len_min, self.doc_len_max
            )));
        }
        if self.query_noise_min > self.query_noise_max {
            return Err(Error::contract("query noise range is empty"));
        }
        if self.vocab_size < self.n_candidates + 10 {
            return Err(Error::contract(format!(
                "vocabulary of {} words leaves too few fillers for {} candidates",
                self.vocab_size, self.n_candidates
            )));
        }
        Ok(())
    }
}

fn one_example(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String) -> RawExample {
    let len = rng.random_range(cfg.doc_len_min..=cfg.doc_len_max);
    let cand_ids = rand::seq::index::sample(rng, cfg.vocab_size, cfg.n_candidates).into_vec();
    let fillers: Vec<usize> = (0..cfg.vocab_size).filter(|w| !cand_ids.contains(w)).collect();
    let answer_slot = rng.random_range(0..cfg.n_candidates);
    let query_marker = rng.random_range(0..cfg.n_markers);

    let mut remaining: Vec<usize> = (0..cfg.n_candidates)
        .map(|_| rng.random_range(1..=MAX_OCCURRENCES))
        .collect();

    let f1 = *fillers.choose(rng).expect("fillers exist");
    let f2 = *fillers.choose(rng).expect("fillers exist");
    let answer = cand_ids[answer_slot];
    let mut units: Vec<Vec<String>> = vec![vec![word(f1), marker(query_marker), word(answer), word(f2)]];
    remaining[answer_slot] -= 1;

    let mut others: Vec<usize> = (0..cfg.n_candidates).filter(|&c| c != answer_slot).collect();
    others.shuffle(rng);
    let other_markers = (0..cfg.n_markers).filter(|&m| m != query_marker);
    for (m, &slot) in other_markers.zip(&others) {
        units.push(vec![marker(m), word(cand_ids[slot])]);
        remaining[slot] -= 1;
    }
    for (slot, &count) in remaining.iter().enumerate() {
        for _ in 0..count {
            units.push(vec![word(cand_ids[slot])]);
        }
    }
    let used: usize = units.iter().map(Vec::len).sum();
    for _ in used..len {
        units.push(vec![word(*fillers.choose(rng).expect("fillers exist"))]);
    }
    units.shuffle(rng);

    let noise = rng.random_range(cfg.query_noise_min..=cfg.query_noise_max);
    let before = rng.random_range(0..=noise);
    let mut query: Vec<String> = (0..before)
        .map(|_| word(*fillers.choose(rng).expect("fillers exist")))
        .collect();
    query.extend([word(f1), marker(query_marker), PLACEHOLDER_TOKEN.to_string(), word(f2)]);
    query.extend((before..noise).map(|_| word(*fillers.choose(rng).expect("fillers exist"))));

    RawExample {
        source_id: id,
        query,
        document: units.into_iter().flatten().collect(),
        candidates: cand_ids.iter().map(|&c| word(c)).collect(),
        answer: word(answer),
    }
}

/// Generates `cfg.n_examples` examples; identical configs give identical
/// corpora.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<RawExample>> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out: Vec<RawExample> = (0..cfg.n_examples)
        .map(|i| one_example(cfg, &mut rng, format!("synthetic-{}-{i}", cfg.seed)))
        .collect();
    debug_assert!(out.iter().all(|e| e.validate().is_ok()));
    Ok(out)
}

/// Train and validation splits drawn from one seeded stream.
pub fn synthetic_splits(cfg: &SyntheticConfig, n_train: usize, n_valid: usize) -> Result<(Vec<RawExample>, Vec<RawExample>)> {
    let mut all = generate_synthetic(&SyntheticConfig {
        n_examples: n_train + n_valid,
        ..cfg.clone()
    })?;
    let valid = all.split_off(n_train);
    Ok((all, valid))
}
