use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::example::{Example, Item, PAD_ID};

/// Examples padded to the longest query and document of the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Indices into the corpus the batch was drawn from.
    pub indices: Vec<usize>,
    pub source_ids: Vec<String>,
    pub queries: Vec<Vec<u32>>,
    pub query_lens: Vec<usize>,
    pub documents: Vec<Vec<u32>>,
    pub doc_lens: Vec<usize>,
    pub candidates: Vec<Vec<u32>>,
    pub answers: Vec<u32>,
    pub answer_positions: Vec<Vec<usize>>,
}

impl Batch {
    pub fn from_examples(corpus: &[Example], indices: &[usize]) -> Self {
        let max_q = indices.iter().map(|&i| corpus[i].query.len()).max().unwrap_or(0);
        let max_d = indices.iter().map(|&i| corpus[i].document.len()).max().unwrap_or(0);
        let pad = |v: &[u32], n: usize| {
            let mut out = v.to_vec();
            out.resize(n, PAD_ID);
            out
        };
        let mut b = Batch {
            indices: indices.to_vec(),
            source_ids: Vec::new(),
            queries: Vec::new(),
            query_lens: Vec::new(),
            documents: Vec::new(),
            doc_lens: Vec::new(),
            candidates: Vec::new(),
            answers: Vec::new(),
            answer_positions: Vec::new(),
        };
        for &i in indices {
            let ex = &corpus[i];
            b.source_ids.push(ex.source_id.clone());
            b.queries.push(pad(&ex.query, max_q));
            b.query_lens.push(ex.query.len());
            b.documents.push(pad(&ex.document, max_d));
            b.doc_lens.push(ex.document.len());
            b.candidates.push(ex.candidates.clone());
            b.answers.push(ex.answer);
            b.answer_positions.push(ex.answer_positions.clone());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn item(&self, i: usize) -> Item<'_> {
        Item {
            source_id: &self.source_ids[i],
            query: &self.queries[i],
            query_len: self.query_lens[i],
            document: &self.documents[i],
            doc_len: self.doc_lens[i],
            candidates: &self.candidates[i],
            answer: self.answers[i],
            answer_positions: &self.answer_positions[i],
        }
    }

    pub fn items(&self) -> impl Iterator<Item = Item<'_>> {
        (0..self.len()).map(|i| self.item(i))
    }
}

/// Corpus order, optionally shuffled under `seed`.
pub fn batch_order(n: usize, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    order
}

/// Splits the corpus into padded batches; the final short batch is kept.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64, shuffle: bool) -> Vec<Batch> {
    let order = batch_order(examples.len(), seed, shuffle);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_examples(examples, chunk))
        .collect()
}
