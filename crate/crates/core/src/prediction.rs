//! Pointer-sum answer scoring: a candidate's probability is the final
//! document attention mass on the positions where it occurs.

use crate::data::{positions_of, Item};
use crate::error::{Error, Result};
use crate::inference::InferenceTrace;
use crate::tensor::{Graph, Var};

/// Floor inside the log of the answer probability.
pub const LOG_EPS: f64 = 1e-12;

/// Probability mass per candidate, in candidate order.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScores {
    pub candidates: Vec<u32>,
    pub masses: Vec<f64>,
    /// Index into `candidates` of the highest mass (lowest index on ties).
    pub predicted: usize,
}

impl CandidateScores {
    pub fn new(candidates: Vec<u32>, masses: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != masses.len() {
            return Err(Error::contract("candidate and mass lists must be non-empty and aligned"));
        }
        let predicted = argmax(&masses);
        Ok(CandidateScores {
            candidates,
            masses,
            predicted,
        })
    }

    pub fn predicted_token(&self) -> u32 {
        self.candidates[self.predicted]
    }

    pub fn mass_of(&self, token: u32) -> Option<f64> {
        self.candidates
            .iter()
            .position(|&c| c == token)
            .map(|i| self.masses[i])
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `Σ_{i ∈ positions} weights[i]`.
pub fn pointer_sum(weights: &[f64], positions: &[usize]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::contract("pointer sum over an empty position set"));
    }
    let mut s = 0.0;
    for &p in positions {
        s += *weights.get(p).ok_or(Error::Bounds {
            index: p,
            len: weights.len(),
        })?;
    }
    Ok(s)
}

/// Graph form of [`pointer_sum`].
pub fn pointer_sum_var(g: &mut Graph<'_>, weights: Var, positions: &[usize]) -> Result<Var> {
    if positions.is_empty() {
        return Err(Error::contract("pointer sum over an empty position set"));
    }
    g.index_sum(weights, positions)
}

/// Scores every candidate from the final document weights and picks the
/// argmax.
pub fn score_candidates(final_weights: &[f64], item: &Item<'_>) -> Result<CandidateScores> {
    let doc = &item.document[..item.doc_len];
    let masses = item
        .candidates
        .iter()
        .map(|&c| {
            let pos = positions_of(doc, c);
            if pos.is_empty() {
                return Err(Error::Integrity {
                    source_id: item.source_id.to_string(),
                    message: format!("candidate id {c} does not occur in the document"),
                });
            }
            pointer_sum(final_weights, &pos)
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateScores::new(item.candidates.to_vec(), masses)
}

pub fn predict_answer(trace: &InferenceTrace, item: &Item<'_>) -> Result<(u32, CandidateScores)> {
    let scores = score_candidates(trace.final_doc_weights(), item)?;
    Ok((scores.predicted_token(), scores))
}

/// `-ln(p + ε)`.
pub fn nll(prob: f64) -> Result<f64> {
    let x = prob + LOG_EPS;
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Numeric(format!("log of probability {prob}")));
    }
    Ok(-x.ln())
}

/// Graph form of [`nll`].
pub fn nll_loss(g: &mut Graph<'_>, prob: Var) -> Result<Var> {
    g.neg_log(prob, LOG_EPS)
}

/// Arithmetic mean of member masses; the prediction is the argmax of the
/// mean.
pub fn ensemble_average(members: &[CandidateScores]) -> Result<CandidateScores> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("ensemble of zero members"))?;
    let mut sums = vec![0.0; first.candidates.len()];
    for m in members {
        if m.candidates != first.candidates {
            return Err(Error::contract("ensemble members score different candidate sets"));
        }
        for (s, v) in sums.iter_mut().zip(&m.masses) {
            *s += v;
        }
    }
    let n = members.len() as f64;
    let masses = sums.into_iter().map(|s| s / n).collect();
    CandidateScores::new(first.candidates.clone(), masses)
}
