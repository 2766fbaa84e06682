//! Whole-model forward pass for one example.

use crate::data::Item;
use crate::dropout::Dropout;
use crate::encoder::{encode_bidirectional, EncodedSequence};
use crate::error::{Error, Result};
use crate::inference::{run_inference, InferenceRun, InferenceTrace, InferenceVars};
use crate::params::{ModelParams, ModelVars};
use crate::prediction::{nll_loss, pointer_sum_var, score_candidates, CandidateScores};
use crate::tensor::{Graph, Var};

/// Run-time switches of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardConfig {
    pub steps: usize,
    pub fixed_query_attention: bool,
}

pub struct ForwardPass {
    pub query: EncodedSequence,
    pub document: EncodedSequence,
    pub run: InferenceRun,
    /// `P(a | Q, D)`.
    pub answer_prob: Var,
    /// `-ln P(a | Q, D)`.
    pub loss: Var,
}

impl ModelVars {
    pub fn inference(&self) -> InferenceVars {
        InferenceVars {
            attention: self.attention,
            query_gate: self.query_gate,
            doc_gate: self.doc_gate,
            gru: self.inference,
            initial_state: self.initial_state,
        }
    }
}

/// Encodes query and document once, runs the inference loop and builds the
/// pointer-sum loss of the answer.
pub fn forward(
    g: &mut Graph<'_>,
    vars: &ModelVars,
    item: &Item<'_>,
    cfg: &ForwardConfig,
    dropout: &mut Dropout,
) -> Result<ForwardPass> {
    let query = encode_bidirectional(
        g,
        item.query,
        item.query_len,
        vars.embedding,
        &vars.query_fwd,
        &vars.query_bwd,
        dropout,
    )?;
    let document = encode_bidirectional(
        g,
        item.document,
        item.doc_len,
        vars.embedding,
        &vars.doc_fwd,
        &vars.doc_bwd,
        dropout,
    )?;
    let run = run_inference(
        g,
        &query,
        &document,
        &vars.inference(),
        cfg.steps,
        cfg.fixed_query_attention,
        dropout,
    )?;
    if item.answer_positions.is_empty() {
        return Err(Error::Integrity {
            source_id: item.source_id.to_string(),
            message: "answer does not occur in the document".into(),
        });
    }
    let answer_prob = pointer_sum_var(g, run.final_doc_weights(), item.answer_positions)?;
    let loss = nll_loss(g, answer_prob)?;
    Ok(ForwardPass {
        query,
        document,
        run,
        answer_prob,
        loss,
    })
}

/// Evaluation-mode prediction with the full trace.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub scores: CandidateScores,
    pub trace: InferenceTrace,
    pub loss: f64,
}

pub fn predict(params: &ModelParams, item: &Item<'_>, cfg: &ForwardConfig) -> Result<Prediction> {
    let mut g = Graph::with_params(&params.store);
    let vars = params.bind(&mut g)?;
    let pass = forward(&mut g, &vars, item, cfg, &mut Dropout::disabled())?;
    let trace = pass.run.trace(&g)?;
    let scores = score_candidates(trace.final_doc_weights(), item)?;
    Ok(Prediction {
        scores,
        trace,
        loss: g.value(pass.loss)?.item(),
    })
}
