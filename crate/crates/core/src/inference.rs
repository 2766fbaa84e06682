//! The iterative alternating attention loop.
//!
//! Each step reads the query under the current inference state, reads the
//! document under the state and that query glimpse, gates both glimpses and
//! feeds them to the inference GRU.

use crate::dropout::Dropout;
use crate::encoder::{gru_step, EncodedSequence};
use crate::error::{Error, Result};
use crate::params::{AttentionVars, GateVars, GruVars};
use crate::tensor::{Graph, Tensor, Var};

/// Attention weights over a sequence and the weighted sum of its encodings.
#[derive(Clone, Copy, Debug)]
pub struct Glimpse {
    pub vector: Var,
    pub weights: Var,
}

fn attend(
    g: &mut Graph<'_>,
    seq: &EncodedSequence,
    key: Var,
    dropout: &mut Dropout,
) -> Result<Glimpse> {
    let logit_inputs = dropout.apply(g, seq.encodings)?;
    let logits = g.matvec(logit_inputs, key)?;
    let weights = g.masked_softmax(logits, &seq.mask)?;
    let vector = g.vecmat(weights, seq.encodings)?;
    Ok(Glimpse { vector, weights })
}

/// Uniform weights over the unmasked positions.
pub fn uniform_weights(mask: &[bool]) -> Result<Vec<f64>> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptySupport { len: mask.len() });
    }
    let w = 1.0 / n as f64;
    Ok(mask.iter().map(|&m| if m { w } else { 0.0 }).collect())
}

/// `q_i ∝ exp(q̃_iᵀ (A_q s + a_q))`, glimpse `Σ q_i q̃_i`. With
/// `fixed_uniform` the weights are exactly `1/|Q|` instead.
pub fn query_attentive_read(
    g: &mut Graph<'_>,
    query: &EncodedSequence,
    s_prev: Var,
    att: &AttentionVars,
    fixed_uniform: bool,
    dropout: &mut Dropout,
) -> Result<Glimpse> {
    if query.len == 0 {
        return Err(Error::contract("empty query"));
    }
    if fixed_uniform {
        let weights = g.constant(Tensor::vector(uniform_weights(&query.mask)?))?;
        let vector = g.vecmat(weights, query.encodings)?;
        return Ok(Glimpse { vector, weights });
    }
    let projected = g.matvec(att.query_weight, s_prev)?;
    let key = g.add(projected, att.query_bias)?;
    attend(g, query, key, dropout)
}

/// `d_i ∝ exp(d̃_iᵀ (A_d [s, q_t] + a_d))`, glimpse `Σ d_i d̃_i`.
pub fn document_attentive_read(
    g: &mut Graph<'_>,
    doc: &EncodedSequence,
    s_prev: Var,
    q_t: Var,
    att: &AttentionVars,
    dropout: &mut Dropout,
) -> Result<Glimpse> {
    if doc.len == 0 {
        return Err(Error::contract("empty document"));
    }
    let joined = g.concat(&[s_prev, q_t])?;
    let projected = g.matvec(att.doc_weight, joined)?;
    let key = g.add(projected, att.doc_bias)?;
    attend(g, doc, key, dropout)
}

fn gate_network(g: &mut Graph<'_>, input: Var, p: &GateVars) -> Result<Var> {
    let a = g.matvec(p.hidden_weight, input)?;
    let a = g.add(a, p.hidden_bias)?;
    let hidden = g.tanh(a)?;
    let b = g.matvec(p.out_weight, hidden)?;
    let b = g.add(b, p.out_bias)?;
    g.sigmoid(b)
}

/// Query and document resets from `[s, q_t, d_t, q_t · d_t]`.
pub fn gate(
    g: &mut Graph<'_>,
    s_prev: Var,
    q_t: Var,
    d_t: Var,
    query_gate: &GateVars,
    doc_gate: &GateVars,
    dropout: &mut Dropout,
) -> Result<(Var, Var)> {
    let interaction = g.mul(q_t, d_t)?;
    let input = g.concat(&[s_prev, q_t, d_t, interaction])?;
    let input = dropout.apply(g, input)?;
    let r_q = gate_network(g, input, query_gate)?;
    let r_d = gate_network(g, input, doc_gate)?;
    Ok((r_q, r_d))
}

/// Everything the loop needs besides the encodings.
#[derive(Clone, Copy, Debug)]
pub struct InferenceVars {
    pub attention: AttentionVars,
    pub query_gate: GateVars,
    pub doc_gate: GateVars,
    pub gru: GruVars,
    pub initial_state: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub query: Glimpse,
    pub document: Glimpse,
    pub query_gate: Var,
    pub doc_gate: Var,
    pub state: Var,
}

#[derive(Clone, Debug)]
pub struct InferenceRun {
    pub steps: Vec<StepVars>,
}

impl InferenceRun {
    /// Document weights of the last step; these feed answer prediction.
    pub fn final_doc_weights(&self) -> Var {
        self.steps.last().expect("at least one step").document.weights
    }

    pub fn trace(&self, g: &Graph<'_>) -> Result<InferenceTrace> {
        let v = |x: Var| -> Result<Vec<f64>> { Ok(g.value(x)?.data().to_vec()) };
        let steps = self
            .steps
            .iter()
            .map(|s| {
                Ok(TraceStep {
                    query_weights: v(s.query.weights)?,
                    doc_weights: v(s.document.weights)?,
                    query_glimpse: v(s.query.vector)?,
                    doc_glimpse: v(s.document.vector)?,
                    query_gate: v(s.query_gate)?,
                    doc_gate: v(s.doc_gate)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(InferenceTrace { steps })
    }
}

/// Values recorded at one inference step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub query_weights: Vec<f64>,
    pub doc_weights: Vec<f64>,
    pub query_glimpse: Vec<f64>,
    pub doc_glimpse: Vec<f64>,
    pub query_gate: Vec<f64>,
    pub doc_gate: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceTrace {
    pub steps: Vec<TraceStep>,
}

impl InferenceTrace {
    pub fn final_doc_weights(&self) -> &[f64] {
        &self.steps.last().expect("at least one step").doc_weights
    }
}

/// `steps` rounds of query read, document read, gating and
/// `s_t = GRU([r_q · q_t, r_d · d_t], s_{t-1})`, starting from the trainable
/// initial state. Encodings are taken as given and never recomputed.
pub fn run_inference(
    g: &mut Graph<'_>,
    query: &EncodedSequence,
    doc: &EncodedSequence,
    vars: &InferenceVars,
    steps: usize,
    fixed_uniform: bool,
    dropout: &mut Dropout,
) -> Result<InferenceRun> {
    if steps == 0 {
        return Err(Error::contract("inference needs at least one step"));
    }
    let mut state = vars.initial_state;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let q = query_attentive_read(g, query, state, &vars.attention, fixed_uniform, dropout)?;
        let d = document_attentive_read(g, doc, state, q.vector, &vars.attention, dropout)?;
        let (r_q, r_d) = gate(g, state, q.vector, d.vector, &vars.query_gate, &vars.doc_gate, dropout)?;
        let gated_q = g.mul(r_q, q.vector)?;
        let gated_d = g.mul(r_d, d.vector)?;
        let input = g.concat(&[gated_q, gated_d])?;
        state = gru_step(g, input, state, &vars.gru)?;
        out.push(StepVars {
            query: q,
            document: d,
            query_gate: r_q,
            doc_gate: r_d,
            state,
        });
    }
    Ok(InferenceRun { steps: out })
}
