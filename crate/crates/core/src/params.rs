//! Layout of every trainable array of the model.

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Model sizes: vocabulary, embedding `d`, encoder `h`, inference state `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub state: usize,
}

impl Dims {
    /// Width of a bidirectional encoding, `2h`.
    pub fn encoding(&self) -> usize {
        2 * self.hidden
    }

    /// Gate network input width, `s + 6h`.
    pub fn gate_input(&self) -> usize {
        self.state + 6 * self.hidden
    }
}

/// The six bias-free matrices of one GRU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruIds {
    pub input_reset: ParamId,
    pub input_update: ParamId,
    pub input_candidate: ParamId,
    pub hidden_reset: ParamId,
    pub hidden_update: ParamId,
    pub hidden_candidate: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub input_reset: Var,
    pub input_update: Var,
    pub input_candidate: Var,
    pub hidden_reset: Var,
    pub hidden_update: Var,
    pub hidden_candidate: Var,
}

impl GruIds {
    pub fn recurrent(&self) -> [ParamId; 3] {
        [self.hidden_reset, self.hidden_update, self.hidden_candidate]
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> Result<GruVars> {
        Ok(GruVars {
            input_reset: g.param(self.input_reset)?,
            input_update: g.param(self.input_update)?,
            input_candidate: g.param(self.input_candidate)?,
            hidden_reset: g.param(self.hidden_reset)?,
            hidden_update: g.param(self.hidden_update)?,
            hidden_candidate: g.param(self.hidden_candidate)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIds {
    /// `2h × s`
    pub query_weight: ParamId,
    pub query_bias: ParamId,
    /// `2h × (s + 2h)`
    pub doc_weight: ParamId,
    pub doc_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub query_weight: Var,
    pub query_bias: Var,
    pub doc_weight: Var,
    pub doc_bias: Var,
}

impl AttentionIds {
    pub fn bind(&self, g: &mut Graph<'_>) -> Result<AttentionVars> {
        Ok(AttentionVars {
            query_weight: g.param(self.query_weight)?,
            query_bias: g.param(self.query_bias)?,
            doc_weight: g.param(self.doc_weight)?,
            doc_bias: g.param(self.doc_bias)?,
        })
    }
}

/// Two-layer gate network: tanh hidden layer of width `2h`, sigmoid output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateIds {
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub hidden_weight: Var,
    pub hidden_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl GateIds {
    pub fn biases(&self) -> [ParamId; 2] {
        [self.hidden_bias, self.out_bias]
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> Result<GateVars> {
        Ok(GateVars {
            hidden_weight: g.param(self.hidden_weight)?,
            hidden_bias: g.param(self.hidden_bias)?,
            out_weight: g.param(self.out_weight)?,
            out_bias: g.param(self.out_bias)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub query_fwd: GruIds,
    pub query_bwd: GruIds,
    pub doc_fwd: GruIds,
    pub doc_bwd: GruIds,
    pub attention: AttentionIds,
    pub query_gate: GateIds,
    pub doc_gate: GateIds,
    pub inference: GruIds,
    pub initial_state: ParamId,
}

/// Parameters bound into one graph.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub embedding: Var,
    pub query_fwd: GruVars,
    pub query_bwd: GruVars,
    pub doc_fwd: GruVars,
    pub doc_bwd: GruVars,
    pub attention: AttentionVars,
    pub query_gate: GateVars,
    pub doc_gate: GateVars,
    pub inference: GruVars,
    pub initial_state: Var,
}

struct Layout<F: FnMut(&str, &[usize]) -> Result<ParamId>> {
    slot: F,
}

impl<F: FnMut(&str, &[usize]) -> Result<ParamId>> Layout<F> {
    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<GruIds> {
        let mut s = |n: &str, shape: &[usize]| (self.slot)(&format!("{prefix}.{n}"), shape);
        Ok(GruIds {
            input_reset: s("input_reset", &[hidden, input])?,
            input_update: s("input_update", &[hidden, input])?,
            input_candidate: s("input_candidate", &[hidden, input])?,
            hidden_reset: s("hidden_reset", &[hidden, hidden])?,
            hidden_update: s("hidden_update", &[hidden, hidden])?,
            hidden_candidate: s("hidden_candidate", &[hidden, hidden])?,
        })
    }

    fn gate(&mut self, prefix: &str, input: usize, width: usize) -> Result<GateIds> {
        let mut s = |n: &str, shape: &[usize]| (self.slot)(&format!("{prefix}.{n}"), shape);
        Ok(GateIds {
            hidden_weight: s("hidden_weight", &[width, input])?,
            hidden_bias: s("hidden_bias", &[width])?,
            out_weight: s("out_weight", &[width, width])?,
            out_bias: s("out_bias", &[width])?,
        })
    }

    fn build(mut self, dims: Dims) -> Result<ModelParams> {
        let (d, h, s, e) = (dims.embed, dims.hidden, dims.state, dims.encoding());
        let embedding = (self.slot)("embedding", &[dims.vocab, d])?;
        let query_fwd = self.gru("encoder.query.forward", d, h)?;
        let query_bwd = self.gru("encoder.query.backward", d, h)?;
        let doc_fwd = self.gru("encoder.document.forward", d, h)?;
        let doc_bwd = self.gru("encoder.document.backward", d, h)?;
        let attention = AttentionIds {
            query_weight: (self.slot)("attention.query.weight", &[e, s])?,
            query_bias: (self.slot)("attention.query.bias", &[e])?,
            doc_weight: (self.slot)("attention.document.weight", &[e, s + e])?,
            doc_bias: (self.slot)("attention.document.bias", &[e])?,
        };
        let query_gate = self.gate("gate.query", dims.gate_input(), e)?;
        let doc_gate = self.gate("gate.document", dims.gate_input(), e)?;
        let inference = self.gru("inference", 2 * e, s)?;
        let initial_state = (self.slot)("inference.initial_state", &[s])?;
        Ok(ModelParams {
            dims,
            store: ParamStore::new(),
            embedding,
            query_fwd,
            query_bwd,
            doc_fwd,
            doc_bwd,
            attention,
            query_gate,
            doc_gate,
            inference,
            initial_state,
        })
    }
}

impl ModelParams {
    /// All arrays allocated and zero.
    pub fn zeros(dims: Dims) -> Self {
        let mut store = ParamStore::new();
        let mut params = Layout {
            slot: |name: &str, shape: &[usize]| Ok(store.add(name, Tensor::zeros(shape))),
        }
        .build(dims)
        .expect("zero layout cannot fail");
        params.store = store;
        params
    }

    /// Adopts a store (e.g. from a checkpoint), checking every name and shape.
    pub fn from_store(dims: Dims, store: ParamStore) -> Result<Self> {
        let mut count = 0;
        let mut params = Layout {
            slot: |name: &str, shape: &[usize]| {
                count += 1;
                let id = store
                    .find(name)
                    .ok_or_else(|| Error::Config(format!("parameter {name} missing")))?;
                if store.get(id).shape() != shape {
                    return Err(Error::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        store.get(id).shape()
                    )));
                }
                Ok(id)
            },
        }
        .build(dims)?;
        if count != store.len() {
            return Err(Error::Config(format!(
                "store holds {} arrays, model expects {count}",
                store.len()
            )));
        }
        params.store = store;
        Ok(params)
    }

    pub fn encoders(&self) -> [GruIds; 4] {
        [self.query_fwd, self.query_bwd, self.doc_fwd, self.doc_bwd]
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> Result<ModelVars> {
        Ok(ModelVars {
            embedding: g.param(self.embedding)?,
            query_fwd: self.query_fwd.bind(g)?,
            query_bwd: self.query_bwd.bind(g)?,
            doc_fwd: self.doc_fwd.bind(g)?,
            doc_bwd: self.doc_bwd.bind(g)?,
            attention: self.attention.bind(g)?,
            query_gate: self.query_gate.bind(g)?,
            doc_gate: self.doc_gate.bind(g)?,
            inference: self.inference.bind(g)?,
            initial_state: g.param(self.initial_state)?,
        })
    }
}
