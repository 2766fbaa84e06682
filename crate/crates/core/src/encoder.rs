//! Word embeddings and the bidirectional GRU encoder.

use std::cell::Cell;

use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::params::GruVars;
use crate::tensor::{Graph, Tensor, Var};

thread_local! {
    static ENCODE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`encode_bidirectional`] calls made on this thread.
pub fn encode_invocations() -> usize {
    ENCODE_CALLS.with(Cell::get)
}

/// One GRU update, bias-free:
///
/// ```text
/// r  = σ(I_r x + H_r h)
/// u  = σ(I_u x + H_u h)
/// h̄  = tanh(I_h x + H_h (r · h))
/// h' = (1 - u) · h + u · h̄
/// ```
pub fn gru_step(g: &mut Graph<'_>, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let xr = g.matvec(p.input_reset, x)?;
    let xu = g.matvec(p.input_update, x)?;
    let xh = g.matvec(p.input_candidate, x)?;
    gru_cell(g, xr, xu, xh, h_prev, p)
}

/// GRU update given the three input projections.
fn gru_cell(g: &mut Graph<'_>, xr: Var, xu: Var, xh: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    g.gru_cell(
        [xr, xu, xh],
        h_prev,
        [p.hidden_reset, p.hidden_update, p.hidden_candidate],
    )
}

/// Contextual encodings of one (possibly padded) token sequence.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    /// `n × 2h`; row `i` is `[forward_i, backward_i]`, padded rows are zero.
    pub encodings: Var,
    pub mask: Vec<bool>,
    pub tokens: Vec<u32>,
    pub len: usize,
}

impl EncodedSequence {
    pub fn padded_len(&self) -> usize {
        self.mask.len()
    }
}

fn hidden_size(g: &Graph<'_>, p: &GruVars) -> Result<usize> {
    Ok(g.shape(p.hidden_reset)?[0])
}

/// Runs one GRU over `inputs` (an `n × d` matrix), left to right or right to
/// left, from a zero state. Returns the states in sequence order.
fn run_gru(g: &mut Graph<'_>, inputs: Var, n: usize, p: &GruVars, reverse: bool) -> Result<Vec<Var>> {
    let h = hidden_size(g, p)?;
    // n × h input projections, computed once for the whole sequence
    let project = |g: &mut Graph<'_>, w: Var| -> Result<Var> {
        let wt = g.transpose(w)?;
        g.matmul(inputs, wt)
    };
    let pr = project(g, p.input_reset)?;
    let pu = project(g, p.input_update)?;
    let ph = project(g, p.input_candidate)?;
    let mut state = g.constant(Tensor::zeros(&[h]))?;
    let mut states = vec![state; n];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let xr = g.row(pr, t)?;
        let xu = g.row(pu, t)?;
        let xh = g.row(ph, t)?;
        state = gru_cell(g, xr, xu, xh, state, p)?;
        states[t] = state;
    }
    Ok(states)
}

/// Embeds `tokens[..len]` and runs the forward and backward GRUs over the
/// true length. Positions `len..tokens.len()` are padding and encode to zero.
pub fn encode_bidirectional(
    g: &mut Graph<'_>,
    tokens: &[u32],
    len: usize,
    table: Var,
    fwd: &GruVars,
    bwd: &GruVars,
    dropout: &mut Dropout,
) -> Result<EncodedSequence> {
    ENCODE_CALLS.with(|c| c.set(c.get() + 1));
    if len == 0 {
        return Err(Error::contract("cannot encode an empty sequence"));
    }
    if len > tokens.len() {
        return Err(Error::Bounds {
            index: len,
            len: tokens.len(),
        });
    }
    let ids: Vec<usize> = tokens[..len].iter().map(|&t| t as usize).collect();
    let embedded = g.gather(table, &ids)?;
    let embedded = dropout.apply(g, embedded)?;

    let forward = run_gru(g, embedded, len, fwd, false)?;
    let backward = run_gru(g, embedded, len, bwd, true)?;
    let mut rows = Vec::with_capacity(tokens.len());
    for (f, b) in forward.into_iter().zip(backward) {
        rows.push(g.concat(&[f, b])?);
    }
    if len < tokens.len() {
        let width = g.value(rows[0])?.len();
        let zero = g.constant(Tensor::zeros(&[width]))?;
        rows.resize(tokens.len(), zero);
    }
    let encodings = g.stack_rows(&rows)?;
    Ok(EncodedSequence {
        encodings,
        mask: (0..tokens.len()).map(|i| i < len).collect(),
        tokens: tokens.to_vec(),
        len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GruIds;
    use crate::tensor::{ParamStore, Tensor};

    fn gru_store(store: &mut ParamStore, h: usize, d: usize, fill: impl Fn(usize) -> f64) -> GruIds {
        let mut k = 0;
        let mut mk = |store: &mut ParamStore, r: usize, c: usize| {
            let data = (0..r * c)
                .map(|_| {
                    k += 1;
                    fill(k)
                })
                .collect();
            store.add(format!("p{}", store.len()), Tensor::matrix(r, c, data).unwrap())
        };
        GruIds {
            input_reset: mk(store, h, d),
            input_update: mk(store, h, d),
            input_candidate: mk(store, h, d),
            hidden_reset: mk(store, h, h),
            hidden_update: mk(store, h, h),
            hidden_candidate: mk(store, h, h),
        }
    }

    #[test]
    fn zero_parameters_give_fixed_points() {
        let mut store = ParamStore::new();
        let ids = gru_store(&mut store, 3, 2, |_| 0.0);
        let mut g = Graph::with_params(&store);
        let p = ids.bind(&mut g).unwrap();
        let x = g.constant(Tensor::vector(vec![0.4, -2.0])).unwrap();
        let zero = g.constant(Tensor::zeros(&[3])).unwrap();
        let h = gru_step(&mut g, x, zero, &p).unwrap();
        assert_eq!(g.value(h).unwrap().data(), &[0.0; 3]);

        let v = g.constant(Tensor::vector(vec![1.0, -3.0, 0.25])).unwrap();
        let h = gru_step(&mut g, x, v, &p).unwrap();
        assert_eq!(g.value(h).unwrap().data(), &[0.5, -1.5, 0.125]);
    }

    #[test]
    fn scalar_gru_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let ids = gru_store(&mut store, 1, 1, |_| 1.0);
        let mut g = Graph::with_params(&store);
        let p = ids.bind(&mut g).unwrap();
        let x = g.constant(Tensor::vector(vec![1.0])).unwrap();
        let zero = g.constant(Tensor::zeros(&[1])).unwrap();
        let h = gru_step(&mut g, x, zero, &p).unwrap();
        // u = σ(1), h̄ = tanh(1), h = u·h̄ evaluated at 30 digits
        let expected = 0.556_769_941_145_939_7;
        assert!((g.value(h).unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let ids = gru_store(&mut store, 3, 2, |_| 0.1);
        let mut g = Graph::with_params(&store);
        let p = ids.bind(&mut g).unwrap();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let zero = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(gru_step(&mut g, x, zero, &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_token_and_error_paths() {
        let mut store = ParamStore::new();
        let f = gru_store(&mut store, 3, 2, |k| (k as f64 * 0.37).sin());
        let b = gru_store(&mut store, 3, 2, |k| (k as f64 * 0.11).cos());
        let emb = store.add("emb", Tensor::matrix(4, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap());
        let mut g = Graph::with_params(&store);
        let (fv, bv) = (f.bind(&mut g).unwrap(), b.bind(&mut g).unwrap());
        let table = g.param(emb).unwrap();
        let mut off = Dropout::disabled();

        let enc = encode_bidirectional(&mut g, &[3], 1, table, &fv, &bv, &mut off).unwrap();
        let x = g.constant(Tensor::vector(vec![0.7, 0.8])).unwrap();
        let zero = g.constant(Tensor::zeros(&[3])).unwrap();
        let hf = gru_step(&mut g, x, zero, &fv).unwrap();
        let hb = gru_step(&mut g, x, zero, &bv).unwrap();
        let mut expected = g.value(hf).unwrap().data().to_vec();
        expected.extend_from_slice(g.value(hb).unwrap().data());
        let got = g.value(enc.encodings).unwrap();
        assert_eq!(got.shape(), &[1, 6]);
        for (a, e) in got.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }

        assert!(matches!(
            encode_bidirectional(&mut g, &[], 0, table, &fv, &bv, &mut off),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            encode_bidirectional(&mut g, &[1, 9], 2, table, &fv, &bv, &mut off),
            Err(Error::Vocabulary { id: 9, size: 4 })
        ));
    }
}
