use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::hyper::HyperParams;
use crate::error::Result;
use crate::params::{Dims, ModelParams};
use crate::tensor::Tensor;

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.05;

/// Orthogonal `n × n` matrix: the Q factor of a Gaussian matrix, with column
/// signs fixed by the diagonal of R so the draw is uniform over rotations.
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    // nalgebra is column-major; emit row-major
    let data = (0..n * n).map(|k| q[(k / n, k % n)]).collect();
    Tensor::matrix(n, n, data).expect("square")
}

/// Every array drawn from `N(0, 0.05)`, recurrent GRU matrices replaced by
/// orthogonal ones, gate biases and the initial inference state zero.
pub fn init_params(hyper: &HyperParams, vocab_size: usize, seed: u64) -> Result<ModelParams> {
    hyper.validate()?;
    let dims = Dims {
        vocab: vocab_size,
        embed: hyper.embed,
        hidden: hyper.hidden,
        state: hyper.state,
    };
    let mut params = ModelParams::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for t in params.store.values_mut() {
        for v in t.data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    let grus = params
        .encoders()
        .into_iter()
        .chain(std::iter::once(params.inference));
    let recurrent: Vec<_> = grus.flat_map(|g| g.recurrent()).collect();
    for id in recurrent {
        let n = params.store.get(id).rows();
        *params.store.get_mut(id) = orthogonal(n, &mut rng);
    }
    let zeroed: Vec<_> = params
        .query_gate
        .biases()
        .into_iter()
        .chain(params.doc_gate.biases())
        .chain(std::iter::once(params.initial_state))
        .collect();
    for id in zeroed {
        let t = params.store.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    Ok(params)
}
