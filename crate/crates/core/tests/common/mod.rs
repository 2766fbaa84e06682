//! Helpers shared by the integration tests.
#![allow(dead_code)]

use iaa::data::{Example, Vocabulary, PLACEHOLDER_ID};
use iaa::params::{ModelParams, ModelVars};
use iaa::tensor::{Graph, Tensor, Var};
use iaa::training::{init_params, HyperParams};
use iaa::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the plain difference norm when both are
/// below `1e-8` (a relative error of two near-zero vectors means nothing).
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = norm(analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between backprop and central differences over the
/// leaf inputs of a scalar function.
pub fn leaf_grad_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).unwrap().item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone()).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for k in 0..inputs[i].len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[k] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Relative error per parameter tensor of a scalar function of the model.
pub fn param_grad_errors<F>(params: &ModelParams, f: F) -> Vec<(String, f64)>
where
    F: Fn(&mut Graph<'_>, &ModelVars) -> Result<Var>,
{
    let eval = |p: &ModelParams| -> f64 {
        let mut g = Graph::with_params(&p.store);
        let vars = p.bind(&mut g).unwrap();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).unwrap().item()
    };
    let mut g = Graph::with_params(&params.store);
    let vars = params.bind(&mut g).unwrap();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();

    let mut work = params.clone();
    let mut report = Vec::new();
    for (id, name, t) in params.store.iter() {
        let analytic = grads
            .param(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = Vec::with_capacity(t.len());
        for k in 0..t.len() {
            let x = t.data()[k];
            work.store.get_mut(id).data_mut()[k] = x + FD_STEP;
            let up = eval(&work);
            work.store.get_mut(id).data_mut()[k] = x - FD_STEP;
            let down = eval(&work);
            work.store.get_mut(id).data_mut()[k] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        report.push((name.to_string(), rel_error(&analytic, &numeric)));
    }
    report
}

pub fn tiny_hyper() -> HyperParams {
    HyperParams {
        embed: 8,
        hidden: 4,
        state: 6,
        steps: 2,
        ..HyperParams::desk()
    }
}

/// Parameters with every array, biases included, drawn at a scale that
/// keeps activations away from saturation but gradients non-trivial.
pub fn random_params(hyper: &HyperParams, vocab: usize, seed: u64) -> ModelParams {
    let mut p = init_params(hyper, vocab, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.store.values_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    p
}

/// A random example over ids `3..vocab`: a query with one placeholder, a
/// document in which every candidate occurs at least once.
pub fn random_example(r: &mut ChaCha8Rng, vocab: u32, q_len: usize, d_len: usize, n_cands: usize) -> Example {
    assert!(n_cands <= d_len && (n_cands as u32) < vocab - 3);
    let mut cands: Vec<u32> = Vec::new();
    while cands.len() < n_cands {
        let c = r.random_range(3..vocab);
        if !cands.contains(&c) {
            cands.push(c);
        }
    }
    let mut doc: Vec<u32> = (0..d_len).map(|_| r.random_range(3..vocab)).collect();
    let mut slots: Vec<usize> = (0..d_len).collect();
    for &c in &cands {
        let i = r.random_range(0..slots.len());
        doc[slots.swap_remove(i)] = c;
    }
    let mut query: Vec<u32> = (0..q_len).map(|_| r.random_range(3..vocab)).collect();
    query[r.random_range(0..q_len)] = PLACEHOLDER_ID;
    let answer = cands[r.random_range(0..n_cands)];
    Example::new(format!("rand-{d_len}-{answer}"), query, doc, cands, answer).unwrap()
}

pub fn toy_vocab(n: usize) -> Vocabulary {
    let mut tokens: Vec<String> = ["<pad>", "<unk>", "@placeholder"].map(String::from).to_vec();
    tokens.extend((3..n).map(|i| format!("t{i}")));
    Vocabulary::from_tokens(tokens).unwrap()
}

/// Every differentiable graph operation, by name.
pub const OPS: &[&str] = &[
    "matmul", "matvec", "vecmat", "transpose", "add", "sub", "mul", "scalar_broadcast", "scale", "one_minus",
    "sigmoid", "tanh", "sum", "concat", "slice", "row", "stack_rows", "gather", "masked_softmax", "index_sum",
    "neg_log", "mask_mul", "gru_step",
];

/// `Σ w ⊙ out` with fixed random `w`, turning any output into a scalar.
fn project(g: &mut Graph<'_>, out: Var, w: &Tensor) -> Result<Var> {
    let c = g.constant(w.clone())?;
    let m = g.mul(out, c)?;
    g.sum(m)
}

/// Gradient-check error of one op on random inputs with shapes up to 8.
pub fn op_grad_error(op: &str, seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_mul(7919).wrapping_add(op.len() as u64));
    let dim = |r: &mut ChaCha8Rng| r.random_range(1..=8usize);
    let (m, k, n) = (dim(&mut r), dim(&mut r), dim(&mut r));
    let u = |r: &mut ChaCha8Rng, s: &[usize]| random_tensor(r, s, -1.0, 1.0);
    match op {
        "matmul" => {
            let w = u(&mut r, &[m, n]);
            leaf_grad_error(&[u(&mut r, &[m, k]), u(&mut r, &[k, n])], |g, v| {
                let o = g.matmul(v[0], v[1])?;
                project(g, o, &w)
            })
        }
        "matvec" => {
            let w = u(&mut r, &[m]);
            leaf_grad_error(&[u(&mut r, &[m, k]), u(&mut r, &[k])], |g, v| {
                let o = g.matvec(v[0], v[1])?;
                project(g, o, &w)
            })
        }
        "vecmat" => {
            let w = u(&mut r, &[n]);
            leaf_grad_error(&[u(&mut r, &[k]), u(&mut r, &[k, n])], |g, v| {
                let o = g.vecmat(v[0], v[1])?;
                project(g, o, &w)
            })
        }
        "transpose" => {
            let w = u(&mut r, &[k, m]);
            leaf_grad_error(&[u(&mut r, &[m, k])], |g, v| {
                let o = g.transpose(v[0])?;
                project(g, o, &w)
            })
        }
        "add" | "sub" | "mul" => {
            let w = u(&mut r, &[m, k]);
            let op = op.to_string();
            leaf_grad_error(&[u(&mut r, &[m, k]), u(&mut r, &[m, k])], move |g, v| {
                let o = match op.as_str() {
                    "add" => g.add(v[0], v[1])?,
                    "sub" => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                project(g, o, &w)
            })
        }
        "scalar_broadcast" => {
            let w = u(&mut r, &[k]);
            leaf_grad_error(&[u(&mut r, &[]), u(&mut r, &[k])], |g, v| {
                let a = g.mul(v[0], v[1])?;
                let o = g.add(a, v[0])?;
                project(g, o, &w)
            })
        }
        "scale" | "one_minus" | "sigmoid" | "tanh" | "sum" => {
            let shape = [m, k];
            let w = u(&mut r, &shape);
            let op = op.to_string();
            let x = random_tensor(&mut r, &shape, -3.0, 3.0);
            leaf_grad_error(&[x], move |g, v| match op.as_str() {
                "scale" => {
                    let o = g.scale(v[0], -1.7)?;
                    project(g, o, &w)
                }
                "one_minus" => {
                    let o = g.one_minus(v[0])?;
                    project(g, o, &w)
                }
                "sigmoid" => {
                    let o = g.sigmoid(v[0])?;
                    project(g, o, &w)
                }
                "tanh" => {
                    let o = g.tanh(v[0])?;
                    project(g, o, &w)
                }
                _ => {
                    let o = g.mul(v[0], v[0])?;
                    g.sum(o)
                }
            })
        }
        "concat" => {
            let w = u(&mut r, &[m + k + n]);
            leaf_grad_error(&[u(&mut r, &[m]), u(&mut r, &[k]), u(&mut r, &[n])], |g, v| {
                let o = g.concat(v)?;
                project(g, o, &w)
            })
        }
        "slice" => {
            let len = m + k;
            let start = r.random_range(0..len);
            let take = r.random_range(1..=len - start);
            let w = u(&mut r, &[take]);
            leaf_grad_error(&[u(&mut r, &[len])], |g, v| {
                let o = g.slice(v[0], start, take)?;
                project(g, o, &w)
            })
        }
        "row" => {
            let i = r.random_range(0..m);
            let w = u(&mut r, &[k]);
            leaf_grad_error(&[u(&mut r, &[m, k])], |g, v| {
                let o = g.row(v[0], i)?;
                project(g, o, &w)
            })
        }
        "stack_rows" => {
            let w = u(&mut r, &[3, k]);
            leaf_grad_error(&[u(&mut r, &[k]), u(&mut r, &[k]), u(&mut r, &[k])], |g, v| {
                // repeat a row to exercise accumulation
                let o = g.stack_rows(&[v[0], v[1], v[0]])?;
                let _ = v[2];
                project(g, o, &w)
            })
        }
        "gather" => {
            let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
            let w = u(&mut r, &[n, k]);
            leaf_grad_error(&[u(&mut r, &[m, k])], |g, v| {
                let o = g.gather(v[0], &ids)?;
                project(g, o, &w)
            })
        }
        "masked_softmax" => {
            let len = m + 1;
            let mut mask: Vec<bool> = (0..len).map(|_| r.random_bool(0.7)).collect();
            mask[r.random_range(0..len)] = true;
            let w = u(&mut r, &[len]);
            let x = random_tensor(&mut r, &[len], -3.0, 3.0);
            leaf_grad_error(&[x], |g, v| {
                let o = g.masked_softmax(v[0], &mask)?;
                project(g, o, &w)
            })
        }
        "index_sum" => {
            let len = m + 1;
            let pos: Vec<usize> = (0..k).map(|_| r.random_range(0..len)).collect();
            leaf_grad_error(&[u(&mut r, &[len])], |g, v| {
                let o = g.index_sum(v[0], &pos)?;
                g.scale(o, 1.3)
            })
        }
        "neg_log" => {
            let x = random_tensor(&mut r, &[], 0.05, 2.0);
            leaf_grad_error(&[x], |g, v| g.neg_log(v[0], 1e-12))
        }
        "mask_mul" => {
            let mask: Vec<f64> = (0..m * k).map(|_| if r.random_bool(0.6) { 1.25 } else { 0.0 }).collect();
            let w = u(&mut r, &[m, k]);
            leaf_grad_error(&[u(&mut r, &[m, k])], |g, v| {
                let o = g.mask_mul(v[0], mask.clone())?;
                project(g, o, &w)
            })
        }
        "gru_step" => {
            let (d, h) = (k, m);
            let w = u(&mut r, &[h]);
            let mut inputs = vec![u(&mut r, &[d]), u(&mut r, &[h])];
            for _ in 0..3 {
                inputs.push(u(&mut r, &[h, d]));
            }
            for _ in 0..3 {
                inputs.push(u(&mut r, &[h, h]));
            }
            leaf_grad_error(&inputs, |g, v| {
                let p = iaa::params::GruVars {
                    input_reset: v[2],
                    input_update: v[3],
                    input_candidate: v[4],
                    hidden_reset: v[5],
                    hidden_update: v[6],
                    hidden_candidate: v[7],
                };
                let o = iaa::encoder::gru_step(g, v[0], v[1], &p)?;
                project(g, o, &w)
            })
        }
        other => panic!("unknown op {other}"),
    }
}

/// Random item for the whole-model check: `|Q| = 5`, `|D| = 12`.
pub fn full_model_case(seed: u64) -> (ModelParams, Example) {
    let hyper = tiny_hyper();
    let vocab = 20;
    let params = random_params(&hyper, vocab, seed);
    let mut r = rng(seed);
    let ex = random_example(&mut r, vocab as u32, 5, 12, 4);
    (params, ex)
}

/// Worst per-tensor relative error of the full loss.
pub fn full_model_grad_error(seed: u64) -> (String, f64) {
    use iaa::dropout::Dropout;
    use iaa::model::{forward, ForwardConfig};
    let (params, ex) = full_model_case(seed);
    let cfg = ForwardConfig {
        steps: 2,
        fixed_query_attention: false,
    };
    let errs = param_grad_errors(&params, |g, vars| {
        let pass = forward(g, vars, &ex.as_item(), &cfg, &mut Dropout::disabled())?;
        Ok(pass.loss)
    });
    errs.into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("parameters exist")
}
