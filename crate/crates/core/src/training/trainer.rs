use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::hyper::HyperParams;
use super::init::init_params;
use super::optim::{adam_step, clip_gradients, lr_plateau_decay, OptimizerState};
use crate::data::{make_batches, Batch, Example, Item, Vocabulary};
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::model::{forward, predict, ForwardConfig};
use crate::params::ModelParams;
use crate::prediction::CandidateScores;
use crate::tensor::{Graph, Tensor};

/// Training and validation examples. Validation examples whose answer was
/// dropped during encoding still count in the denominator.
#[derive(Clone, Copy, Debug)]
pub struct Dataset<'a> {
    pub train: &'a [Example],
    pub valid: &'a [Example],
    pub valid_unanswerable: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowMetrics {
    pub window: usize,
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub batches: u64,
    /// Mean batch loss over the window.
    pub train_loss: f64,
    pub valid_accuracy: f64,
    /// Learning rate after the plateau check.
    pub lr: f64,
}

/// Hooks called by [`train`].
pub trait Observer {
    /// After each validation window. Return `false` to stop training.
    fn window(&mut self, _metrics: &WindowMetrics) -> Result<bool> {
        Ok(true)
    }

    /// Whenever validation accuracy reaches a new best.
    fn improved(&mut self, _best: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl Observer for NoObserver {}

pub struct TrainOutcome {
    /// Snapshot at the best validation accuracy.
    pub best: Checkpoint,
    /// State after the last optimizer step.
    pub last: Checkpoint,
    pub log: Vec<WindowMetrics>,
}

pub fn forward_config(hyper: &HyperParams) -> ForwardConfig {
    ForwardConfig {
        steps: hyper.steps,
        fixed_query_attention: hyper.fixed_query_attention,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// splitmix64 finalizer, used to derive independent per-example seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn dropout_seed(seed: u64, step: u64, slot: usize) -> u64 {
    mix(mix(mix(seed) ^ step) ^ slot as u64)
}

fn tag(source_id: &str, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{source_id}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{source_id}: {m}")),
        other => other,
    }
}

/// Loss and parameter gradients of one example.
pub fn example_gradients(
    params: &ModelParams,
    item: &Item<'_>,
    cfg: &ForwardConfig,
    dropout: &mut Dropout,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut run = || {
        let mut g = Graph::with_params(&params.store);
        let vars = params.bind(&mut g)?;
        let pass = forward(&mut g, &vars, item, cfg, dropout)?;
        let loss = g.value(pass.loss)?.item();
        let grads = g.backward(pass.loss)?;
        Ok((loss, grads.into_params()))
    };
    run().map_err(|e| tag(item.source_id, e))
}

/// Mean loss and mean gradients over a batch. Examples are processed in
/// waves of `workers`; the sum always runs in batch order, so the result does
/// not depend on the worker count.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &Batch,
    hyper: &HyperParams,
    step: u64,
    pool: &rayon::ThreadPool,
) -> Result<(f64, Vec<Tensor>)> {
    let cfg = forward_config(hyper);
    let mut acc: Vec<Tensor> = params.store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
    let mut loss_sum = 0.0;
    let wave = pool.current_num_threads().max(1);
    let slots: Vec<usize> = (0..batch.len()).collect();
    for chunk in slots.chunks(wave) {
        let results: Vec<Result<(f64, Vec<Option<Tensor>>)>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&slot| {
                    let mut dropout = if hyper.dropout > 0.0 {
                        Dropout::training(hyper.dropout, dropout_seed(hyper.seed, step, slot))?
                    } else {
                        Dropout::disabled()
                    };
                    example_gradients(params, &batch.item(slot), &cfg, &mut dropout)
                })
                .collect()
        });
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            for (a, g) in acc.iter_mut().zip(grads) {
                if let Some(g) = g {
                    a.add_assign(&g);
                }
            }
        }
    }
    let k = 1.0 / batch.len() as f64;
    for a in &mut acc {
        a.scale_in_place(k);
    }
    Ok((loss_sum * k, acc))
}

/// Candidate scores of every example, in order.
pub fn score_examples(
    params: &ModelParams,
    examples: &[Example],
    cfg: &ForwardConfig,
    workers: usize,
) -> Result<Vec<CandidateScores>> {
    let score = |ex: &Example| {
        let item = ex.as_item();
        predict(params, &item, cfg)
            .map(|p| p.scores)
            .map_err(|e| tag(item.source_id, e))
    };
    if workers <= 1 {
        return examples.iter().map(score).collect();
    }
    pool(workers)?.install(|| examples.par_iter().map(score).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub total: usize,
    pub correct: usize,
}

impl Accuracy {
    /// `extra_misses` counts examples that could not be scored at all.
    pub fn of(scores: &[CandidateScores], examples: &[Example], extra_misses: usize) -> Self {
        let correct = scores
            .iter()
            .zip(examples)
            .filter(|(s, ex)| s.predicted_token() == ex.answer)
            .count();
        Accuracy {
            total: examples.len() + extra_misses,
            correct,
        }
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

pub fn evaluate(
    params: &ModelParams,
    examples: &[Example],
    extra_misses: usize,
    cfg: &ForwardConfig,
    workers: usize,
) -> Result<Accuracy> {
    let scores = score_examples(params, examples, cfg, workers)?;
    Ok(Accuracy::of(&scores, examples, extra_misses))
}

/// Mini-batch training with ADAM, gradient clipping, embedding
/// regularization and plateau learning-rate decay. Validation runs every
/// `plateau_window` batches and once more after the last batch.
pub fn train(
    data: &Dataset<'_>,
    vocab: &Vocabulary,
    hyper: &HyperParams,
    workers: usize,
    meta: &[(String, String)],
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.valid.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut params = init_params(hyper, vocab.len(), hyper.seed)?;
    let mut opt = OptimizerState::new(&params.store, hyper.learning_rate);
    let snapshot = |params: &ModelParams, opt: &OptimizerState| Checkpoint {
        hyper: hyper.clone(),
        vocab: vocab.clone(),
        params: params.clone(),
        optimizer: opt.clone(),
        meta: meta.to_vec(),
    };
    let mut best = snapshot(&params, &opt);
    let cfg = forward_config(hyper);
    let pool = pool(workers)?;
    let embedding = (params.embedding, hyper.embedding_reg);

    let mut log = Vec::new();
    let mut window_losses: Vec<f64> = Vec::new();
    let mut validate = |params: &ModelParams,
                        opt: &mut OptimizerState,
                        losses: &mut Vec<f64>,
                        epoch: usize,
                        log: &mut Vec<WindowMetrics>,
                        best: &mut Checkpoint|
     -> Result<bool> {
        let acc = evaluate(params, data.valid, data.valid_unanswerable, &cfg, workers)?.value();
        let decayed = lr_plateau_decay(opt, acc, hyper.decay_factor);
        let m = WindowMetrics {
            window: log.len() + 1,
            epoch,
            batches: opt.step,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            valid_accuracy: acc,
            lr: opt.lr,
        };
        losses.clear();
        if !decayed {
            *best = snapshot(params, opt);
            observer.improved(best)?;
        }
        let go_on = observer.window(&m)?;
        log.push(m);
        Ok(go_on)
    };

    'epochs: for epoch in 1..=hyper.max_epochs {
        let epoch_seed = mix(hyper.seed ^ (epoch as u64).rotate_left(32));
        for batch in make_batches(data.train, hyper.batch_size, epoch_seed, true) {
            let (loss, mut grads) = batch_gradients(&params, &batch, hyper, opt.step, &pool)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("batch loss is {loss} at step {}", opt.step + 1)));
            }
            clip_gradients(&mut grads, hyper.grad_clip)?;
            adam_step(&mut params.store, &grads, &mut opt, Some(embedding))?;
            window_losses.push(loss);
            if window_losses.len() == hyper.plateau_window
                && !validate(&params, &mut opt, &mut window_losses, epoch, &mut log, &mut best)?
            {
                break 'epochs;
            }
        }
        if epoch == hyper.max_epochs && !window_losses.is_empty() {
            validate(&params, &mut opt, &mut window_losses, epoch, &mut log, &mut best)?;
        }
    }
    Ok(TrainOutcome {
        last: snapshot(&params, &opt),
        best,
        log,
    })
}
