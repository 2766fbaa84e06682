//! Parameter initialization, the ADAM optimizer with clipping and plateau
//! decay, checkpoints, and the epoch loop.

pub mod checkpoint;
pub mod hyper;
pub mod init;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use hyper::{HyperParams, Overrides, Profile};
pub use init::{init_params, orthogonal, INIT_STD};
pub use optim::{adam_step, clip_gradients, global_norm, lr_plateau_decay, OptimizerState};
pub use trainer::{
    batch_gradients, evaluate, example_gradients, forward_config, score_examples, train, Accuracy, Dataset,
    NoObserver, Observer, TrainOutcome, WindowMetrics,
};
