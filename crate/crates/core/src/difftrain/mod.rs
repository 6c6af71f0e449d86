//! Reverse-mode differentiation, optimizers, training loop and checkpoints.

pub mod checkpoint;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
pub use train::{
    featurize, loss_and_grad, mse_batch, mse_loss, prepare_examples, train, train_examples, train_from, train_with,
    Example, LossGrad, TrainConfig, TrainOutput,
};
