//! Minimal dense-network engine: an MLP with an embedding head and a logits
//! head, temperature softmax, SGD with momentum and a finite-difference
//! gradient checker.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;
mod softmax;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{
    gradient_check, relative_error, GradCheckEntry, GradCheckReport, Parameterized,
};
pub use mlp::{
    Activation, Architecture, DenseLayer, ForwardRecord, Gradients, LayerGrad, MlpModel,
};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use softmax::{log_softmax_rows, softmax_rows, softmax_with_temperature};
