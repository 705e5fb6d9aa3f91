//! Small differentiable-computation toolkit: dense and LSTM layers with
//! hand-written backward passes, policy heads, Adam, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod heads;
pub mod lstm;
pub mod mlp;
pub mod normalizer;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{LayerSpec, PolicyCheckpoint, TensorRecord};
pub use dense::{Activation, DenseCache, DenseLayer};
pub use heads::{categorical_head, gaussian_head, squash, Categorical, DiagGaussian};
pub use lstm::{LstmCell, LstmStepCache};
pub use mlp::{Mlp, MlpCache};
pub use normalizer::RunningNorm;
pub use tensor::{clip_grad_norm, Parameters, Tensor};
