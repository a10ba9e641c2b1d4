//! Small f64 neural-network kernel.
//!
//! Parameters of a network live in one flat vector described by a
//! [`ParamLayout`]; layers hold offsets into it. This keeps Adam, checkpoints
//! and finite-difference checks trivial.

pub mod activation;
pub mod adam;
mod error;
mod gemm;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod network;
pub mod params;
pub mod tensor;

pub use adam::AdamState;
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheck};
pub use layers::{BayesMode, BayesianLinear, Conv1d, Dense, LstmCell, LstmState};
pub use loss::{cross_entropy, one_hot, softmax_cross_entropy_grad};
pub use network::{Architecture, ConvSpec, Network};
pub use params::{ParamBlock, ParamLayout};
pub use tensor::Tensor;
