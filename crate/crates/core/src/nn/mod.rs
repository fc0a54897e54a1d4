//! Minimal neural-network engine: dense and LSTM layers, a squashed
//! Gaussian head, a recorded graph with reverse-mode gradients, parameter
//! freezing and Adam.

mod graph;
mod layers;
mod matrix;
mod params;

pub use graph::{sigmoid, Graph, Var};
pub use layers::{
    forward_dense, forward_lstm, sample_squashed_gaussian, squashed_gaussian, Activation, Dense,
    DenseSpec, GaussianHeadOutput, Lstm, LstmSpec, LstmState, SquashedSample, ACTION_BOUND,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use matrix::Matrix;
pub use params::{
    AdamConfig, Gradients, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
