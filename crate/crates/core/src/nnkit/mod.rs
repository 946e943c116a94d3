//! Small dense numeric kit: tensors, layers with hand-written backward
//! passes, Adam, finite-difference checking and a JSON parameter container.
//!
//! Everything is `f64`. There is no autodiff graph: each layer exposes a
//! `forward` returning whatever it needs cached and a `backward` that consumes
//! the cache.

mod adam;
mod attention;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod rng;
mod tensor;

pub use adam::AdamState;
pub use attention::{AttentionCache, AttentionMask, SelfAttention};
pub use checkpoint::{archive_params, restore_params, NamedTensor, TensorArchive, FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use layers::{
    gelu_backward, gelu_forward, mean_pool_backward, mean_pool_forward, sigmoid, sigmoid_backward,
    sigmoid_forward, sinusoidal_positions, softplus, tanh_backward, tanh_forward, Embedding,
    LayerNorm, LayerNormCache, Linear,
};
pub use params::{GradStore, ParamId, ParamSet, ParamView};
pub use rng::SeededRng;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for table of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` missing from checkpoint")]
    MissingParam(String),
    #[error("loss is not finite ({context})")]
    NonFiniteLoss { context: String },
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("objective failed: {0}")]
    Objective(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}
