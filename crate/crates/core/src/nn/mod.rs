//! Small neural-network stack with tape-based reverse-mode differentiation.

mod adam;
mod checkpoint;
mod layers;
mod qnet;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use layers::{
    AttentionBlock, AttentionKind, Bound, Dense, LayerNorm, Linear, Mlp, NoisyLinear, ParamId, ParamStore,
};
pub use qnet::{Forward, QNetConfig, QNetwork, GROUPS};
pub use tape::{Block, Gradients, Tape, Var};
pub use tensor::{Float, Tensor};

#[cfg(all(test, not(feature = "single-precision")))]
mod gradcheck;
