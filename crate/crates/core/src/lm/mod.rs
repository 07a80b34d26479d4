//! Tiny causal language models: a decoder-only transformer with learned
//! absolute positions, and a diagonal linear state-space variant.

mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{Family, ModelConfig, MLP_EXPANSION};
pub use model::{ContextModel, Depth, ForwardNodes, LayerStates, TokenId, ToyLm};
pub use params::{BlockWeights, Mixer, ModelParams, Weights};
pub use train::{stream_cross_entropy, train_lm, TrainOptions, TrainReport};
