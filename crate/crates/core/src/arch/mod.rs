//! Network definition, static analysis, channel-width derivation and checkpoints.

mod analysis;
mod checkpoint;
mod config;
mod derive;
mod layers;
mod model;

pub use analysis::{analyze, count_flops, count_params, Analysis, LayerInfo, LayerKind};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    ArchConfig, BiasRole, BiasSet, DownsamplerSpec, GrnShape, PoolKind, ARCH_KEYS, DEFAULT_STAGE_CHANNELS, IN_CHANNELS,
};
pub use derive::{derive_channel_config, Candidate, DeriveConstraints, DeriveReport};
pub use layers::{Mode, TensorRole};
pub use model::{Gradients, Model};
