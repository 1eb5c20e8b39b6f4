//! The embedding network: per-type feature encoders with interaction
//! mixers, relational message-passing layers, and multi-head outputs.

mod checkpoint;
mod config;
mod features;
mod network;
mod params;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use features::FeatureStore;
pub(crate) use features::write_feature_rows;
pub use network::{
    embed_all, encode_type, forward, forward_tape, mix_features, mix_input, rgcn_layer, ForwardOutput, GraphPlan,
};
pub use params::{init_params, mix_width, Bound, Channel, Linear, ModelLayout, ModelParams, ParamStore};
