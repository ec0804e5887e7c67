//! Sentence encoder: featurizer, inter-sentence attention stack, scoring
//! heads and checkpoints.

mod checkpoint;
mod features;
mod network;
mod params;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use features::{featurize, FeatureConfig, EXTRA_FEATURES};
pub use network::{
    backward, encode_backward, encode_forward, forward, heads_backward, heads_forward, sigmoid,
    sinusoidal_positions, EncodedDocument, ForwardPass, Gradients, HeadOutputs, Upstream,
};
pub use params::{ArchConfig, LayerParams, ModelConfig, ModelParams};
