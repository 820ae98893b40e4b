//! Two-stream embedding network.
//!
//! Each view has its own per-location affine stem (a 1×1 convolution)
//! followed by ReLU and spatial average pooling; a shared affine head maps
//! the pooled vector to `K` dimensions, which is then L2-normalized.
//!
//! Optionally the stem also sees two coordinate channels per location,
//! `(cos θ, sin θ)` of the location's azimuth under the shared angle
//! convention (street: column azimuth; aerial: polar angle about the
//! center, zero at the center pixel). Without them the network is blind to
//! spatial layout and cannot exploit cross-view alignment.

mod checkpoint;
mod network;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use network::{
    backward, backward_features, backward_features_into, backward_into, forward, forward_features,
    init_params, normalization_backward, FeatureTrace, ForwardTrace, ModelDims, ModelParams, ParamGrads,
};

/// Which stream a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Street,
    Aerial,
}

impl View {
    pub fn opposite(self) -> View {
        match self {
            View::Street => View::Aerial,
            View::Aerial => View::Street,
        }
    }
}
