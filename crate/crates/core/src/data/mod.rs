//! Cross-view pairs: synthetic generation with planted orientation
//! structure, aerial rotation, and file ingestion (CVFM tensors and JSON
//! manifests).
//!
//! Angle conventions shared with the orientation estimator:
//! * street panorama column `c` of `W` columns sits at azimuth
//!   `360 * (c + 0.5) / W` degrees;
//! * aerial pixels are measured about the image center from the downward
//!   (south) axis, increasing clockwise on screen (south, west, north, east).

mod cvfm;
mod geometry;
mod manifest;
mod rotate;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use cvfm::{decode_feature_map, encode_feature_map, read_feature_map, write_feature_map};
pub use geometry::{
    aerial_direction, aerial_polar_angle, circular_diff_deg, disk_radius, in_disk, sin_cos_deg,
    street_column_azimuth, wrap_deg_360,
};
pub use manifest::{load_manifest, load_pairs, write_manifest, DatasetManifest, ManifestEntry, Split};
pub use rotate::{apply_disk_mask, rotate_aerial};
pub use synthetic::{generate_synthetic, rotated_pair, SyntheticConfig, ViewTransforms};

use crate::numerics::Tensor3;

/// One street panorama and its aerial counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossViewPair {
    pub id: String,
    pub street: Tensor3,
    pub aerial: Tensor3,
    /// Known rotation applied to the aerial map, degrees in `[0, 360)`.
    pub rotation_deg: Option<f64>,
    /// Azimuth of the planted object in the street view (synthetic data only).
    #[serde(default)]
    pub planted_azimuth_deg: Option<f64>,
}
