//! Street-to-aerial cross-view matching at desk scale.
//!
//! Two-stream embedding models trained with triplet and binomial-deviance
//! losses and global FIFO hard-negative mining, exhaustive recall
//! evaluation, Grad-CAM activation maps for pair scores, and unsupervised
//! relative-orientation estimation by circular correlation of activation
//! angle histograms.

pub mod data;
pub mod error;
pub mod explain;
pub mod losses;
pub mod mining;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod orientation;
pub mod plot;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
