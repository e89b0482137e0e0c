//! Mask-guided sample selection for semi-supervised instance segmentation.
//!
//! The crate scores pseudo-annotated images by their (oracle or predicted)
//! IoU, picks which images to annotate strongly under an annotation budget,
//! and evaluates the resulting two-stage pipeline on a seeded synthetic
//! benchmark.

pub mod budget;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod regressor;
pub mod seed;
pub mod selection;
pub mod simulator;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl std::fmt::Display for ImageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
