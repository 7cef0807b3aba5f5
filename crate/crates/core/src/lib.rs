//! Adaptive-structure deep belief networks for classification, Voronoi-region
//! object detection and discrete relevance heatmaps.

pub mod adaptive;
pub mod dataset;
pub mod dbn;
pub mod detection;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod numerics;
pub mod rbm;

pub use adaptive::{AdaptiveConfig, GrowthTrace, StructureMonitor};
pub use dbn::{AdaptiveDbn, TrainConfig};
pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
pub use rbm::{CdUpdate, RbmLayer};
