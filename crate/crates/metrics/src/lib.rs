//! Evaluation metrics for generated LiDAR scans.
//!
//! Point-set metrics (COV, MMD, 1-NNA) are built on the Chamfer distance:
//! the mean squared nearest-neighbor distance from each set to the other,
//! summed over both directions.

mod chamfer;
mod coverage;
mod depth;
mod error;
mod evaluate;
mod fps;
mod jsd;
mod report;
mod swd;
pub mod tolerance;

pub use chamfer::{chamfer, chamfer_packed, cross_distances, sq_dist, union_distances, DistanceMatrix, PackedCloud};
pub use coverage::{cov_mmd, one_nna};
pub use depth::{depth_errors, depth_errors_m, DepthErrorReport};
pub use error::{MetricError, Result};
pub use evaluate::{evaluate, evaluate_once, prepare_clouds, EvalConfig};
pub use fps::{fps, fps_indices};
pub use jsd::{jsd, jsd_histograms, BevGrid};
pub use report::{MetricReport, Stat};
pub use swd::{swd, SwdConfig};
pub use tolerance::{drop_threshold, tune_tolerance, weighted_score, ToleranceConfig, ToleranceResult};
