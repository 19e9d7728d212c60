//! LiDAR scans as cylindrical rasters of normalized inverse depth.
//!
//! A distance `d` in `[x_min, x_max]` maps to `v = 2(1/d − 1/x_max) /
//! (1/x_min − 1/x_max) − 1`, so near returns are +1 and the farthest are −1.
//! Unmeasured pixels hold the drop value −1.

mod angles;
mod error;
pub mod ingest;
pub mod io;
mod normalize;
mod points;
mod raster;
pub mod synth;

pub use angles::{compute_angle_table, nominal_azimuth, AngleTable, ObservedAngles};
pub use error::{LidarError, Result};
pub use ingest::{sequence_to_raster, IngestedScan, RowChunking, ScanPoint};
pub use normalize::{NormalizationSpec, DROP_VALUE};
pub use points::{
    cartesian_to_spherical, raster_to_points, read_ply, spherical_to_cartesian, write_ply, Point3, PointCloud,
};
pub use raster::{DropIndicator, RasterMap};
pub use synth::{synth_dataset, synth_scene, synth_scene_with, DropModel, SynthScene};
