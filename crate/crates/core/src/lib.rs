//! Desk-scale geometric-fidelity laboratory for procedural driving scenes.
//!
//! The crate builds a closed world — flat road, straight lane markings,
//! vehicle boxes, a pinhole camera — and measures how a parametrically
//! distorted render of it deviates from ground truth: vanishing-point error,
//! lane-mask F1, and road-depth RMSE (the GeoScores triple), plus a
//! hierarchical reward that adds feature-distribution alignment and 3D
//! occupancy IoU. A windowed optimization loop then ascends that reward over
//! the distortion parameters through noisy latent interpolants, driving the
//! generator back toward geometric ground truth.
//!
//! Modules follow the pipeline order:
//!
//! - [`tensor`]: dense grids and the bit-exact RLGT file format
//! - [`raster`]: binary masks, depth maps, occupancy grids
//! - [`scene`]: procedural scenes, distortions, rendering
//! - [`perception`]: lane centerlines, RANSAC, vanishing points, heatmaps
//! - [`rewards`]: the five reward terms and two perception losses
//! - [`geoscores`]: the user-facing metric suite
//! - [`latent`]: latent projection/decoding and noise interpolation
//! - [`windowed`]: reward windows, finite-difference gradients, ascent

pub mod geoscores;
pub mod latent;
pub mod perception;
pub mod raster;
pub mod rewards;
pub mod scene;
pub mod tensor;
pub mod windowed;

pub use raster::{BinaryMask, DepthMap, OccupancyConfig, OccupancyGrid};
pub use scene::{CameraModel, DistortionParams, RenderedFrame, SceneConfig, SceneSpec};
pub use tensor::{read_tensor, write_tensor, Tensor};
