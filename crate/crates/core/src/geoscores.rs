//! The GeoScores metric triple: VP error (NormDist, lower is better),
//! lane F1 (higher), and road-surface depth RMSE in meters (lower).
//!
//! `score_lane` is the same kernel as the lane reward term; the depth score
//! deliberately differs from the depth reward by using the road mask only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BinaryMask, DepthMap};
use crate::rewards::{self, RewardError};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("cannot aggregate an empty frame list")]
    EmptyInput,
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// One frame's metric triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    pub vp_error: f64,
    pub lane_f1: f64,
    pub depth_rmse: f64,
}

/// Per-frame rows plus their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoScoreReport {
    pub frames: Vec<FrameScores>,
    pub mean_vp_error: f64,
    pub mean_lane_f1: f64,
    pub mean_depth_rmse: f64,
    pub frame_count: usize,
}

/// Euclidean distance between normalized image points (NormDist).
pub fn score_vp(vp_synth: [f64; 2], vp_real: [f64; 2]) -> f64 {
    let dx = vp_synth[0] - vp_real[0];
    let dy = vp_synth[1] - vp_real[1];
    (dx * dx + dy * dy).sqrt()
}

/// Lane-mask F1; identical kernel to the lane reward term.
pub fn score_lane(mask_synth: &BinaryMask, mask_real: &BinaryMask) -> Result<f64, ScoreError> {
    Ok(rewards::reward_lane(mask_synth, mask_real)?)
}

/// RMSE between depth maps over road pixels with depth defined on both sides.
pub fn score_depth(
    d_synth: &DepthMap,
    d_real: &DepthMap,
    m_road: &BinaryMask,
) -> Result<f64, ScoreError> {
    if !d_synth.same_extents(d_real) {
        return Err(ScoreError::Reward(RewardError::Dimension(
            "depth maps".into(),
        )));
    }
    let (mut acc, mut n) = (0.0f64, 0u64);
    for row in 0..m_road.height() {
        for col in 0..m_road.width() {
            if m_road.get(row, col) && d_synth.defined(row, col) && d_real.defined(row, col) {
                let d = f64::from(d_synth.get(row, col)) - f64::from(d_real.get(row, col));
                acc += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(ScoreError::Reward(RewardError::EmptyMask("road")));
    }
    Ok((acc / n as f64).sqrt())
}

/// Arithmetic means over frames, rows reordered by frame index.
pub fn aggregate_report(frames: &[FrameScores]) -> Result<GeoScoreReport, ScoreError> {
    if frames.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    let mut rows = frames.to_vec();
    rows.sort_by_key(|f| f.frame);
    let n = rows.len() as f64;
    let report = GeoScoreReport {
        mean_vp_error: rows.iter().map(|f| f.vp_error).sum::<f64>() / n,
        mean_lane_f1: rows.iter().map(|f| f.lane_f1).sum::<f64>() / n,
        mean_depth_rmse: rows.iter().map(|f| f.depth_rmse).sum::<f64>() / n,
        frame_count: rows.len(),
        frames: rows,
    };
    Ok(report)
}
