//! Hierarchical geometric reward terms and their composition.
//!
//! Five signals graded from point to scene level: a squared vanishing-point
//! penalty, lane-mask F1, masked depth RMSE, a diagonal-Gaussian KL feature
//! alignment, and voxel IoU. `compose_reward` assembles them into
//! R = R_geo + R_occ with R_geo the lambda-weighted point/line/plane sum.
//! The two perception-training losses (heatmap MSE, SiLog) live here as
//! standalone numerics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::VpHeatmap;
use crate::raster::{BinaryMask, DepthMap, OccupancyGrid};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("extent mismatch: {0}")]
    Dimension(String),
    #[error("no usable pixel under the {0} mask")]
    EmptyMask(&'static str),
    #[error("feature batch needs >= 2 vectors, got {0}")]
    Batch(usize),
    #[error("domain violation: {0}")]
    Domain(String),
}

/// Perception outputs for the generated side.
#[derive(Debug, Clone)]
pub struct GeoPerceptionOutput {
    pub p_vp: [f64; 2],
    pub p_lane: BinaryMask,
    pub p_depth: DepthMap,
}

/// Everything the reward compares against, derived once from the reference
/// side: perception outputs, raw region masks, occupancy, and the fitted
/// feature distribution.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub v_ref: [f64; 2],
    pub l_ref: BinaryMask,
    pub d_ref: DepthMap,
    pub m_road: BinaryMask,
    pub m_vehicle: BinaryMask,
    pub feat_real: FeatureDistribution,
    pub o_real: OccupancyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub lambda_vp: f64,
    pub lambda_lane: f64,
    pub lambda_depth: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_vp: 0.1,
            lambda_lane: 0.1,
            lambda_depth: 0.5,
        }
    }
}

/// Diagonal Gaussian over feature dimensions; variances floored at 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const VAR_FLOOR: f64 = 1e-6;

impl FeatureDistribution {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Which terms were replaced by their worst-case floor because perception
/// could not parse the input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardFlags {
    pub vp_floored: bool,
    pub lane_floored: bool,
    pub depth_floored: bool,
}

impl RewardFlags {
    pub fn any(&self) -> bool {
        self.vp_floored || self.lane_floored || self.depth_floored
    }
}

/// The five raw terms prior to composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub r_vp: f64,
    pub r_lane: f64,
    pub r_depth: f64,
    pub r_align: f64,
    pub r_iou: f64,
    pub flags: RewardFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_vp: f64,
    pub r_lane: f64,
    pub r_depth: f64,
    pub r_align: f64,
    pub r_iou: f64,
    pub r_geo: f64,
    pub r_occ: f64,
    pub total: f64,
    pub flags: RewardFlags,
}

// ---------------------------------------------------------------------------
// Terms
// ---------------------------------------------------------------------------

/// Negative squared Euclidean distance between normalized points.
pub fn reward_vp(p_vp: [f64; 2], v_ref: [f64; 2]) -> f64 {
    let dx = p_vp[0] - v_ref[0];
    let dy = p_vp[1] - v_ref[1];
    -(dx * dx + dy * dy)
}

/// Pixel-wise F1 = 2TP / (2TP + FP + FN). Both masks empty => 1.
pub fn reward_lane(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64, RewardError> {
    reward_lane_tolerant(pred, reference, 0)
}

fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::zeros(w, h);
    let r = radius as i64;
    for row in 0..h as i64 {
        for col in 0..w as i64 {
            if !mask.get(row as u32, col as u32) {
                continue;
            }
            for dr in -r..=r {
                for dc in -r..=r {
                    let (nr, nc) = (row + dr, col + dc);
                    if nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 {
                        out.set(nr as u32, nc as u32, true);
                    }
                }
            }
        }
    }
    out
}

/// Lane F1 with a dilation tolerance band: a predicted pixel within
/// `tolerance_px` (Chebyshev) of a reference pixel counts as a true
/// positive, and symmetrically for recall. Zero tolerance is exact
/// pixel-wise F1.
pub fn reward_lane_tolerant(
    pred: &BinaryMask,
    reference: &BinaryMask,
    tolerance_px: u32,
) -> Result<f64, RewardError> {
    if !pred.same_extents(reference) {
        return Err(RewardError::Dimension(format!(
            "{}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            reference.width(),
            reference.height()
        )));
    }
    let (pred_pos, ref_pos) = (pred.count_ones() as f64, reference.count_ones() as f64);
    if pred_pos == 0.0 && ref_pos == 0.0 {
        return Ok(1.0);
    }
    if pred_pos == 0.0 || ref_pos == 0.0 {
        return Ok(0.0);
    }
    if tolerance_px == 0 {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (&p, &r) in pred.bits().iter().zip(reference.bits()) {
            match (p, r) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fnn += 1,
                _ => {}
            }
        }
        return Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fnn as f64));
    }
    let ref_band = dilate(reference, tolerance_px);
    let pred_band = dilate(pred, tolerance_px);
    let hits_pred = pred
        .bits()
        .iter()
        .zip(ref_band.bits())
        .filter(|(&p, &b)| p == 1 && b == 1)
        .count() as f64;
    let hits_ref = reference
        .bits()
        .iter()
        .zip(pred_band.bits())
        .filter(|(&r, &b)| r == 1 && b == 1)
        .count() as f64;
    let precision = hits_pred / pred_pos;
    let recall = hits_ref / ref_pos;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn masked_rmse(
    pred: &DepthMap,
    reference: &DepthMap,
    mask: &BinaryMask,
    name: &'static str,
) -> Result<f64, RewardError> {
    let (mut acc, mut n) = (0.0f64, 0u64);
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if mask.get(row, col) && pred.defined(row, col) && reference.defined(row, col) {
                let d = f64::from(pred.get(row, col)) - f64::from(reference.get(row, col));
                acc += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(RewardError::EmptyMask(name));
    }
    Ok((acc / n as f64).sqrt())
}

/// -(RMSE over road pixels + RMSE over vehicle pixels), each averaged over
/// its own mask's pixels that carry depth on both maps.
pub fn reward_depth(
    pred: &DepthMap,
    reference: &DepthMap,
    m_road: &BinaryMask,
    m_vehicle: &BinaryMask,
) -> Result<f64, RewardError> {
    if !pred.same_extents(reference) {
        return Err(RewardError::Dimension("depth maps".into()));
    }
    let road = masked_rmse(pred, reference, m_road, "road")?;
    let vehicle = masked_rmse(pred, reference, m_vehicle, "vehicle")?;
    Ok(-(road + vehicle))
}

/// Per-dimension sample mean and unbiased variance over a batch of feature
/// vectors, variances floored at [`VAR_FLOOR`].
pub fn fit_feature_distribution(batch: &[Vec<f64>]) -> Result<FeatureDistribution, RewardError> {
    if batch.len() < 2 {
        return Err(RewardError::Batch(batch.len()));
    }
    let dims = batch[0].len();
    if batch.iter().any(|v| v.len() != dims) {
        return Err(RewardError::Dimension("ragged feature batch".into()));
    }
    let n = batch.len() as f64;
    let mut mean = vec![0.0; dims];
    for v in batch {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dims];
    for v in batch {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            let d = x - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s = (*s / (n - 1.0)).max(VAR_FLOOR);
    }
    Ok(FeatureDistribution { mean, var })
}

/// -KL(real || gen) for diagonal Gaussians; 0 iff the distributions match.
pub fn reward_align(
    real: &FeatureDistribution,
    generated: &FeatureDistribution,
) -> Result<f64, RewardError> {
    if real.dims() != generated.dims() {
        return Err(RewardError::Dimension(format!(
            "feature dims {} vs {}",
            real.dims(),
            generated.dims()
        )));
    }
    let mut kl = 0.0;
    for i in 0..real.dims() {
        let (vr, vg) = (real.var[i], generated.var[i]);
        let dm = real.mean[i] - generated.mean[i];
        kl += 0.5 * (vg / vr).ln() + (vr + dm * dm) / (2.0 * vg) - 0.5;
    }
    Ok(-kl)
}

/// Voxel-count intersection over union. Both grids empty => 1.
pub fn reward_iou(generated: &OccupancyGrid, real: &OccupancyGrid) -> Result<f64, RewardError> {
    if !generated.same_geometry(real) {
        return Err(RewardError::Dimension("occupancy grid geometry".into()));
    }
    let (mut intersection, mut union) = (0u64, 0u64);
    for (&g, &r) in generated.occ().iter().zip(real.occ()) {
        if g == 1 && r == 1 {
            intersection += 1;
        }
        if g == 1 || r == 1 {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// R_geo = lambda_vp r_vp + lambda_lane r_lane + lambda_depth r_depth,
/// R_occ = r_align + r_iou, R = R_geo + R_occ. The sums are formed exactly
/// in that order so the breakdown invariants hold bit-for-bit.
pub fn compose_reward(terms: RewardTerms, weights: &RewardWeights) -> RewardBreakdown {
    let r_geo = weights.lambda_vp * terms.r_vp
        + weights.lambda_lane * terms.r_lane
        + weights.lambda_depth * terms.r_depth;
    let r_occ = terms.r_align + terms.r_iou;
    RewardBreakdown {
        r_vp: terms.r_vp,
        r_lane: terms.r_lane,
        r_depth: terms.r_depth,
        r_align: terms.r_align,
        r_iou: terms.r_iou,
        r_geo,
        r_occ,
        total: r_geo + r_occ,
        flags: terms.flags,
    }
}

// ---------------------------------------------------------------------------
// Perception-training losses
// ---------------------------------------------------------------------------

/// Mean squared difference between two heatmaps.
pub fn loss_vp_heatmap(h: &VpHeatmap, h_gt: &VpHeatmap) -> Result<f64, RewardError> {
    if h.width != h_gt.width || h.height != h_gt.height {
        return Err(RewardError::Dimension("heatmap extents".into()));
    }
    let n = h.values.len() as f64;
    Ok(h.values
        .iter()
        .zip(&h_gt.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Scale-invariant logarithmic depth loss over the masked pixels:
/// (1/n) sum d_i^2 - (lambda/n^2) (sum d_i)^2 with d_i = ln y_i - ln y_i_gt.
pub fn loss_silog(
    pred: &DepthMap,
    gt: &DepthMap,
    lambda: f64,
    mask: &BinaryMask,
) -> Result<f64, RewardError> {
    if !pred.same_extents(gt) {
        return Err(RewardError::Dimension("depth maps".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RewardError::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0u64);
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if !mask.get(row, col) {
                continue;
            }
            let (p, g) = (pred.get(row, col), gt.get(row, col));
            if p <= 0.0 || g <= 0.0 {
                return Err(RewardError::Domain(format!(
                    "non-positive depth under mask at ({row}, {col})"
                )));
            }
            let d = f64::from(p).ln() - f64::from(g).ln();
            sum += d;
            sum_sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RewardError::EmptyMask("silog"));
    }
    let n = n as f64;
    Ok(sum_sq / n - lambda * (sum * sum) / (n * n))
}
