//! Analytic lane-mask perception: vanishing-point recovery and VP heatmaps.
//!
//! The estimation pipeline is extract_centerlines -> per-lane RANSAC line fit
//! -> least-squares line intersection. Lane instances are 8-connected
//! components of the mask; a lane's centerline point in a sampled row is the
//! midpoint of the component's leftmost and rightmost pixels in that row.
//!
//! Coordinates follow the crate convention: pixel centers at integer (x, y),
//! normalized coordinates divide by (width, height).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::BinaryMask;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("no lane component survived extraction")]
    NoLanes,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("line fit failed: best inlier count {best} < min_inliers {min}")]
    Fit { best: usize, min: usize },
    #[error("degenerate line bundle: {0}")]
    Degenerate(String),
}

/// Per-lane centerline samples, ordered by strictly increasing image row.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineSet {
    pub lanes: Vec<Vec<[f64; 2]>>,
}

/// Normalized line ax + by + c = 0 with a^2 + b^2 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub inlier_count: usize,
}

impl FittedLine {
    #[inline]
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (self.a * p[0] + self.b * p[1] + self.c).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpEstimate {
    /// Normalized image coordinates.
    pub vp: [f64; 2],
    pub num_lines: usize,
    /// Mean perpendicular distance from the VP to the fitted lines, pixels.
    pub residual_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iters: u32,
    pub inlier_thresh_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iters: 300,
            inlier_thresh_px: 2.0,
            min_inliers: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VpConfig {
    /// Rows are sampled where row % row_stride == 0.
    pub row_stride: u32,
    /// Components with fewer sampled rows than this are dropped.
    pub min_points: usize,
    pub ransac: RansacConfig,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            row_stride: 5,
            min_points: 5,
            ransac: RansacConfig::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Centerline extraction
// ---------------------------------------------------------------------------

/// Labels 8-connected components, then samples each component's row-wise
/// midpoints every `row_stride` rows.
pub fn extract_centerlines(
    mask: &BinaryMask,
    row_stride: u32,
    min_points: usize,
) -> Result<CenterlineSet, PerceptionError> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut labels: Vec<u32> = vec![0; w * h];
    let mut next_label = 0u32;
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for start in 0..w * h {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        next_label += 1;
        labels[start] = next_label;
        stack.push((start / w, start % w));
        while let Some((r, c)) = stack.pop() {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let ni = nr as usize * w + nc as usize;
                    if bits[ni] == 1 && labels[ni] == 0 {
                        labels[ni] = next_label;
                        stack.push((nr as usize, nc as usize));
                    }
                }
            }
        }
    }
    if next_label == 0 {
        return Err(PerceptionError::NoLanes);
    }

    // per component, per sampled row: (leftmost, rightmost) column
    let stride = row_stride.max(1) as usize;
    let mut lanes: Vec<Vec<[f64; 2]>> = vec![Vec::new(); next_label as usize];
    for r in (0..h).step_by(stride) {
        // min/max column per label in this row
        let mut row_edges: Vec<Option<(usize, usize)>> = vec![None; next_label as usize];
        for c in 0..w {
            let label = labels[r * w + c];
            if label == 0 {
                continue;
            }
            let entry = &mut row_edges[(label - 1) as usize];
            *entry = Some(match entry {
                None => (c, c),
                Some((lo, _)) => (*lo, c),
            });
        }
        for (lane, edges) in lanes.iter_mut().zip(&row_edges) {
            if let Some((lo, hi)) = edges {
                lane.push([(*lo as f64 + *hi as f64) / 2.0, r as f64]);
            }
        }
    }

    let lanes: Vec<Vec<[f64; 2]>> = lanes
        .into_iter()
        .filter(|pts| pts.len() >= min_points)
        .collect();
    if lanes.is_empty() {
        return Err(PerceptionError::NoLanes);
    }
    Ok(CenterlineSet { lanes })
}

// ---------------------------------------------------------------------------
// RANSAC line fit
// ---------------------------------------------------------------------------

fn line_through(p: [f64; 2], q: [f64; 2]) -> Option<(f64, f64, f64)> {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let norm = (dx * dx + dy * dy).sqrt();
    if norm < 1e-12 {
        return None;
    }
    let (a, b) = (-dy / norm, dx / norm);
    Some((a, b, -(a * p[0] + b * p[1])))
}

/// Total-least-squares line through a point set (principal direction of the
/// centered covariance).
fn tls_fit(points: &[[f64; 2]]) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx + syy < 1e-12 {
        return None;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = [theta.cos(), theta.sin()];
    let (a, b) = (-dir[1], dir[0]);
    Some((a, b, -(a * mx + b * my)))
}

fn canonical(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    if a < 0.0 || (a == 0.0 && b < 0.0) {
        (-a, -b, -c)
    } else {
        (a, b, c)
    }
}

/// Two-point-sample RANSAC with a total-least-squares refit on the winning
/// inlier set. Deterministic in `cfg.seed`.
pub fn fit_line_ransac(
    points: &[[f64; 2]],
    cfg: &RansacConfig,
) -> Result<FittedLine, PerceptionError> {
    if points.len() < 2 {
        return Err(PerceptionError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, (f64, f64, f64))> = None;
    for _ in 0..cfg.iters {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        if i == j {
            continue;
        }
        let Some((a, b, c)) = line_through(points[i], points[j]) else {
            continue;
        };
        let count = points
            .iter()
            .filter(|p| (a * p[0] + b * p[1] + c).abs() <= cfg.inlier_thresh_px)
            .count();
        if best.map_or(true, |(bc, _)| count > bc) {
            best = Some((count, (a, b, c)));
        }
    }
    let Some((best_count, model)) = best else {
        return Err(PerceptionError::Fit {
            best: 0,
            min: cfg.min_inliers,
        });
    };
    if best_count < cfg.min_inliers {
        return Err(PerceptionError::Fit {
            best: best_count,
            min: cfg.min_inliers,
        });
    }
    let inliers: Vec<[f64; 2]> = points
        .iter()
        .copied()
        .filter(|p| (model.0 * p[0] + model.1 * p[1] + model.2).abs() <= cfg.inlier_thresh_px)
        .collect();
    let (a, b, c) = tls_fit(&inliers).unwrap_or(model);
    let (a, b, c) = canonical(a, b, c);
    let line = FittedLine {
        a,
        b,
        c,
        inlier_count: 0,
    };
    let inlier_count = points
        .iter()
        .filter(|p| line.distance(**p) <= cfg.inlier_thresh_px)
        .count();
    if inlier_count < cfg.min_inliers {
        return Err(PerceptionError::Fit {
            best: inlier_count,
            min: cfg.min_inliers,
        });
    }
    Ok(FittedLine {
        inlier_count,
        ..line
    })
}

// ---------------------------------------------------------------------------
// Line intersection
// ---------------------------------------------------------------------------

const MAX_CONDITION: f64 = 1e8;

/// Point minimizing the summed squared perpendicular distance to all lines,
/// normalized by the image extents.
pub fn intersect_lines(
    lines: &[FittedLine],
    width: u32,
    height: u32,
) -> Result<[f64; 2], PerceptionError> {
    let pixel = intersect_lines_px(lines)?;
    Ok([pixel[0] / f64::from(width), pixel[1] / f64::from(height)])
}

/// Same solve in pixel coordinates.
pub fn intersect_lines_px(lines: &[FittedLine]) -> Result<[f64; 2], PerceptionError> {
    if lines.len() < 2 {
        return Err(PerceptionError::Degenerate(format!(
            "need at least 2 lines, got {}",
            lines.len()
        )));
    }
    // normal equations of minimize sum (a x + b y + c)^2
    let (mut m00, mut m01, mut m11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for l in lines {
        m00 += l.a * l.a;
        m01 += l.a * l.b;
        m11 += l.b * l.b;
        r0 -= l.a * l.c;
        r1 -= l.b * l.c;
    }
    let tr = m00 + m11;
    let det = m00 * m11 - m01 * m01;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if lmin <= 0.0 || lmax / lmin > MAX_CONDITION {
        return Err(PerceptionError::Degenerate(format!(
            "normal matrix condition {:.3e} exceeds {MAX_CONDITION:.0e}",
            if lmin > 0.0 { lmax / lmin } else { f64::INFINITY }
        )));
    }
    Ok([(m11 * r0 - m01 * r1) / det, (m00 * r1 - m01 * r0) / det])
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Per-lane fit detail kept for quality gating by downstream consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneFit {
    pub line: FittedLine,
    pub num_points: usize,
    pub inlier_ratio: f64,
}

pub fn estimate_vp_detailed(
    mask: &BinaryMask,
    cfg: &VpConfig,
) -> Result<(VpEstimate, Vec<LaneFit>), PerceptionError> {
    let centerlines = extract_centerlines(mask, cfg.row_stride, cfg.min_points)?;
    let mut fits: Vec<LaneFit> = Vec::new();
    for (i, pts) in centerlines.lanes.iter().enumerate() {
        let lane_cfg = RansacConfig {
            seed: cfg
                .ransac
                .seed
                .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..cfg.ransac
        };
        if let Ok(line) = fit_line_ransac(pts, &lane_cfg) {
            fits.push(LaneFit {
                line,
                num_points: pts.len(),
                inlier_ratio: line.inlier_count as f64 / pts.len() as f64,
            });
        }
    }
    if fits.len() < 2 {
        return Err(PerceptionError::Degenerate(format!(
            "only {} lane(s) yielded a line fit",
            fits.len()
        )));
    }
    let lines: Vec<FittedLine> = fits.iter().map(|f| f.line).collect();
    let vp_px = intersect_lines_px(&lines)?;
    let residual_px =
        lines.iter().map(|l| l.distance(vp_px)).sum::<f64>() / lines.len() as f64;
    let vp = [
        vp_px[0] / f64::from(mask.width()),
        vp_px[1] / f64::from(mask.height()),
    ];
    Ok((
        VpEstimate {
            vp,
            num_lines: lines.len(),
            residual_px,
        },
        fits,
    ))
}

/// extract_centerlines -> fit_line_ransac per lane -> intersect_lines.
pub fn estimate_vp(mask: &BinaryMask, cfg: &VpConfig) -> Result<VpEstimate, PerceptionError> {
    estimate_vp_detailed(mask, cfg).map(|(est, _)| est)
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// 2D Gaussian regression target with its peak normalized to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VpHeatmap {
    pub height: u32,
    pub width: u32,
    pub values: Vec<f64>,
    pub sigma: f64,
}

pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;

/// Evaluates exp(-((c - x_px)^2 + (r - y_px)^2) / (2 sigma^2)) on the pixel
/// lattice, where (x_px, y_px) = (vp.x * w, vp.y * h), then rescales so the
/// maximum cell is 1.
pub fn make_gaussian_heatmap(vp: [f64; 2], height: u32, width: u32, sigma: f64) -> VpHeatmap {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(
        (0.0..=1.0).contains(&vp[0]) && (0.0..=1.0).contains(&vp[1]),
        "vp must be normalized"
    );
    let (x_px, y_px) = (vp[0] * f64::from(width), vp[1] * f64::from(height));
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut values = Vec::with_capacity(height as usize * width as usize);
    let mut max = 0.0f64;
    for r in 0..height {
        for c in 0..width {
            let d2 = (f64::from(c) - x_px).powi(2) + (f64::from(r) - y_px).powi(2);
            let v = (-d2 * inv).exp();
            max = max.max(v);
            values.push(v);
        }
    }
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    VpHeatmap {
        height,
        width,
        values,
        sigma,
    }
}

/// Argmax decode with sub-pixel refinement.
///
/// Ties break toward the smallest row, then column. The 3x3 neighborhood
/// centroid is weighted by value minus the neighborhood minimum, so flat
/// neighborhoods decode to the argmax pixel itself.
pub fn heatmap_argmax(h: &VpHeatmap) -> [f64; 2] {
    let (height, width) = (h.height as usize, h.width as usize);
    let mut best = (0usize, 0usize);
    let mut best_val = f64::NEG_INFINITY;
    for r in 0..height {
        for c in 0..width {
            let v = h.values[r * width + c];
            if v > best_val {
                best_val = v;
                best = (r, c);
            }
        }
    }
    let (br, bc) = best;
    let r_lo = br.saturating_sub(1);
    let r_hi = (br + 1).min(height - 1);
    let c_lo = bc.saturating_sub(1);
    let c_hi = (bc + 1).min(width - 1);
    let mut floor = f64::INFINITY;
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            floor = floor.min(h.values[r * width + c]);
        }
    }
    let (mut wsum, mut xsum, mut ysum) = (0.0, 0.0, 0.0);
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let w = h.values[r * width + c] - floor;
            wsum += w;
            xsum += w * c as f64;
            ysum += w * r as f64;
        }
    }
    let (x, y) = if wsum > 0.0 {
        (xsum / wsum, ysum / wsum)
    } else {
        (bc as f64, br as f64)
    };
    [x / width as f64, y / height as f64]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar_mask(cols: std::ops::RangeInclusive<u32>, rows: std::ops::RangeInclusive<u32>) -> BinaryMask {
        let mut m = BinaryMask::zeros(128, 128);
        for r in rows {
            for c in cols.clone() {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn vertical_bar_centerline() {
        let m = bar_mask(10..=12, 0..=99);
        let set = extract_centerlines(&m, 5, 5).unwrap();
        assert_eq!(set.lanes.len(), 1);
        let lane = &set.lanes[0];
        assert_eq!(lane.len(), 20); // rows 0,5,...,95
        for (i, p) in lane.iter().enumerate() {
            assert_eq!(p[0], 11.0);
            assert_eq!(p[1], (i * 5) as f64);
        }
        // rows strictly increase
        assert!(lane.windows(2).all(|w| w[0][1] < w[1][1]));
    }

    #[test]
    fn empty_mask_has_no_lanes() {
        let m = BinaryMask::zeros(32, 32);
        assert!(matches!(
            extract_centerlines(&m, 5, 5),
            Err(PerceptionError::NoLanes)
        ));
    }

    #[test]
    fn two_bars_are_two_lanes() {
        let mut m = bar_mask(10..=12, 0..=99);
        for r in 0..=99 {
            for c in 60..=62 {
                m.set(r, c, true);
            }
        }
        let set = extract_centerlines(&m, 5, 5).unwrap();
        assert_eq!(set.lanes.len(), 2);
    }

    #[test]
    fn collinear_points_fit_exactly() {
        let points: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, i as f64]).collect();
        let line = fit_line_ransac(&points, &RansacConfig::default()).unwrap();
        assert_eq!(line.inlier_count, 10);
        assert!((line.a * line.a + line.b * line.b - 1.0).abs() < 1e-9);
        for p in &points {
            assert!(line.distance(*p) < 1e-9);
        }
    }

    #[test]
    fn ransac_rejects_outliers() {
        // 80 points on y = 0.5 x + 3, 20 scattered far off
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut points: Vec<[f64; 2]> = (0..80)
            .map(|i| {
                let x = i as f64;
                [x, 0.5 * x + 3.0]
            })
            .collect();
        for _ in 0..20 {
            points.push([rng.random_range(0.0..80.0), rng.random_range(60.0..200.0)]);
        }
        let line = fit_line_ransac(
            &points,
            &RansacConfig {
                iters: 500,
                inlier_thresh_px: 2.0,
                min_inliers: 40,
                seed: 7,
            },
        )
        .unwrap();
        assert!(line.inlier_count >= 80);
        // compare against the least-squares fit of the 80 clean points over their span
        let clean = tls_fit(&points[..80]).unwrap();
        for x in [0.0, 40.0, 79.0] {
            let y_ref = -(clean.0 * x + clean.2) / clean.1;
            let y_fit = -(line.a * x + line.c) / line.b;
            assert!((y_ref - y_fit).abs() < 0.5, "x={x}: {y_ref} vs {y_fit}");
        }
    }

    #[test]
    fn single_point_is_too_few() {
        assert!(matches!(
            fit_line_ransac(&[[1.0, 2.0]], &RansacConfig::default()),
            Err(PerceptionError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn ransac_is_deterministic() {
        let points: Vec<[f64; 2]> = (0..40)
            .map(|i| [i as f64, 2.0 * i as f64 + ((i * 7) % 3) as f64 * 0.3])
            .collect();
        let cfg = RansacConfig::default();
        assert_eq!(
            fit_line_ransac(&points, &cfg).unwrap(),
            fit_line_ransac(&points, &cfg).unwrap()
        );
    }

    #[test]
    fn orthogonal_lines_intersect() {
        let lx = FittedLine { a: 1.0, b: 0.0, c: -10.0, inlier_count: 5 }; // x = 10
        let ly = FittedLine { a: 0.0, b: 1.0, c: -20.0, inlier_count: 5 }; // y = 20
        let p = intersect_lines(&[lx, ly], 100, 100).unwrap();
        assert!((p[0] - 0.10).abs() < 1e-12);
        assert!((p[1] - 0.20).abs() < 1e-12);
    }

    #[test]
    fn concurrent_lines_meet_at_their_point() {
        // three lines through (50, 40)
        let mk = |angle: f64| {
            let (a, b) = (-(angle.sin()), angle.cos());
            let (a, b, c) = canonical(a, b, -(a * 50.0 + b * 40.0));
            FittedLine { a, b, c, inlier_count: 5 }
        };
        let lines = [mk(0.3), mk(1.2), mk(2.0)];
        let p = intersect_lines(&lines, 100, 100).unwrap();
        assert!((p[0] - 0.50).abs() < 1e-9);
        assert!((p[1] - 0.40).abs() < 1e-9);
    }

    #[test]
    fn parallel_lines_are_degenerate() {
        let l1 = FittedLine { a: 1.0, b: 0.0, c: -10.0, inlier_count: 5 };
        let l2 = FittedLine { a: 1.0, b: 0.0, c: -30.0, inlier_count: 5 };
        assert!(matches!(
            intersect_lines(&[l1, l2], 100, 100),
            Err(PerceptionError::Degenerate(_))
        ));
    }

    #[test]
    fn single_lane_cannot_give_a_vp() {
        let m = bar_mask(10..=12, 0..=99);
        assert!(matches!(
            estimate_vp(&m, &VpConfig::default()),
            Err(PerceptionError::Degenerate(_))
        ));
    }

    #[test]
    fn heatmap_peak_and_sigma_point() {
        let h = make_gaussian_heatmap([0.5, 0.25], 64, 64, 2.0);
        // vp lands on pixel (16, 32)
        assert!((h.values[16 * 64 + 32] - 1.0).abs() < 1e-12);
        // one sigma away along x
        let at_sigma = h.values[16 * 64 + 34];
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-9);
        let h2 = make_gaussian_heatmap([0.5, 0.25], 64, 64, 2.0);
        assert_eq!(h, h2);
    }

    #[test]
    fn heatmap_max_is_one_even_off_grid() {
        let h = make_gaussian_heatmap([0.487, 0.253], 64, 64, 2.0);
        let max = h.values.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-6);
        assert!(h.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn argmax_roundtrip_within_a_pixel() {
        for vp in [[0.5, 0.45], [0.25, 0.75], [0.313, 0.627]] {
            let h = make_gaussian_heatmap(vp, 64, 64, 2.0);
            let back = heatmap_argmax(&h);
            let pitch = 1.0 / 64.0;
            let d = ((back[0] - vp[0]).powi(2) + (back[1] - vp[1]).powi(2)).sqrt();
            assert!(d <= pitch, "vp {vp:?} -> {back:?} distance {d}");
        }
    }

    #[test]
    fn uniform_heatmap_ties_to_origin_pixel() {
        let h = VpHeatmap {
            height: 8,
            width: 8,
            values: vec![0.5; 64],
            sigma: 1.0,
        };
        assert_eq!(heatmap_argmax(&h), [0.0, 0.0]);
    }

    #[test]
    fn single_nonzero_pixel_decodes_exactly() {
        let mut values = vec![0.0; 64];
        values[3 * 8 + 5] = 0.9;
        let h = VpHeatmap {
            height: 8,
            width: 8,
            values,
            sigma: 1.0,
        };
        assert_eq!(heatmap_argmax(&h), [5.0 / 8.0, 3.0 / 8.0]);
    }
}
