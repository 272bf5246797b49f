//! Windowed reward evaluation and ascent over the distortion parameters.
//!
//! One reward sample renders the scene at the current parameters, projects
//! the frame to a latent, mixes in seeded noise at step k, decodes, runs
//! perception against a fixed reference, and composes the hierarchical
//! reward. Gradients are central finite differences over the parameter
//! vector with common random numbers: every +/-h evaluation of one estimate
//! shares the same window step and noise seed, so the difference isolates
//! the parameter change.
//!
//! The generated-side occupancy is rasterized analytically from the current
//! parameters (that is what couples r_iou to vehicle_jitter); it therefore
//! carries no noise-seed variance. The latent-dependent terms do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geoscores::{score_depth, score_lane, score_vp};
use crate::latent::{
    decode_latent, flow_interpolate, project_to_latent, LatentError, LatentFrame,
    LatentTrajectory, DEFAULT_DECODE_THRESH, DEFAULT_T_TOTAL,
};
use crate::perception::{estimate_vp, estimate_vp_detailed, VpConfig};
use crate::raster::{BinaryMask, DepthMap, OccupancyConfig};
use crate::rewards::{
    compose_reward, fit_feature_distribution, reward_align, reward_iou, reward_lane_tolerant,
    reward_vp, FeatureDistribution, ReferenceBundle, RewardBreakdown, RewardFlags, RewardTerms,
    RewardWeights,
};
use crate::scene::{render_frame, CameraModel, DistortionParams, SceneError, SceneSpec};

#[derive(Debug, Error)]
pub enum WindowedError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("reference construction failed: {0}")]
    Reference(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Sliding reward window: t' is drawn uniformly from [t_min, t_max] and the
/// reward is evaluated at k = t' - w.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub w: u32,
    pub t_min: u32,
    pub t_max: u32,
    pub seed: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            w: 5,
            t_min: 8,
            t_max: 30,
            seed: 0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self, t_total: u32) -> Result<(), WindowedError> {
        if self.w < 1 {
            return Err(WindowedError::Config("window w must be >= 1".into()));
        }
        if self.t_min < self.w {
            return Err(WindowedError::Config(format!(
                "t_min {} < w {} would give negative k",
                self.t_min, self.w
            )));
        }
        if self.t_max < self.t_min || self.t_max > t_total {
            return Err(WindowedError::Config(format!(
                "need t_min <= t_max <= T, got [{}, {}] with T={}",
                self.t_min, self.t_max, t_total
            )));
        }
        Ok(())
    }
}

/// Worst-case substitutes for reward terms whose perception stage failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardFloors {
    pub r_vp: f64,
    pub r_lane: f64,
    pub r_depth: f64,
}

impl Default for RewardFloors {
    fn default() -> Self {
        RewardFloors {
            r_vp: -1.0,
            r_lane: 0.0,
            r_depth: -100.0,
        }
    }
}

/// Validity gates deciding when the latent lane perception is degenerate.
/// They apply only to the reward path, never to bare `estimate_vp`.
///
/// Two-line bundles always intersect exactly (zero residual), so they are
/// instead required to carry enough inlier evidence; random blobs rarely do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionGates {
    /// With three or more lines, the VP-to-line residual must stay below
    /// this many pixels.
    pub max_residual_px: f64,
    /// With exactly two lines, each must have at least this many inliers.
    pub two_line_min_inliers: usize,
    /// The VP must land within the image grown by this normalized margin.
    pub vp_margin: f64,
}

impl Default for PerceptionGates {
    fn default() -> Self {
        PerceptionGates {
            max_residual_px: 6.0,
            two_line_min_inliers: 8,
            vp_margin: 0.5,
        }
    }
}

/// Everything the reward pipeline needs besides the scene itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub latent_factor: u32,
    pub t_total: u32,
    pub decode_thresh: f64,
    pub perception: VpConfig,
    pub occupancy: OccupancyConfig,
    pub floors: RewardFloors,
    pub gates: PerceptionGates,
    /// Reward-path depth supervision ignores reference pixels deeper than
    /// this many meters; far-field ground depth diverges near the horizon
    /// and drowns the signal.
    pub depth_cap: f64,
    /// Per-mask depth band for reward supervision, as quantiles of the
    /// reference depth under that mask. A narrow band keeps unit-depth
    /// errors from aliasing against camera pitch, whose depth footprint
    /// grows quadratically with range.
    pub depth_band: [f64; 2],
    /// Dilation tolerance of the reward-path lane F1, pixels. The scoring
    /// suite always uses the strict pixel-wise F1.
    pub lane_tolerance_px: u32,
    /// Average the reward over every step of the window instead of only its
    /// end point k.
    pub window_accumulate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            latent_factor: 1,
            t_total: DEFAULT_T_TOTAL,
            decode_thresh: DEFAULT_DECODE_THRESH,
            perception: VpConfig::default(),
            occupancy: OccupancyConfig::default(),
            floors: RewardFloors::default(),
            gates: PerceptionGates::default(),
            depth_cap: 80.0,
            depth_band: [0.1, 0.9],
            lane_tolerance_px: 2,
            window_accumulate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AscentMethod {
    /// Per-axis adaptive moments; the default, since the raw terms live on
    /// wildly different scales (meters vs normalized units).
    Adam,
    /// Plain gradient ascent.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Per-iteration multiplicative decay of the learning rate; 1.0 disables
    /// it. Damping the late phase keeps flat parameter directions from
    /// random-walking under gradient noise.
    pub lr_decay: f64,
    pub iterations: u32,
    pub fd_step: f64,
    pub windows_per_iter: u32,
    pub seed: u64,
    pub method: AscentMethod,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.02,
            lr_decay: 0.99,
            iterations: 200,
            fd_step: 0.02,
            windows_per_iter: 4,
            seed: 0,
            method: AscentMethod::Adam,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), WindowedError> {
        if self.learning_rate <= 0.0
            || self.iterations == 0
            || self.fd_step <= 0.0
            || self.windows_per_iter == 0
            || !(0.0 < self.lr_decay && self.lr_decay <= 1.0)
        {
            return Err(WindowedError::Config(
                "optimizer fields must be positive (lr_decay in (0, 1])".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reference
// ---------------------------------------------------------------------------

/// Reward-side reference (through the latent path) plus the crisp-raster
/// reference that GeoScores compare against.
#[derive(Debug, Clone)]
pub struct SceneReference {
    pub bundle: ReferenceBundle,
    pub vp_raster: [f64; 2],
    pub lane_raster: BinaryMask,
    pub depth_raster: DepthMap,
    pub road_raster: BinaryMask,
}

fn latent_features(z: &LatentFrame) -> FeatureDistribution {
    // batch = latent pixels, feature vector = [vehicle, depth]
    let batch: Vec<Vec<f64>> = z
        .vehicle
        .iter()
        .zip(&z.depth)
        .map(|(&v, &d)| vec![v, d])
        .collect();
    fit_feature_distribution(&batch).expect("latent has >= 2 pixels")
}

/// Renders the undistorted scene and derives every reference quantity from
/// it: perception outputs through the same latent path the generated side
/// uses, raw region masks, analytic occupancy, and the fitted feature
/// distribution.
pub fn build_reference(
    scene: &SceneSpec,
    cam: &CameraModel,
    cfg: &PipelineConfig,
) -> Result<SceneReference, WindowedError> {
    let identity = DistortionParams::identity();
    let frame = render_frame(scene, cam, &identity, &cfg.occupancy)?;
    let z_v = project_to_latent(&frame, cfg.latent_factor)?;
    let decoded = decode_latent(&z_v, cfg.decode_thresh);
    let v_ref = estimate_vp(&decoded.lane_mask, &cfg.perception)
        .map_err(|e| WindowedError::Reference(format!("decoded reference vp: {e}")))?;
    let vp_raster = estimate_vp(&frame.lane_mask, &cfg.perception)
        .map_err(|e| WindowedError::Reference(format!("raster reference vp: {e}")))?;
    let feat_real = latent_features(&z_v);
    // reward-path region masks keep only each region's core depth band
    let banded = |mask: &BinaryMask| -> BinaryMask {
        let mut depths: Vec<f64> = Vec::new();
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.get(r, c) {
                    let d = f64::from(frame.depth.get(r, c));
                    if d > 0.0 && d <= cfg.depth_cap {
                        depths.push(d);
                    }
                }
            }
        }
        let mut out = BinaryMask::zeros(mask.width(), mask.height());
        if depths.is_empty() {
            return out;
        }
        depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantile = |q: f64| depths[((depths.len() - 1) as f64 * q).round() as usize];
        let (lo, hi) = (quantile(cfg.depth_band[0]), quantile(cfg.depth_band[1]));
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.get(r, c) {
                    let d = f64::from(frame.depth.get(r, c));
                    if d >= lo && d <= hi {
                        out.set(r, c, true);
                    }
                }
            }
        }
        out
    };
    Ok(SceneReference {
        bundle: ReferenceBundle {
            v_ref: v_ref.vp,
            l_ref: decoded.lane_mask,
            d_ref: decoded.depth,
            m_road: banded(&frame.road_mask),
            m_vehicle: banded(&frame.vehicle_mask),
            feat_real,
            o_real: frame.occupancy.clone(),
        },
        vp_raster: vp_raster.vp,
        lane_raster: frame.lane_mask,
        depth_raster: frame.depth,
        road_raster: frame.road_mask,
    })
}

/// Borrowed bundle of everything a reward evaluation needs.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub scene: &'a SceneSpec,
    pub cam: &'a CameraModel,
    pub reference: &'a SceneReference,
    pub weights: RewardWeights,
    pub cfg: &'a PipelineConfig,
}

// ---------------------------------------------------------------------------
// Window sampling
// ---------------------------------------------------------------------------

/// Draws (t', k): t' uniform on [t_min, t_max], k = t' - w.
pub fn sample_window(cfg: &WindowConfig, rng: &mut ChaCha8Rng) -> (u32, u32) {
    let t_prime = rng.random_range(cfg.t_min..=cfg.t_max);
    (t_prime, t_prime - cfg.w)
}

// ---------------------------------------------------------------------------
// Reward evaluation
// ---------------------------------------------------------------------------

fn floored_breakdown(ctx: &EvalContext) -> RewardBreakdown {
    compose_reward(
        RewardTerms {
            r_vp: ctx.cfg.floors.r_vp,
            r_lane: ctx.cfg.floors.r_lane,
            r_depth: ctx.cfg.floors.r_depth,
            r_align: 0.0,
            r_iou: 0.0,
            flags: RewardFlags {
                vp_floored: true,
                lane_floored: true,
                depth_floored: true,
            },
        },
        &ctx.weights,
    )
}

/// Depth term on the raw latent channel: RMSE of gen-latent depth against
/// the decoded reference over mask pixels where the reference is defined and
/// the generated clean latent carries depth (mutually visible ground).
///
/// The noisy channel may be negative; that is an honest prediction error and
/// keeps the statistic unbiased in the depth parameters. Clamping or dropping
/// sub-zero values would pay off amplifying the depth signal away from the
/// noise floor. The support test uses the clean latent, not the noisy one,
/// so the averaged pixel set never depends on the noise draw.
fn latent_depth_rmse(
    gen: &LatentFrame,
    gen_clean: &LatentFrame,
    ref_depth: &DepthMap,
    mask: &BinaryMask,
) -> Option<f64> {
    let f = gen.scale_factor;
    let (mut acc, mut n) = (0.0f64, 0u64);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) && ref_depth.defined(r, c) {
                let i = (r / f) as usize * gen.width as usize + (c / f) as usize;
                if gen_clean.depth[i] <= 0.0 {
                    continue;
                }
                let d = gen.depth[i] - f64::from(ref_depth.get(r, c));
                acc += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    Some((acc / n as f64).sqrt())
}

/// Lane perception for the reward path: the VP pipeline plus quality gates.
/// `None` means the mask could not be parsed as lane structure.
fn gated_vp(mask: &BinaryMask, cfg: &PipelineConfig) -> Option<[f64; 2]> {
    let (est, fits) = estimate_vp_detailed(mask, &cfg.perception).ok()?;
    let g = &cfg.gates;
    let inside = |v: f64| (-g.vp_margin..=1.0 + g.vp_margin).contains(&v);
    if !inside(est.vp[0]) || !inside(est.vp[1]) {
        return None;
    }
    if est.num_lines >= 3 && est.residual_px > g.max_residual_px {
        return None;
    }
    if est.num_lines == 2
        && fits
            .iter()
            .any(|f| f.line.inlier_count < g.two_line_min_inliers)
    {
        return None;
    }
    Some(est.vp)
}

/// Unbiased clean-latent estimate given z_k and its step: dividing by
/// (1 - k/T) undoes the interpolation's shrinkage toward the noise mean.
/// This is the analytic stand-in for perception heads that receive the
/// timestep alongside the latent; at k = T there is no signal left and the
/// latent passes through untouched (downstream gates floor it).
fn whiten_latent(z_k: &LatentFrame, k: u32, t_total: u32) -> LatentFrame {
    if k == 0 || k >= t_total {
        return z_k.clone();
    }
    let gain = 1.0 / (1.0 - f64::from(k) / f64::from(t_total));
    let scale = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * gain).collect() };
    LatentFrame {
        height: z_k.height,
        width: z_k.width,
        scale_factor: z_k.scale_factor,
        lane: scale(&z_k.lane),
        depth: scale(&z_k.depth),
        vehicle: scale(&z_k.vehicle),
    }
}

/// One reward sample of the noisy latent at step k against the reference.
/// Pure in (theta, k, noise_seed) given the context. Perception failures
/// floor the affected terms instead of aborting.
pub fn evaluate_reward_at(
    ctx: &EvalContext,
    theta: &DistortionParams,
    k: u32,
    noise_seed: u64,
) -> RewardBreakdown {
    let Ok(frame) = render_frame(ctx.scene, ctx.cam, theta, &ctx.cfg.occupancy) else {
        return floored_breakdown(ctx);
    };
    let Ok(z0) = project_to_latent(&frame, ctx.cfg.latent_factor) else {
        return floored_breakdown(ctx);
    };
    let traj = LatentTrajectory::new(z0, noise_seed, ctx.cfg.t_total);
    let Ok(z_k) = flow_interpolate(&traj, k) else {
        return floored_breakdown(ctx);
    };
    let z_k = whiten_latent(&z_k, k, ctx.cfg.t_total);
    let decoded = decode_latent(&z_k, ctx.cfg.decode_thresh);
    let reference = &ctx.reference.bundle;
    let mut flags = RewardFlags::default();

    let (r_vp, r_lane) = match gated_vp(&decoded.lane_mask, ctx.cfg) {
        Some(vp) => (
            reward_vp(vp, reference.v_ref),
            reward_lane_tolerant(&decoded.lane_mask, &reference.l_ref, ctx.cfg.lane_tolerance_px)
                .expect("decoded and reference extents match"),
        ),
        None => {
            flags.vp_floored = true;
            flags.lane_floored = true;
            (ctx.cfg.floors.r_vp, ctx.cfg.floors.r_lane)
        }
    };

    let road = latent_depth_rmse(&z_k, &traj.z0, &reference.d_ref, &reference.m_road);
    let vehicle = latent_depth_rmse(&z_k, &traj.z0, &reference.d_ref, &reference.m_vehicle);
    let r_depth = match (road, vehicle) {
        (Some(r), Some(v)) => -(r + v),
        _ => {
            flags.depth_floored = true;
            ctx.cfg.floors.r_depth
        }
    };

    let feat_gen = latent_features(&z_k);
    let r_align =
        reward_align(&reference.feat_real, &feat_gen).expect("feature dims are fixed at 2");
    let r_iou = reward_iou(&frame.occupancy, &reference.o_real)
        .expect("grids share the configured geometry");

    compose_reward(
        RewardTerms {
            r_vp,
            r_lane,
            r_depth,
            r_align,
            r_iou,
            flags,
        },
        &ctx.weights,
    )
}

/// Reward of one sampled window: the end-point evaluation, or the per-step
/// term means (with floor flags OR-ed) when window accumulation is on.
fn window_breakdown(
    ctx: &EvalContext,
    theta: &DistortionParams,
    t_prime: u32,
    k: u32,
    seed: u64,
) -> RewardBreakdown {
    if !ctx.cfg.window_accumulate {
        return evaluate_reward_at(ctx, theta, k, seed);
    }
    let n = f64::from(t_prime - k + 1);
    let mut terms = RewardTerms {
        r_vp: 0.0,
        r_lane: 0.0,
        r_depth: 0.0,
        r_align: 0.0,
        r_iou: 0.0,
        flags: RewardFlags::default(),
    };
    for step in k..=t_prime {
        let b = evaluate_reward_at(ctx, theta, step, seed);
        terms.r_vp += b.r_vp / n;
        terms.r_lane += b.r_lane / n;
        terms.r_depth += b.r_depth / n;
        terms.r_align += b.r_align / n;
        terms.r_iou += b.r_iou / n;
        terms.flags.vp_floored |= b.flags.vp_floored;
        terms.flags.lane_floored |= b.flags.lane_floored;
        terms.flags.depth_floored |= b.flags.depth_floored;
    }
    compose_reward(terms, &ctx.weights)
}

/// Directional derivative of the composite reward from two breakdowns.
///
/// A floored term is a constant substitute for absent perception; a
/// difference across the floor boundary is a bookkeeping cliff, not
/// geometric feedback, so any term whose floor state differs between the
/// two sides contributes nothing.
fn gated_difference(plus: &RewardBreakdown, minus: &RewardBreakdown, w: &RewardWeights) -> f64 {
    let mut diff = 0.0;
    if plus.flags.vp_floored == minus.flags.vp_floored {
        diff += w.lambda_vp * (plus.r_vp - minus.r_vp);
    }
    if plus.flags.lane_floored == minus.flags.lane_floored {
        diff += w.lambda_lane * (plus.r_lane - minus.r_lane);
    }
    if plus.flags.depth_floored == minus.flags.depth_floored {
        diff += w.lambda_depth * (plus.r_depth - minus.r_depth);
    }
    diff += plus.r_align - minus.r_align;
    diff += plus.r_iou - minus.r_iou;
    diff
}

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

/// Central finite differences over all parameter axes. The closure is called
/// 2*DIM times; evaluations run in parallel and land in axis order, so the
/// result is identical for any thread count.
pub fn central_difference_gradient<F>(
    f: F,
    theta: &DistortionParams,
    fd_step: f64,
) -> [f64; DistortionParams::DIM]
where
    F: Fn(&DistortionParams) -> f64 + Sync,
{
    let base = theta.to_vec();
    let evals: Vec<f64> = (0..2 * DistortionParams::DIM)
        .into_par_iter()
        .map(|j| {
            let axis = j / 2;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let mut v = base;
            v[axis] += sign * fd_step;
            f(&DistortionParams::from_vec(&v))
        })
        .collect();
    let mut grad = [0.0; DistortionParams::DIM];
    for (axis, g) in grad.iter_mut().enumerate() {
        *g = (evals[2 * axis] - evals[2 * axis + 1]) / (2.0 * fd_step);
    }
    grad
}

/// dR/dtheta at one window with common random numbers: all 2*DIM
/// evaluations share (t', k, noise_seed), and floor transitions are gated
/// out per [`gated_difference`].
fn window_gradient(
    ctx: &EvalContext,
    theta: &DistortionParams,
    t_prime: u32,
    k: u32,
    noise_seed: u64,
    fd_step: f64,
) -> [f64; DistortionParams::DIM] {
    let base = theta.to_vec();
    let evals: Vec<RewardBreakdown> = (0..2 * DistortionParams::DIM)
        .into_par_iter()
        .map(|j| {
            let axis = j / 2;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let mut v = base;
            v[axis] += sign * fd_step;
            window_breakdown(ctx, &DistortionParams::from_vec(&v), t_prime, k, noise_seed)
        })
        .collect();
    let mut grad = [0.0; DistortionParams::DIM];
    for (axis, g) in grad.iter_mut().enumerate() {
        *g = gated_difference(&evals[2 * axis], &evals[2 * axis + 1], &ctx.weights)
            / (2.0 * fd_step);
    }
    grad
}

/// dR/dtheta at window step k with common random numbers: all 2*DIM
/// evaluations share (k, noise_seed).
pub fn estimate_gradient(
    ctx: &EvalContext,
    theta: &DistortionParams,
    k: u32,
    noise_seed: u64,
    fd_step: f64,
) -> [f64; DistortionParams::DIM] {
    window_gradient(ctx, theta, k, k, noise_seed, fd_step)
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// GeoScores of a clean render against the raster reference. vp_error is
/// absent when the estimator fails on the rendered mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanScores {
    pub vp_error: Option<f64>,
    pub lane_f1: Option<f64>,
    pub depth_rmse: Option<f64>,
}

/// Clean-render (k = 0) reward and GeoScores at `theta`.
pub fn clean_scores(ctx: &EvalContext, theta: &DistortionParams) -> (RewardBreakdown, CleanScores) {
    let reward = evaluate_reward_at(ctx, theta, 0, 0);
    let scores = match render_frame(ctx.scene, ctx.cam, theta, &ctx.cfg.occupancy) {
        Ok(frame) => {
            let vp_error = estimate_vp(&frame.lane_mask, &ctx.cfg.perception)
                .ok()
                .map(|est| score_vp(est.vp, ctx.reference.vp_raster));
            let lane_f1 = score_lane(&frame.lane_mask, &ctx.reference.lane_raster).ok();
            let depth_rmse =
                score_depth(&frame.depth, &ctx.reference.depth_raster, &ctx.reference.road_raster)
                    .ok();
            CleanScores {
                vp_error,
                lane_f1,
                depth_rmse,
            }
        }
        Err(_) => CleanScores {
            vp_error: None,
            lane_f1: None,
            depth_rmse: None,
        },
    };
    (reward, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: u32,
    /// (t', k) of the first window consumed this iteration; None for the
    /// initial entry, which consumed none.
    pub window: Option<(u32, u32)>,
    pub theta: DistortionParams,
    pub reward: RewardBreakdown,
    pub scores: CleanScores,
    /// Whether this iteration's proposal survived the clean-reward guard.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Entry 0 is the initial state; entries i >= 1 follow iteration i.
    pub entries: Vec<TraceEntry>,
    pub best_iter: u32,
    pub best_theta: DistortionParams,
    pub best_reward: f64,
}

const DEPTH_SCALE_BOUNDS: (f64, f64) = (0.1, 10.0);
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const TRUST_SHRINK: f64 = 0.5;
const TRUST_GROW: f64 = 1.25;

/// Ascends the clean-reward objective through sampled noisy windows.
///
/// Each iteration proposes an ascent step from averaged window gradients and
/// keeps it only if the clean-render reward does not degrade; the clean
/// evaluation is recorded anyway, so the guard costs nothing and turns the
/// loop into stochastic hill climbing that noise can slow but not derail.
///
/// All randomness for an iteration (window draws, noise seeds) is taken from
/// the seeded streams before any evaluation, so results are bit-identical
/// regardless of how the inner evaluations are scheduled.
pub fn optimize(
    ctx: &EvalContext,
    theta_init: &DistortionParams,
    wcfg: &WindowConfig,
    ocfg: &OptimizerConfig,
) -> Result<OptimizationTrace, WindowedError> {
    wcfg.validate(ctx.cfg.t_total)?;
    ocfg.validate()?;
    theta_init.validate()?;

    let mut window_rng = ChaCha8Rng::seed_from_u64(wcfg.seed);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(ocfg.seed);

    let (reward0, scores0) = clean_scores(ctx, theta_init);
    let mut entries = vec![TraceEntry {
        iter: 0,
        window: None,
        theta: *theta_init,
        reward: reward0,
        scores: scores0,
        accepted: true,
    }];
    let (mut best_iter, mut best_theta, mut best_reward) = (0u32, *theta_init, reward0.total);

    let mut theta = theta_init.to_vec();
    let mut current_reward = reward0;
    let mut current_scores = scores0;
    let mut m = [0.0f64; DistortionParams::DIM];
    let mut v = [0.0f64; DistortionParams::DIM];
    let mut lr = ocfg.learning_rate;
    let mut trust = 1.0f64;

    for iter in 1..=ocfg.iterations {
        let windows: Vec<(u32, u32)> = (0..ocfg.windows_per_iter)
            .map(|_| sample_window(wcfg, &mut window_rng))
            .collect();
        let seeds: Vec<u64> = (0..ocfg.windows_per_iter)
            .map(|_| seed_rng.random())
            .collect();

        let current = DistortionParams::from_vec(&theta);
        let mut grad = [0.0f64; DistortionParams::DIM];
        for ((t_prime, k), seed) in windows.iter().zip(&seeds) {
            let g = window_gradient(ctx, &current, *t_prime, *k, *seed, ocfg.fd_step);
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        for g in &mut grad {
            *g /= f64::from(ocfg.windows_per_iter);
        }

        let mut candidate = theta;
        match ocfg.method {
            AscentMethod::Sgd => {
                for (t, g) in candidate.iter_mut().zip(grad) {
                    *t += lr * trust * g;
                }
            }
            AscentMethod::Adam => {
                let step = f64::from(iter);
                for i in 0..DistortionParams::DIM {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let m_hat = m[i] / (1.0 - ADAM_BETA1.powf(step));
                    let v_hat = v[i] / (1.0 - ADAM_BETA2.powf(step));
                    candidate[i] += lr * trust * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        candidate[2] = candidate[2].clamp(DEPTH_SCALE_BOUNDS.0, DEPTH_SCALE_BOUNDS.1);
        lr *= ocfg.lr_decay;

        let stepped = DistortionParams::from_vec(&candidate);
        let (reward, scores) = clean_scores(ctx, &stepped);
        let accepted = reward.total >= current_reward.total;
        if accepted {
            theta = candidate;
            current_reward = reward;
            current_scores = scores;
            trust = (trust * TRUST_GROW).min(1.0);
        } else {
            // shrink until micro-steps along an ascent direction get through,
            // and drop stale momentum so the next proposal is gradient-fresh
            trust *= TRUST_SHRINK;
            m = [0.0; DistortionParams::DIM];
        }
        if current_reward.total > best_reward {
            best_iter = iter;
            best_theta = DistortionParams::from_vec(&theta);
            best_reward = current_reward.total;
        }
        entries.push(TraceEntry {
            iter,
            window: Some(windows[0]),
            theta: DistortionParams::from_vec(&theta),
            reward: current_reward,
            scores: current_scores,
            accepted,
        });
    }

    Ok(OptimizationTrace {
        entries,
        best_iter,
        best_theta,
        best_reward,
    })
}

// ---------------------------------------------------------------------------
// Variance probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub k: u32,
    pub mean: f64,
    pub variance: f64,
    /// Fraction of seeds whose lane term hit its floor.
    pub lane_floor_fraction: f64,
}

/// Reward mean/variance per step over a shared set of noise seeds.
pub fn variance_probe(
    ctx: &EvalContext,
    theta: &DistortionParams,
    steps: &[u32],
    n_seeds: u32,
    base_seed: u64,
) -> Vec<ProbeRow> {
    assert!(n_seeds >= 2, "variance needs at least 2 seeds");
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let seeds: Vec<u64> = (0..n_seeds).map(|_| rng.random()).collect();
    steps
        .iter()
        .map(|&k| {
            let rewards: Vec<RewardBreakdown> = seeds
                .par_iter()
                .map(|&s| evaluate_reward_at(ctx, theta, k, s))
                .collect();
            let n = rewards.len() as f64;
            let mean = rewards.iter().map(|r| r.total).sum::<f64>() / n;
            let variance = rewards
                .iter()
                .map(|r| (r.total - mean) * (r.total - mean))
                .sum::<f64>()
                / (n - 1.0);
            let floors = rewards.iter().filter(|r| r.flags.lane_floored).count();
            ProbeRow {
                k,
                mean,
                variance,
                lane_floor_fraction: floors as f64 / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene, SceneConfig};

    fn context() -> (SceneSpec, CameraModel, PipelineConfig) {
        let scene = synth_scene(42, &SceneConfig::default()).unwrap();
        (scene, CameraModel::default(), PipelineConfig::default())
    }

    #[test]
    fn window_sampling_matches_contract() {
        let cfg = WindowConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (t_prime, k) = sample_window(&cfg, &mut rng);
            assert!((8..=30).contains(&t_prime));
            assert_eq!(k, t_prime - 5);
        }
        // w=5, t'=8 -> k=3
        let fixed = WindowConfig { t_min: 8, t_max: 8, ..cfg };
        let (t_prime, k) = sample_window(&fixed, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((t_prime, k), (8, 3));
        // deterministic in rng state
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_window(&cfg, &mut a), sample_window(&cfg, &mut b));
    }

    #[test]
    fn identity_theta_scores_perfectly_at_k0() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let b = evaluate_reward_at(&ctx, &DistortionParams::identity(), 0, 123);
        assert_eq!(b.r_vp, 0.0);
        assert_eq!(b.r_lane, 1.0);
        assert_eq!(b.r_depth, 0.0);
        assert_eq!(b.r_align, 0.0);
        assert_eq!(b.r_iou, 1.0);
        assert!((b.r_geo - 0.1).abs() < 1e-12);
        assert!(!b.flags.any());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let theta = DistortionParams {
            vp_shift: [0.03, -0.01],
            depth_scale: 1.1,
            ..DistortionParams::identity()
        };
        let a = evaluate_reward_at(&ctx, &theta, 12, 77);
        let b = evaluate_reward_at(&ctx, &theta, 12, 77);
        assert_eq!(a, b);
    }

    #[test]
    fn distorted_theta_scores_below_identity() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let clean = evaluate_reward_at(&ctx, &DistortionParams::identity(), 0, 0);
        let shifted = evaluate_reward_at(
            &ctx,
            &DistortionParams {
                vp_shift: [0.1, 0.0],
                ..DistortionParams::identity()
            },
            0,
            0,
        );
        assert!(clean.total > shifted.total);
    }

    #[test]
    fn probe_counts_rows_and_clean_step_has_zero_variance() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let rows = variance_probe(&ctx, &DistortionParams::identity(), &[0, 10], 4, 5);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].k, 0);
        assert_eq!(rows[0].variance, 0.0);
    }

    #[test]
    fn optimize_records_initial_entry_and_best_monotonicity() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let trace = optimize(
            &ctx,
            &DistortionParams::identity(),
            &WindowConfig::default(),
            &OptimizerConfig {
                iterations: 3,
                windows_per_iter: 1,
                ..OptimizerConfig::default()
            },
        )
        .unwrap();
        assert_eq!(trace.entries.len(), 4);
        assert_eq!(trace.entries[0].iter, 0);
        assert!(trace.entries[0].window.is_none());
        assert!(trace.best_reward >= trace.entries[0].reward.total);
        for e in &trace.entries[1..] {
            let (t_prime, k) = e.window.unwrap();
            assert!((8..=30).contains(&t_prime));
            assert_eq!(k, t_prime - 5);
        }
    }

    #[test]
    fn optimize_is_seed_deterministic() {
        let (scene, cam, cfg) = context();
        let reference = build_reference(&scene, &cam, &cfg).unwrap();
        let ctx = EvalContext {
            scene: &scene,
            cam: &cam,
            reference: &reference,
            weights: RewardWeights::default(),
            cfg: &cfg,
        };
        let theta = DistortionParams {
            vp_shift: [0.05, 0.0],
            ..DistortionParams::identity()
        };
        let wcfg = WindowConfig::default();
        let ocfg = OptimizerConfig {
            iterations: 2,
            windows_per_iter: 1,
            ..OptimizerConfig::default()
        };
        let a = optimize(&ctx, &theta, &wcfg, &ocfg).unwrap();
        let b = optimize(&ctx, &theta, &wcfg, &ocfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_window_config_is_rejected() {
        let cfg = WindowConfig {
            w: 9,
            t_min: 8,
            t_max: 30,
            seed: 0,
        };
        assert!(cfg.validate(30).is_err());
        let cfg = WindowConfig {
            t_max: 31,
            ..WindowConfig::default()
        };
        assert!(cfg.validate(30).is_err());
    }
}
