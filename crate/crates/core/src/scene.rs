//! Procedural driving scenes and their distorted renders.
//!
//! The world is a flat ground plane (z = 0) carrying straight, parallel lane
//! markings and axis-aligned vehicle boxes. A pinhole camera looks forward
//! (+Y); `DistortionParams` injects the geometric failure modes this crate
//! measures and optimizes away: a rotated camera (vanishing-point shift), an
//! affine depth error, a sinusoidal lateral lane warp, and a vehicle
//! translation. All rasterization is by pixel-center / voxel-center point
//! tests, so outputs are deterministic functions of their inputs.
//!
//! Conventions: world X is lateral-right, Y forward, Z up; image pixel centers
//! sit at integer coordinates; normalized image coordinates divide by
//! (width, height).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BinaryMask, DepthMap, OccupancyConfig, OccupancyGrid};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("vehicle placement failed after {attempts} attempts")]
    Placement { attempts: u32 },
    #[error("vanishing point ({0:.3}, {1:.3}) is more than 0.5 normalized units outside the image")]
    Horizon(f64, f64),
    #[error("invalid distortion: {0}")]
    Distortion(String),
}

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra, enough for one camera.
// ---------------------------------------------------------------------------

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: &Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Roll-free rotation taking unit vector `from` onto unit vector `to` in
/// camera coordinates: a yaw about the camera's down axis followed by a
/// pitch about its right axis. Unlike the minimal (Rodrigues) rotation this
/// keeps the horizon level for horizontal shifts, which is how a
/// mis-calibrated forward camera actually errs.
fn yaw_pitch_between(from: &Vec3, to: &Vec3) -> Option<Mat3> {
    let r = (from[0] * from[0] + from[2] * from[2]).sqrt();
    if r < to[0].abs() {
        return None;
    }
    let psi = from[2].atan2(from[0]);
    let alpha = psi - (to[0] / r).clamp(-1.0, 1.0).acos();
    let (sa, ca) = alpha.sin_cos();
    // about the y (down) axis: x' = r cos(psi - alpha) = to.x, z' >= 0
    let yaw: Mat3 = [[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]];
    let z_mid = (r * r - to[0] * to[0]).sqrt();
    let gamma0 = from[1].atan2(z_mid);
    let gamma_t = to[1].atan2(to[2]);
    let beta = gamma0 - gamma_t;
    let (sb, cb) = beta.sin_cos();
    let pitch: Mat3 = [[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]];
    Some(mat_mul(&pitch, &yaw))
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Forward-looking pinhole camera above the ground plane.
///
/// Positive pitch tilts the view down; positive yaw turns it right (the
/// forward direction's image point moves left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub camera_height: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Sensing range, meters; ground farther than this along the optical
    /// axis renders as undefined depth. Keeps near-horizon pixels, whose
    /// true range diverges, out of every statistic.
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fx: 256.0,
            fy: 256.0,
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
            camera_height: 2.2,
            pitch: 0.05,
            yaw: 0.0,
            max_range: 150.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::Config("focal lengths must be positive".into()));
        }
        if !(0.0 <= self.cx && self.cx < f64::from(self.width)) {
            return Err(SceneError::Config("cx out of image".into()));
        }
        if !(0.0 <= self.cy && self.cy < f64::from(self.height)) {
            return Err(SceneError::Config("cy out of image".into()));
        }
        if self.camera_height <= 0.0 {
            return Err(SceneError::Config("camera_height must be positive".into()));
        }
        if self.max_range <= 0.0 {
            return Err(SceneError::Config("max_range must be positive".into()));
        }
        Ok(())
    }

    /// World-to-camera rotation before any distortion. Camera axes: x right,
    /// y down, z forward.
    fn base_rotation(&self) -> Mat3 {
        let base: Mat3 = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        let (sy, cy_) = self.yaw.sin_cos();
        let yaw: Mat3 = [[cy_, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy_]];
        let (sp, cp) = self.pitch.sin_cos();
        let pitch: Mat3 = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        mat_mul(&pitch, &mat_mul(&yaw, &base))
    }

    fn project_dir(&self, d_cam: &Vec3) -> Option<(f64, f64)> {
        if d_cam[2] <= 1e-9 {
            return None;
        }
        Some((
            self.cx + self.fx * d_cam[0] / d_cam[2],
            self.cy + self.fy * d_cam[1] / d_cam[2],
        ))
    }
}

/// One painted lane marking: a ground-plane polyline with a strip width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
}

/// Axis-aligned (plus yaw) vehicle box on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// The ground-truth world: lane markings, vehicles, and the road rectangle
/// that contains them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub lanes: Vec<Lane>,
    pub vehicles: Vec<VehicleBox>,
    pub road_x: [f64; 2],
    pub road_y: [f64; 2],
    pub seed: u64,
}

/// Parametric geometric corruption applied at render time.
///
/// The identity is vp_shift = (0,0), depth_scale = 1, depth_bias = 0,
/// lane_warp_amp = 0, vehicle_jitter = (0,0); lane_warp_freq is inert while
/// the amplitude is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionParams {
    /// Image-space shift of the forward direction, normalized units (dx, dy).
    pub vp_shift: [f64; 2],
    pub depth_scale: f64,
    /// Meters added to every defined depth after scaling.
    pub depth_bias: f64,
    /// Lateral lane offset amplitude, meters.
    pub lane_warp_amp: f64,
    /// Spatial frequency of the lane warp, 1/meters of arclength.
    pub lane_warp_freq: f64,
    /// Translation applied to every vehicle box, meters (dx, dy).
    pub vehicle_jitter: [f64; 2],
}

impl Default for DistortionParams {
    fn default() -> Self {
        DistortionParams {
            vp_shift: [0.0, 0.0],
            depth_scale: 1.0,
            depth_bias: 0.0,
            lane_warp_amp: 0.0,
            lane_warp_freq: 0.0,
            vehicle_jitter: [0.0, 0.0],
        }
    }
}

impl DistortionParams {
    pub const DIM: usize = 8;
    pub const AXIS_NAMES: [&'static str; Self::DIM] = [
        "vp_shift_x",
        "vp_shift_y",
        "depth_scale",
        "depth_bias",
        "lane_warp_amp",
        "lane_warp_freq",
        "vehicle_jitter_x",
        "vehicle_jitter_y",
    ];

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SceneError::Distortion("all fields must be finite".into()));
        }
        if self.depth_scale <= 0.0 {
            return Err(SceneError::Distortion(format!(
                "depth_scale must be > 0, got {}",
                self.depth_scale
            )));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; Self::DIM] {
        [
            self.vp_shift[0],
            self.vp_shift[1],
            self.depth_scale,
            self.depth_bias,
            self.lane_warp_amp,
            self.lane_warp_freq,
            self.vehicle_jitter[0],
            self.vehicle_jitter[1],
        ]
    }

    pub fn from_vec(v: &[f64; Self::DIM]) -> Self {
        DistortionParams {
            vp_shift: [v[0], v[1]],
            depth_scale: v[2],
            depth_bias: v[3],
            lane_warp_amp: v[4],
            lane_warp_freq: v[5],
            vehicle_jitter: [v[6], v[7]],
        }
    }
}

/// All per-frame channels produced by one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub lane_mask: BinaryMask,
    pub road_mask: BinaryMask,
    pub vehicle_mask: BinaryMask,
    pub depth: DepthMap,
    pub occupancy: OccupancyGrid,
    /// Normalized image point where the (distorted) forward direction lands.
    pub true_vp: [f64; 2],
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

/// Knobs for [`synth_scene`]. Lane markings run forward from `lane_start_m`
/// for `lane_length_m` meters, spaced `lane_spacing_m` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_lanes: u32,
    pub lane_spacing_m: f64,
    pub lane_width_m: f64,
    pub lane_length_m: f64,
    pub lane_start_m: f64,
    pub num_vehicles: u32,
    pub vehicle_size: [f64; 3],
    /// Forward range vehicles may spawn in, meters.
    pub spawn_y: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_lanes: 3,
            lane_spacing_m: 3.5,
            lane_width_m: 0.4,
            lane_length_m: 120.0,
            lane_start_m: 4.0,
            num_vehicles: 2,
            // multiples of the default voxel size keep voxel counts stable
            // under translation, which the IoU monotonicity tests rely on
            vehicle_size: [2.0, 4.5, 1.5],
            spawn_y: [10.0, 50.0],
        }
    }
}

fn boxes_overlap(a: &VehicleBox, b: &VehicleBox, margin: f64) -> bool {
    // axis-aligned footprint check; spawned boxes have yaw 0
    (a.center[0] - b.center[0]).abs() < (a.size[0] + b.size[0]) / 2.0 + margin
        && (a.center[1] - b.center[1]).abs() < (a.size[1] + b.size[1]) / 2.0 + margin
}

/// Deterministically builds a scene from a seed: parallel forward lane
/// markings plus non-overlapping vehicles in the driving lanes.
pub fn synth_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec, SceneError> {
    if config.num_lanes < 2 {
        return Err(SceneError::Config(format!(
            "need at least 2 lanes for a vanishing point, got {}",
            config.num_lanes
        )));
    }
    if config.lane_width_m <= 0.0 || config.lane_spacing_m <= 0.0 || config.lane_length_m <= 0.0 {
        return Err(SceneError::Config("lane dimensions must be positive".into()));
    }
    if config.vehicle_size.iter().any(|&s| s <= 0.0) {
        return Err(SceneError::Config("vehicle size must be positive".into()));
    }

    let n = config.num_lanes;
    let y0 = config.lane_start_m;
    let y1 = y0 + config.lane_length_m;
    let lanes: Vec<Lane> = (0..n)
        .map(|i| {
            let x = (f64::from(i) - f64::from(n - 1) / 2.0) * config.lane_spacing_m;
            Lane {
                points: vec![[x, y0], [x, y1]],
                width: config.lane_width_m,
            }
        })
        .collect();

    let half_span = f64::from(n - 1) / 2.0 * config.lane_spacing_m;
    let road_margin = config.lane_spacing_m / 2.0 + config.lane_width_m;
    let road_x = [-half_span - road_margin, half_span + road_margin];
    let road_y = [y0, y1];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles: Vec<VehicleBox> = Vec::with_capacity(config.num_vehicles as usize);
    const MAX_ATTEMPTS: u32 = 200;
    for _ in 0..config.num_vehicles {
        let mut placed = false;
        let mut attempts = 0;
        while !placed {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(SceneError::Placement { attempts });
            }
            // pick a driving lane (the gap between adjacent markings)
            let slot = rng.random_range(0..n - 1);
            let x = -half_span + (f64::from(slot) + 0.5) * config.lane_spacing_m;
            let y = rng.random_range(config.spawn_y[0]..config.spawn_y[1]);
            let candidate = VehicleBox {
                center: [x, y, config.vehicle_size[2] / 2.0],
                size: config.vehicle_size,
                yaw: 0.0,
            };
            if vehicles.iter().all(|v| !boxes_overlap(v, &candidate, 1.0)) {
                vehicles.push(candidate);
                placed = true;
            }
        }
    }

    Ok(SceneSpec {
        lanes,
        vehicles,
        road_x,
        road_y,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct LaneSegment {
    start: [f64; 2],
    dir: [f64; 2],
    len: f64,
    arc_offset: f64,
    half_width: f64,
}

fn lane_segments(lane: &Lane) -> Vec<LaneSegment> {
    let mut segments = Vec::new();
    let mut arc = 0.0;
    for pair in lane.points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let len = (dx * dx + dy * dy).sqrt();
        if len > 0.0 {
            segments.push(LaneSegment {
                start: a,
                dir: [dx / len, dy / len],
                len,
                arc_offset: arc,
                half_width: lane.width / 2.0,
            });
            arc += len;
        }
    }
    segments
}

impl LaneSegment {
    /// Point-in-warped-strip test. `amp`/`freq` move the centerline laterally
    /// by amp*sin(freq*s) at arclength s.
    fn contains(&self, p: [f64; 2], amp: f64, freq: f64) -> bool {
        let rel = [p[0] - self.start[0], p[1] - self.start[1]];
        let s = rel[0] * self.dir[0] + rel[1] * self.dir[1];
        if s < 0.0 || s > self.len {
            return false;
        }
        // signed lateral distance (left-handed normal)
        let lateral = rel[0] * self.dir[1] - rel[1] * self.dir[0];
        let warp = if amp != 0.0 {
            amp * (freq * (self.arc_offset + s)).sin()
        } else {
            0.0
        };
        (lateral - warp).abs() <= self.half_width
    }
}

struct JitteredBox {
    center: [f64; 3],
    half: [f64; 3],
    cos_yaw: f64,
    sin_yaw: f64,
}

impl JitteredBox {
    fn new(b: &VehicleBox, jitter: [f64; 2]) -> Self {
        JitteredBox {
            center: [b.center[0] + jitter[0], b.center[1] + jitter[1], b.center[2]],
            half: [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0],
            cos_yaw: b.yaw.cos(),
            sin_yaw: b.yaw.sin(),
        }
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        [
            self.cos_yaw * d[0] + self.sin_yaw * d[1],
            -self.sin_yaw * d[0] + self.cos_yaw * d[1],
            d[2],
        ]
    }

    fn rotate_dir(&self, d: &Vec3) -> Vec3 {
        [
            self.cos_yaw * d[0] + self.sin_yaw * d[1],
            -self.sin_yaw * d[0] + self.cos_yaw * d[1],
            d[2],
        ]
    }

    /// Half-open membership keeps voxel counts translation-stable.
    fn contains_point(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| -self.half[i] <= l[i] && l[i] < self.half[i])
    }

    /// Slab-test ray intersection; returns the entry parameter t > 0.
    fn ray_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = self.to_local(origin);
        let d = self.rotate_dir(dir);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
            } else {
                let t1 = (-self.half[i] - o[i]) / d[i];
                let t2 = (self.half[i] - o[i]) / d[i];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_near = t_near.max(lo);
                t_far = t_far.min(hi);
                if t_near > t_far {
                    return None;
                }
            }
        }
        if t_far < 1e-9 {
            return None;
        }
        Some(t_near.max(1e-9))
    }
}

/// Camera rotation realizing the requested normalized VP shift, plus the
/// resulting forward-direction pixel.
fn shifted_rotation(cam: &CameraModel, vp_shift: [f64; 2]) -> Result<(Mat3, f64, f64), SceneError> {
    let base = cam.base_rotation();
    let forward: Vec3 = [0.0, 1.0, 0.0];
    let d0 = mat_vec(&base, &forward);
    let (u0, v0) = cam
        .project_dir(&d0)
        .ok_or(SceneError::Horizon(f64::NAN, f64::NAN))?;
    if vp_shift == [0.0, 0.0] {
        return Ok((base, u0, v0));
    }
    let ut = u0 + vp_shift[0] * f64::from(cam.width);
    let vt = v0 + vp_shift[1] * f64::from(cam.height);
    let target = normalize(&[(ut - cam.cx) / cam.fx, (vt - cam.cy) / cam.fy, 1.0]);
    let q = yaw_pitch_between(&normalize(&d0), &target).ok_or(SceneError::Horizon(
        ut / f64::from(cam.width),
        vt / f64::from(cam.height),
    ))?;
    let rot = mat_mul(&q, &base);
    let dv = mat_vec(&rot, &forward);
    let (u, v) = cam.project_dir(&dv).ok_or(SceneError::Horizon(
        ut / f64::from(cam.width),
        vt / f64::from(cam.height),
    ))?;
    Ok((rot, u, v))
}

/// Renders every channel of the scene through the distorted camera.
///
/// Masks rasterize the ground layout the way map-projected annotations do,
/// and the depth channel carries the road-surface (ground-plane) depth along
/// the optical axis; vehicles appear as their image silhouette and in the
/// occupancy grid. The affine depth distortion applies to every defined
/// pixel afterwards (floored at 1 mm to keep depths positive). Lane pixels
/// are clipped to the road rectangle, so road superset-of-lane holds for any
/// warp amplitude.
pub fn render_frame(
    scene: &SceneSpec,
    cam: &CameraModel,
    dist: &DistortionParams,
    occ_cfg: &OccupancyConfig,
) -> Result<RenderedFrame, SceneError> {
    cam.validate()?;
    dist.validate()?;
    if scene.lanes.len() < 2 {
        return Err(SceneError::Config("scene must have at least 2 lanes".into()));
    }

    let (rot, u_vp, v_vp) = shifted_rotation(cam, dist.vp_shift)?;
    let true_vp = [u_vp / f64::from(cam.width), v_vp / f64::from(cam.height)];
    if !(-0.5..=1.5).contains(&true_vp[0]) || !(-0.5..=1.5).contains(&true_vp[1]) {
        return Err(SceneError::Horizon(true_vp[0], true_vp[1]));
    }
    let rot_t = transpose(&rot);
    let origin: Vec3 = [0.0, 0.0, cam.camera_height];

    let segments: Vec<LaneSegment> = scene.lanes.iter().flat_map(lane_segments).collect();
    let boxes: Vec<JitteredBox> = scene
        .vehicles
        .iter()
        .map(|b| JitteredBox::new(b, dist.vehicle_jitter))
        .collect();

    let (w, h) = (cam.width, cam.height);
    let mut lane_mask = BinaryMask::zeros(w, h);
    let mut road_mask = BinaryMask::zeros(w, h);
    let mut vehicle_mask = BinaryMask::zeros(w, h);
    let mut depth = DepthMap::undefined(w, h);

    for row in 0..h {
        for col in 0..w {
            let d_cam: Vec3 = [
                (f64::from(col) - cam.cx) / cam.fx,
                (f64::from(row) - cam.cy) / cam.fy,
                1.0,
            ];
            let d_world = mat_vec(&rot_t, &d_cam);

            let t_ground = if d_world[2] < -1e-12 {
                let t = -origin[2] / d_world[2];
                if t > 0.0 && t <= cam.max_range {
                    Some(t)
                } else {
                    None
                }
            } else {
                None
            };
            if boxes.iter().any(|b| b.ray_hit(&origin, &d_world).is_some()) {
                vehicle_mask.set(row, col, true);
            }

            // masks are layout projections (map-style annotations) and the
            // depth channel is the road-surface depth; vehicles contribute
            // their image silhouette and the 3D occupancy, nothing else
            if let Some(tg) = t_ground {
                let gx = origin[0] + tg * d_world[0];
                let gy = origin[1] + tg * d_world[1];
                let on_road = scene.road_x[0] <= gx
                    && gx <= scene.road_x[1]
                    && scene.road_y[0] <= gy
                    && gy <= scene.road_y[1];
                if on_road {
                    road_mask.set(row, col, true);
                    if segments
                        .iter()
                        .any(|s| s.contains([gx, gy], dist.lane_warp_amp, dist.lane_warp_freq))
                    {
                        lane_mask.set(row, col, true);
                    }
                }
            }

            if let Some(t) = t_ground {
                let value = if dist.depth_scale == 1.0 && dist.depth_bias == 0.0 {
                    t
                } else {
                    (dist.depth_scale * t + dist.depth_bias).max(1e-3)
                };
                depth.set(row, col, value as f32);
            }
        }
    }

    let occupancy = rasterize_occupancy(scene, dist, occ_cfg)?;
    Ok(RenderedFrame {
        lane_mask,
        road_mask,
        vehicle_mask,
        depth,
        occupancy,
        true_vp,
    })
}

/// Voxel-center rasterization: a voxel is occupied iff its center lies inside
/// a (jittered) vehicle box or inside the road's ground slab.
pub fn rasterize_occupancy(
    scene: &SceneSpec,
    dist: &DistortionParams,
    cfg: &OccupancyConfig,
) -> Result<OccupancyGrid, SceneError> {
    dist.validate()?;
    let mut grid = OccupancyGrid::empty(cfg)
        .map_err(|e| SceneError::Config(format!("occupancy config: {e}")))?;
    let boxes: Vec<JitteredBox> = scene
        .vehicles
        .iter()
        .map(|b| JitteredBox::new(b, dist.vehicle_jitter))
        .collect();
    let (nx, ny, nz) = grid.counts();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let c = grid.voxel_center(ix, iy, iz);
                let in_slab = cfg.ground_slab > 0.0
                    && c[2] >= 0.0
                    && c[2] < cfg.ground_slab
                    && scene.road_x[0] <= c[0]
                    && c[0] <= scene.road_x[1]
                    && scene.road_y[0] <= c[1]
                    && c[1] <= scene.road_y[1];
                if in_slab || boxes.iter().any(|b| b.contains_point(&c)) {
                    grid.set(ix, iy, iz, true);
                }
            }
        }
    }
    Ok(grid)
}
