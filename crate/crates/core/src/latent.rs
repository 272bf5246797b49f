//! Latent-plane plumbing: mean-pooled soft channels standing in for an
//! encoded frame, a deterministic threshold/upsample decode standing in for
//! a micro-decoder, and the linear noise interpolation
//! z_k = (1 - k/T) z0 + (k/T) eps used to simulate denoising noise levels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::raster::{BinaryMask, DepthMap};
use crate::scene::RenderedFrame;
use crate::tensor::downsample_mean;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("render extents {width}x{height} not divisible by factor {factor}")]
    Dimension { width: u32, height: u32, factor: u32 },
    #[error("step {k} outside trajectory range 0..={t_total}")]
    Range { k: u32, t_total: u32 },
}

pub const DEFAULT_DECODE_THRESH: f64 = 0.5;

/// Three soft channels at reduced resolution: lane occupancy in [0,1],
/// depth in meters (0 where the block had no defined depth), vehicle
/// occupancy in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    pub height: u32,
    pub width: u32,
    pub scale_factor: u32,
    pub lane: Vec<f64>,
    pub depth: Vec<f64>,
    pub vehicle: Vec<f64>,
}

impl LatentFrame {
    pub fn len(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Masks and depth recovered from a latent at render resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPerception {
    pub lane_mask: BinaryMask,
    pub vehicle_mask: BinaryMask,
    pub depth: DepthMap,
}

/// Mean-pools the frame's channels into a latent. Masks are cast to f32 and
/// block-averaged; depth averages only the defined pixels of each block.
pub fn project_to_latent(frame: &RenderedFrame, factor: u32) -> Result<LatentFrame, LatentError> {
    let (w, h) = (frame.lane_mask.width(), frame.lane_mask.height());
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(LatentError::Dimension {
            width: w,
            height: h,
            factor,
        });
    }
    let pool_mask = |mask: &BinaryMask| -> Vec<f64> {
        let t = downsample_mean(&mask.to_f32_tensor(), factor).expect("divisibility checked");
        t.as_f32().unwrap().iter().map(|&v| f64::from(v)).collect()
    };
    let lane = pool_mask(&frame.lane_mask);
    let vehicle = pool_mask(&frame.vehicle_mask);

    let (lw, lh) = (w / factor, h / factor);
    let mut depth = Vec::with_capacity((lw * lh) as usize);
    for br in 0..lh {
        for bc in 0..lw {
            let (mut acc, mut n) = (0.0f64, 0u32);
            for dr in 0..factor {
                for dc in 0..factor {
                    let (r, c) = (br * factor + dr, bc * factor + dc);
                    if frame.depth.defined(r, c) {
                        acc += f64::from(frame.depth.get(r, c));
                        n += 1;
                    }
                }
            }
            depth.push(if n > 0 { acc / f64::from(n) } else { 0.0 });
        }
    }

    Ok(LatentFrame {
        height: lh,
        width: lw,
        scale_factor: factor,
        lane,
        depth,
        vehicle,
    })
}

/// Thresholds the soft channels at `thresh` (strictly greater) and
/// nearest-neighbor upsamples everything back to render resolution.
///
/// Depth decodes value-exactly where positive; an exact 0 stays the
/// undefined sentinel (so a clean round trip is lossless), while negative
/// values — which only noise can produce — clamp to a 1 mm worst-case depth.
/// Keeping those pixels defined keeps depth statistics continuous in the
/// latent instead of letting noise reshuffle the averaged pixel set.
pub fn decode_latent(z: &LatentFrame, thresh: f64) -> DecodedPerception {
    let f = z.scale_factor;
    let (w, h) = (z.width * f, z.height * f);
    let mut lane_mask = BinaryMask::zeros(w, h);
    let mut vehicle_mask = BinaryMask::zeros(w, h);
    let mut depth = DepthMap::undefined(w, h);
    for r in 0..h {
        for c in 0..w {
            let i = (r / f) as usize * z.width as usize + (c / f) as usize;
            if z.lane[i] > thresh {
                lane_mask.set(r, c, true);
            }
            if z.vehicle[i] > thresh {
                vehicle_mask.set(r, c, true);
            }
            if z.depth[i] > 0.0 {
                depth.set(r, c, z.depth[i] as f32);
            } else if z.depth[i] < 0.0 {
                depth.set(r, c, 1e-3);
            }
        }
    }
    DecodedPerception {
        lane_mask,
        vehicle_mask,
        depth,
    }
}

/// A clean latent paired with its seeded unit-Gaussian noise field and the
/// total step count T.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub z0: LatentFrame,
    pub eps: LatentFrame,
    pub t_total: u32,
}

/// Paper-calibrated total step count.
pub const DEFAULT_T_TOTAL: u32 = 30;

impl LatentTrajectory {
    /// Draws the noise endpoint from `noise_seed`; channel order is
    /// lane, depth, vehicle so a seed pins every sample.
    pub fn new(z0: LatentFrame, noise_seed: u64, t_total: u32) -> Self {
        assert!(t_total >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let n = z0.len();
        let mut draw = |count: usize| -> Vec<f64> {
            (0..count)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let eps = LatentFrame {
            height: z0.height,
            width: z0.width,
            scale_factor: z0.scale_factor,
            lane: draw(n),
            depth: draw(n),
            vehicle: draw(n),
        };
        LatentTrajectory { z0, eps, t_total }
    }
}

/// z_k = (1 - k/T) z0 + (k/T) eps; the endpoints return bit-exact clones.
pub fn flow_interpolate(traj: &LatentTrajectory, k: u32) -> Result<LatentFrame, LatentError> {
    if k > traj.t_total {
        return Err(LatentError::Range {
            k,
            t_total: traj.t_total,
        });
    }
    if k == 0 {
        return Ok(traj.z0.clone());
    }
    if k == traj.t_total {
        return Ok(traj.eps.clone());
    }
    let alpha = f64::from(k) / f64::from(traj.t_total);
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(x, e)| (1.0 - alpha) * x + alpha * e)
            .collect()
    };
    Ok(LatentFrame {
        height: traj.z0.height,
        width: traj.z0.width,
        scale_factor: traj.z0.scale_factor,
        lane: mix(&traj.z0.lane, &traj.eps.lane),
        depth: mix(&traj.z0.depth, &traj.eps.depth),
        vehicle: mix(&traj.z0.vehicle, &traj.eps.vehicle),
    })
}
