//! Image-plane and voxel rasters built on top of [`Tensor`](crate::tensor::Tensor).
//!
//! Masks are u8 grids restricted to {0,1}; depth maps are f32 with the
//! sentinel 0.0 meaning "no depth here" (excluded from every statistic);
//! occupancy grids are {0,1} voxel fields with metric placement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("mask value {value} at index {index} is not 0/1")]
    NotBinary { index: usize, value: u8 },
    #[error("depth value {value} at index {index} must be finite and >= 0")]
    BadDepth { index: usize, value: f32 },
    #[error("expected a {expected} tensor of rank {rank}, got dims {dims:?}")]
    Shape {
        expected: &'static str,
        rank: usize,
        dims: Vec<u32>,
    },
    #[error("voxel_size must be > 0, got {0}")]
    VoxelSize(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Row-major binary image, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self, RasterError> {
        assert_eq!(bits.len(), (width as usize) * (height as usize));
        if let Some(index) = bits.iter().position(|&b| b > 1) {
            return Err(RasterError::NotBinary {
                index,
                value: bits[index],
            });
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize] == 1
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, on: bool) {
        self.bits[row as usize * self.width as usize + col as usize] = u8::from(on);
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn same_extents(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// True when every set pixel of `inner` is also set here.
    pub fn contains(&self, inner: &BinaryMask) -> bool {
        self.same_extents(inner)
            && self
                .bits
                .iter()
                .zip(&inner.bits)
                .all(|(&outer, &i)| i == 0 || outer == 1)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_u8(vec![self.height, self.width], self.bits.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, RasterError> {
        let dims = t.dims();
        let values = t.as_u8().ok_or(RasterError::Shape {
            expected: "u8",
            rank: 2,
            dims: dims.to_vec(),
        })?;
        if dims.len() != 2 {
            return Err(RasterError::Shape {
                expected: "u8",
                rank: 2,
                dims: dims.to_vec(),
            });
        }
        BinaryMask::from_bits(dims[1], dims[0], values.to_vec())
    }

    /// Casts bits to an f32 tensor (`1.0`/`0.0`) for mean-pooling.
    pub fn to_f32_tensor(&self) -> Tensor {
        let data: Vec<f32> = self.bits.iter().map(|&b| f32::from(b)).collect();
        Tensor::from_f32(vec![self.height, self.width], data).unwrap()
    }
}

/// Per-pixel depth along the camera's optical axis, in meters.
///
/// 0.0 is the "undefined" sentinel; statistics skip those pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depths: Vec<f32>,
}

impl DepthMap {
    pub fn undefined(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            depths: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_values(width: u32, height: u32, depths: Vec<f32>) -> Result<Self, RasterError> {
        assert_eq!(depths.len(), (width as usize) * (height as usize));
        if let Some(index) = depths.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(RasterError::BadDepth {
                index,
                value: depths[index],
            });
        }
        Ok(DepthMap {
            width,
            height,
            depths,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> f32 {
        self.depths[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, depth: f32) {
        self.depths[row as usize * self.width as usize + col as usize] = depth;
    }

    #[inline]
    pub fn defined(&self, row: u32, col: u32) -> bool {
        self.get(row, col) > 0.0
    }

    pub fn values(&self) -> &[f32] {
        &self.depths
    }

    pub fn same_extents(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.height, self.width], self.depths.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, RasterError> {
        let dims = t.dims();
        let values = t.as_f32().ok_or(RasterError::Shape {
            expected: "f32",
            rank: 2,
            dims: dims.to_vec(),
        })?;
        if dims.len() != 2 {
            return Err(RasterError::Shape {
                expected: "f32",
                rank: 2,
                dims: dims.to_vec(),
            });
        }
        DepthMap::from_values(dims[1], dims[0], values.to_vec())
    }
}

/// Geometry of an occupancy grid: where it sits and how fine it is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyConfig {
    /// World position of the grid's min corner, meters (x, y, z).
    pub origin: [f64; 3],
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    pub voxel_size: f64,
    /// Height of the occupied ground slab above z=0; 0 disables it.
    pub ground_slab: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        OccupancyConfig {
            origin: [-8.0, 2.0, 0.0],
            nx: 32,
            ny: 120,
            nz: 8,
            voxel_size: 0.5,
            ground_slab: 0.5,
        }
    }
}

/// Binary voxel field over an axis-aligned metric box.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    nx: u32,
    ny: u32,
    nz: u32,
    origin: [f64; 3],
    voxel_size: f64,
    occ: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(cfg: &OccupancyConfig) -> Result<Self, RasterError> {
        if cfg.voxel_size <= 0.0 {
            return Err(RasterError::VoxelSize(cfg.voxel_size));
        }
        let count = cfg.nx as usize * cfg.ny as usize * cfg.nz as usize;
        assert!(cfg.nx >= 1 && cfg.ny >= 1 && cfg.nz >= 1);
        Ok(OccupancyGrid {
            nx: cfg.nx,
            ny: cfg.ny,
            nz: cfg.nz,
            origin: cfg.origin,
            voxel_size: cfg.voxel_size,
            occ: vec![0; count],
        })
    }

    pub fn counts(&self) -> (u32, u32, u32) {
        (self.nx, self.ny, self.nz)
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    #[inline]
    fn index(&self, ix: u32, iy: u32, iz: u32) -> usize {
        ((ix as usize * self.ny as usize) + iy as usize) * self.nz as usize + iz as usize
    }

    #[inline]
    pub fn get(&self, ix: u32, iy: u32, iz: u32) -> bool {
        self.occ[self.index(ix, iy, iz)] == 1
    }

    #[inline]
    pub fn set(&mut self, ix: u32, iy: u32, iz: u32, on: bool) {
        let i = self.index(ix, iy, iz);
        self.occ[i] = u8::from(on);
    }

    /// World-space center of voxel (ix, iy, iz).
    pub fn voxel_center(&self, ix: u32, iy: u32, iz: u32) -> [f64; 3] {
        [
            self.origin[0] + (f64::from(ix) + 0.5) * self.voxel_size,
            self.origin[1] + (f64::from(iy) + 0.5) * self.voxel_size,
            self.origin[2] + (f64::from(iz) + 0.5) * self.voxel_size,
        ]
    }

    pub fn occ(&self) -> &[u8] {
        &self.occ
    }

    pub fn count_occupied(&self) -> usize {
        self.occ.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_geometry(&self, other: &OccupancyGrid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.nz == other.nz
            && self.origin == other.origin
            && self.voxel_size == other.voxel_size
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_u8(vec![self.nx, self.ny, self.nz], self.occ.clone()).unwrap()
    }

    /// Rebuilds a grid from a voxel tensor plus the metric placement that the
    /// tensor file cannot carry.
    pub fn from_tensor(t: &Tensor, origin: [f64; 3], voxel_size: f64) -> Result<Self, RasterError> {
        let dims = t.dims();
        let values = t.as_u8().ok_or(RasterError::Shape {
            expected: "u8",
            rank: 3,
            dims: dims.to_vec(),
        })?;
        if dims.len() != 3 {
            return Err(RasterError::Shape {
                expected: "u8",
                rank: 3,
                dims: dims.to_vec(),
            });
        }
        if voxel_size <= 0.0 {
            return Err(RasterError::VoxelSize(voxel_size));
        }
        if let Some(index) = values.iter().position(|&v| v > 1) {
            return Err(RasterError::NotBinary {
                index,
                value: values[index],
            });
        }
        Ok(OccupancyGrid {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            origin,
            voxel_size,
            occ: values.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rejects_non_binary() {
        assert!(matches!(
            BinaryMask::from_bits(2, 1, vec![0, 2]),
            Err(RasterError::NotBinary { index: 1, value: 2 })
        ));
    }

    #[test]
    fn mask_tensor_roundtrip() {
        let mut m = BinaryMask::zeros(3, 2);
        m.set(0, 1, true);
        m.set(1, 2, true);
        let back = BinaryMask::from_tensor(&m.to_tensor()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn depth_rejects_negative_and_nan() {
        assert!(DepthMap::from_values(2, 1, vec![1.0, -0.5]).is_err());
        assert!(DepthMap::from_values(1, 1, vec![f32::NAN]).is_err());
        let d = DepthMap::from_values(2, 1, vec![0.0, 3.0]).unwrap();
        assert!(!d.defined(0, 0));
        assert!(d.defined(0, 1));
    }

    #[test]
    fn grid_indexing_and_centers() {
        let cfg = OccupancyConfig {
            origin: [0.0, 0.0, 0.0],
            nx: 2,
            ny: 3,
            nz: 4,
            voxel_size: 1.0,
            ground_slab: 0.0,
        };
        let mut g = OccupancyGrid::empty(&cfg).unwrap();
        g.set(1, 2, 3, true);
        assert!(g.get(1, 2, 3));
        assert_eq!(g.count_occupied(), 1);
        assert_eq!(g.voxel_center(0, 0, 0), [0.5, 0.5, 0.5]);
        assert_eq!(g.voxel_center(1, 2, 3), [1.5, 2.5, 3.5]);
        let back = OccupancyGrid::from_tensor(&g.to_tensor(), cfg.origin, cfg.voxel_size).unwrap();
        assert!(back.same_geometry(&g));
        assert_eq!(back, g);
    }
}
