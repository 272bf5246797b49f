//! Dense numeric grids and the RLGT on-disk format.
//!
//! Every raster channel in this crate (masks, depth maps, occupancy grids,
//! latent planes) bottoms out in a [`Tensor`]: up to four row-major extents
//! over either `f32` or `u8` payloads. The RLGT file layout is normative and
//! bit-exact:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RLGT"
//! 4       1     format version (1)
//! 5       1     dtype code (0 = f32, 1 = u8)
//! 6       1     ndim (1..=4)
//! 7       3     reserved, zero
//! 10      4*n   extents, little-endian u32
//! ...           payload, little-endian, row-major
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RLGT";
pub const FORMAT_VERSION: u8 = 1;
pub const MAX_NDIM: usize = 4;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"RLGT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("dims/payload mismatch: dims promise {expected} bytes, file holds {actual}")]
    PayloadMismatch { expected: usize, actual: usize },
    #[error("invalid dims {dims:?}: {reason}")]
    InvalidDims { dims: Vec<u32>, reason: String },
    #[error("non-finite f32 value at flat index {index}")]
    NonFinite { index: usize },
    #[error("dtype mismatch: operation requires {required}")]
    Dtype { required: &'static str },
    #[error("extent {extent} not divisible by factor {factor}")]
    NotDivisible { extent: u32, factor: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(TensorError::UnknownDtype(other)),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// Row-major dense grid, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

fn check_dims(dims: &[u32], len: usize) -> Result<(), TensorError> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(TensorError::InvalidDims {
            dims: dims.to_vec(),
            reason: format!("ndim must be 1..={MAX_NDIM}"),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidDims {
            dims: dims.to_vec(),
            reason: "every extent must be >= 1".into(),
        });
    }
    let product: usize = dims.iter().map(|&d| d as usize).product();
    if product != len {
        return Err(TensorError::InvalidDims {
            dims: dims.to_vec(),
            reason: format!("extent product {product} != data length {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn from_f32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, TensorError> {
        check_dims(&dims, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor {
            dims,
            data: TensorData::F32(data),
        })
    }

    pub fn from_u8(dims: Vec<u32>, data: Vec<u8>) -> Result<Self, TensorError> {
        check_dims(&dims, data.len())?;
        Ok(Tensor {
            dims,
            data: TensorData::U8(data),
        })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

/// Writes `t` to `path` in the RLGT layout. Round-trips bit-exactly.
pub fn write_tensor(t: &Tensor, path: &Path) -> Result<(), TensorError> {
    let mut bytes = Vec::with_capacity(10 + 4 * t.dims.len() + t.len() * t.dtype().elem_size());
    bytes.extend_from_slice(&MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.push(t.dtype().code());
    bytes.push(t.dims.len() as u8);
    bytes.extend_from_slice(&[0u8; 3]);
    for &d in &t.dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(values) => {
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorData::U8(values) => bytes.extend_from_slice(values),
    }
    let io_err = |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    Ok(())
}

/// Reads an RLGT file back into a [`Tensor`]; strict inverse of [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 10 {
        return Err(TensorError::TruncatedPayload {
            expected: 10,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(TensorError::UnsupportedVersion(bytes[4]));
    }
    let dtype = Dtype::from_code(bytes[5])?;
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(TensorError::InvalidDims {
            dims: vec![],
            reason: format!("ndim byte {ndim} out of range 1..={MAX_NDIM}"),
        });
    }
    let header_len = 10 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(TensorError::TruncatedPayload {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 10 + 4 * i;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidDims {
            dims,
            reason: "every extent must be >= 1".into(),
        });
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let expected = count * dtype.elem_size();
    let actual = bytes.len() - header_len;
    if actual < expected {
        return Err(TensorError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(TensorError::PayloadMismatch { expected, actual });
    }
    let payload = &bytes[header_len..];
    match dtype {
        Dtype::F32 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { index });
            }
            Ok(Tensor {
                dims,
                data: TensorData::F32(values),
            })
        }
        Dtype::U8 => Ok(Tensor {
            dims,
            data: TensorData::U8(payload.to_vec()),
        }),
    }
}

/// Mean-pools the trailing two extents by `factor`; leading extents are batch.
///
/// Accumulates in f64 so a constant grid stays exactly constant and the global
/// mean is preserved to f32 precision. Factor 1 returns a bit-exact copy.
pub fn downsample_mean(t: &Tensor, factor: u32) -> Result<Tensor, TensorError> {
    if factor == 0 {
        return Err(TensorError::NotDivisible { extent: 0, factor });
    }
    let values = t.as_f32().ok_or(TensorError::Dtype { required: "f32" })?;
    if t.dims.len() < 2 {
        return Err(TensorError::InvalidDims {
            dims: t.dims.clone(),
            reason: "downsample needs at least 2 dims".into(),
        });
    }
    if factor == 1 {
        return Ok(t.clone());
    }
    let (rows, cols) = (t.dims[t.dims.len() - 2], t.dims[t.dims.len() - 1]);
    for extent in [rows, cols] {
        if extent % factor != 0 {
            return Err(TensorError::NotDivisible { extent, factor });
        }
    }
    let (out_rows, out_cols) = (rows / factor, cols / factor);
    let batch: usize = t.dims[..t.dims.len() - 2].iter().map(|&d| d as usize).product();
    let plane = (rows * cols) as usize;
    let block = (factor * factor) as f64;
    let mut out = Vec::with_capacity(batch * (out_rows * out_cols) as usize);
    for b in 0..batch {
        let src = &values[b * plane..(b + 1) * plane];
        for orow in 0..out_rows {
            for ocol in 0..out_cols {
                let mut acc = 0.0f64;
                for dr in 0..factor {
                    let row = (orow * factor + dr) as usize;
                    for dc in 0..factor {
                        acc += f64::from(src[row * cols as usize + (ocol * factor + dc) as usize]);
                    }
                }
                out.push((acc / block) as f32);
            }
        }
    }
    let mut dims = t.dims.clone();
    let n = dims.len();
    dims[n - 2] = out_rows;
    dims[n - 1] = out_cols;
    Tensor::from_f32(dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn header_layout_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.rlgt");
        let t = Tensor::from_f32(vec![1, 1], vec![0.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 10 fixed bytes + 2 extents * 4 + 4 payload bytes
        assert_eq!(bytes.len(), 22);
        assert_eq!(&bytes[0..4], b"RLGT");
        assert_eq!(bytes[4], 1); // version
        assert_eq!(bytes[5], 0); // f32
        assert_eq!(bytes[6], 2); // ndim
        assert_eq!(&bytes[7..10], &[0, 0, 0]);
        assert_eq!(&bytes[10..14], &1u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..22], &[0, 0, 0, 0]); // 0.0f32 little-endian
    }

    #[test]
    fn u8_mask_payload_is_row_major() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.rlgt");
        let t = Tensor::from_u8(vec![2, 2], vec![1, 0, 0, 1]).unwrap();
        write_tensor(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 0, 0, 1]);
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn bad_magic_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.rlgt");
        fs::write(&path, b"XXXX\x01\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
        match read_tensor(&path) {
            Err(TensorError::BadMagic(m)) => assert_eq!(&m, b"XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.rlgt");
        let t = Tensor::from_f32(vec![3, 4], vec![1.5f32; 12]).unwrap();
        write_tensor(&t, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(TensorError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_a_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("extra.rlgt");
        let t = Tensor::from_u8(vec![2], vec![1, 1]).unwrap();
        write_tensor(&t, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(7);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(TensorError::PayloadMismatch { .. })
        ));
    }

    #[test]
    fn unknown_dtype_and_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("odd.rlgt");
        let t = Tensor::from_u8(vec![1], vec![1]).unwrap();
        write_tensor(&t, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[5] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(TensorError::UnknownDtype(9))));
        bytes[5] = 1;
        bytes[4] = 3;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(TensorError::UnsupportedVersion(3))
        ));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            Tensor::from_f32(vec![0, 2], vec![]),
            Err(TensorError::InvalidDims { .. })
        ));
        assert!(matches!(
            Tensor::from_f32(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::InvalidDims { .. })
        ));
        assert!(matches!(
            Tensor::from_f32(vec![1], vec![f32::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn downsample_hand_case() {
        let t = Tensor::from_f32(vec![2, 2], vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        let d = downsample_mean(&t, 2).unwrap();
        assert_eq!(d.dims(), &[1, 1]);
        assert_eq!(d.as_f32().unwrap(), &[2.0]);
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let t = Tensor::from_f32(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(downsample_mean(&t, 1).unwrap(), t);
    }

    #[test]
    fn downsample_constant_stays_constant() {
        for factor in [2u32, 4] {
            let t = Tensor::from_f32(vec![8, 8], vec![0.37; 64]).unwrap();
            let d = downsample_mean(&t, factor).unwrap();
            assert!(d.as_f32().unwrap().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn downsample_rejects_indivisible_and_u8() {
        let t = Tensor::from_f32(vec![3, 3], vec![0.0; 9]).unwrap();
        assert!(matches!(
            downsample_mean(&t, 2),
            Err(TensorError::NotDivisible { extent: 3, factor: 2 })
        ));
        let m = Tensor::from_u8(vec![2, 2], vec![0; 4]).unwrap();
        assert!(matches!(downsample_mean(&m, 2), Err(TensorError::Dtype { .. })));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        let dims = prop::collection::vec(1u32..6, 1..=4);
        (dims, any::<bool>()).prop_flat_map(|(dims, is_f32)| {
            let count: usize = dims.iter().map(|&d| d as usize).product();
            if is_f32 {
                prop::collection::vec(-1e6f32..1e6, count)
                    .prop_map(move |data| Tensor::from_f32(dims.clone(), data).unwrap())
                    .boxed()
            } else {
                prop::collection::vec(any::<u8>(), count)
                    .prop_map(move |data| Tensor::from_u8(dims.clone(), data).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(t in arb_tensor()) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("t.rlgt");
            write_tensor(&t, &path).unwrap();
            let back = read_tensor(&path).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn downsample_preserves_global_mean(
            data in prop::collection::vec(-100.0f32..100.0, 64),
            factor in prop::sample::select(vec![1u32, 2, 4, 8]),
        ) {
            let t = Tensor::from_f32(vec![8, 8], data).unwrap();
            let d = downsample_mean(&t, factor).unwrap();
            let mean = |v: &[f32]| v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64;
            let (m0, m1) = (mean(t.as_f32().unwrap()), mean(d.as_f32().unwrap()));
            prop_assert!((m0 - m1).abs() <= 1e-6 * m0.abs().max(1.0));
        }
    }
}
