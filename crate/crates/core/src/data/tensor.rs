//! `MMT1` tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"MMT1" | rank: u32 | dims: rank × u32 | payload: Π dims × f32 (row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{FrameSequence, PixelGrid};

pub const MAGIC: &[u8; 4] = b"MMT1";
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Format { field: "rank", detail: format!("rank {} outside 1..={MAX_RANK}", dims.len()) });
        }
        let count = element_count(&dims)?;
        if count != data.len() {
            return Err(Error::Format {
                field: "payload",
                detail: format!("dims {dims:?} need {count} values, got {}", data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    /// Rounds `values` to `f32`.
    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Tensor::new(dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn from_frames(seq: &FrameSequence) -> Result<Self> {
        Tensor::from_f64(vec![seq.len(), seq.dim()], seq.as_slice())
    }

    pub fn from_grid(grid: &PixelGrid) -> Result<Self> {
        Tensor::from_f64(vec![grid.height(), grid.width(), grid.dim()], grid.as_slice())
    }

    /// Interprets a rank-2 `[T, D]` tensor as frames.
    pub fn to_frames(&self, source_id: &str, frame_duration: f64) -> Result<FrameSequence> {
        match self.dims[..] {
            [_, d] => FrameSequence::with_duration(self.to_f64(), d, frame_duration, source_id),
            _ => Err(Error::Format {
                field: "rank",
                detail: format!("frame tensor {source_id} must have rank 2, has {}", self.dims.len()),
            }),
        }
    }

    /// Interprets a rank-3 `[H, W, D]` tensor as an image grid.
    pub fn to_grid(&self) -> Result<PixelGrid> {
        match self.dims[..] {
            [h, w, d] => PixelGrid::new(self.to_f64(), d, h, w),
            _ => Err(Error::Format {
                field: "rank",
                detail: format!("image tensor must have rank 3, has {}", self.dims.len()),
            }),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4, "magic")? != MAGIC {
            return Err(Error::Format { field: "magic", detail: "expected MMT1".into() });
        }
        let rank = cursor.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format { field: "rank", detail: format!("rank {rank} outside 1..={MAX_RANK}") });
        }
        let dims = (0..rank).map(|_| cursor.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = element_count(&dims)?;
        let remaining = bytes.len() - cursor.pos;
        if remaining != count * 4 {
            return Err(Error::Format {
                field: "payload",
                detail: format!("expected {} payload bytes, found {remaining}", count * 4),
            });
        }
        let data = bytes[cursor.pos..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Tensor { dims, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Format { field, detail: "file ends early".into() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| if d > u32::MAX as usize { None } else { acc.checked_mul(d) })
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Format { field: "dims", detail: format!("dims {dims:?} are zero or overflow") })
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = t.encode();
        assert_eq!(&bytes[..4], b"MMT1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn corruption_names_first_bad_field() {
        let good = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32).collect()).unwrap().encode();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let field = |b: &[u8]| match Tensor::decode(b) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(field(&bad_magic), "magic");

        let mut bad_rank = good.clone();
        bad_rank[4] = 0;
        assert_eq!(field(&bad_rank), "rank");

        let mut zero_dim = good.clone();
        zero_dim[8] = 0;
        assert_eq!(field(&zero_dim), "dims");

        assert_eq!(field(&good[..good.len() - 3]), "payload");
        assert_eq!(field(&good[..10]), "dims");
        assert_eq!(field(&good[..2]), "magic");
        let mut long = good.clone();
        long.push(0);
        assert_eq!(field(&long), "payload");
    }

    #[test]
    fn frames_and_grids_round_trip_through_ranks() {
        let seq = FrameSequence::new(vec![0.5, 1.0, 1.5, 2.0], 2, "s").unwrap();
        let t = Tensor::from_frames(&seq).unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.to_frames("s", seq.frame_duration()).unwrap(), seq);
        assert!(t.to_grid().is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n as u64)
                .map(|i| f32::from_bits((seed.wrapping_mul(i + 1) >> 32) as u32))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
