//! `SSCV` voxel container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "SSCV"
//! version    u16      1
//! dtype      u16      0 = u8 labels, 1 = f32 values
//! C H W D    4 x u32  class count (labels) or channel count (f32)
//! has_vis    u8       0 or 1
//! payload             u8:  H*W*D labels, then H*W*D visibility codes if has_vis
//!                     f32: C*H*W*D values, channel-major, then H*W*D
//!                          visibility codes if has_vis
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{GridSpec, LabelVolume, Visibility, VoxelError};

pub const MAGIC: &[u8; 4] = b"SSCV";
pub const VERSION: u16 = 1;
const DTYPE_U8: u16 = 0;
const DTYPE_F32: u16 = 1;

#[derive(Debug, Error)]
pub enum SscvError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("unknown dtype code {0}")]
    Dtype(u16),
    #[error("invalid visibility code {0}")]
    VisibilityCode(u8),
    #[error("truncated payload")]
    Truncated,
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SscvPayload {
    Labels(Vec<u8>),
    Values(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SscvFile {
    /// Class count for label payloads, channel count for f32 payloads.
    pub channels: u32,
    pub dims: [u32; 3],
    pub payload: SscvPayload,
    pub visibility: Option<Vec<Visibility>>,
}

impl SscvFile {
    pub fn from_labels(vol: &LabelVolume) -> Self {
        let d = vol.spec.dims();
        Self {
            channels: vol.spec.num_classes as u32,
            dims: [d[0] as u32, d[1] as u32, d[2] as u32],
            payload: SscvPayload::Labels(vol.labels.clone()),
            visibility: Some(vol.visibility.clone()),
        }
    }

    pub fn from_values(channels: usize, dims: [usize; 3], values: Vec<f32>) -> Self {
        Self {
            channels: channels as u32,
            dims: [dims[0] as u32, dims[1] as u32, dims[2] as u32],
            payload: SscvPayload::Values(values),
            visibility: None,
        }
    }

    fn voxels(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    /// Rebuilds a label volume. Geometry not stored in the container
    /// (voxel size, origin, input scale) is taken from `template`.
    pub fn into_labels(self, template: &GridSpec) -> Result<LabelVolume, SscvError> {
        let spec = GridSpec {
            height: self.dims[0] as usize,
            width: self.dims[1] as usize,
            depth: self.dims[2] as usize,
            num_classes: self.channels as usize,
            ..template.clone()
        };
        let n = spec.voxel_count();
        let labels = match self.payload {
            SscvPayload::Labels(l) => l,
            SscvPayload::Values(_) => return Err(SscvError::Dtype(DTYPE_F32)),
        };
        let visibility = self
            .visibility
            .unwrap_or_else(|| vec![Visibility::Occluded; n]);
        Ok(LabelVolume::new(spec, labels, visibility)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let dtype = match self.payload {
            SscvPayload::Labels(_) => DTYPE_U8,
            SscvPayload::Values(_) => DTYPE_F32,
        };
        w.write_all(&dtype.to_le_bytes())?;
        w.write_all(&self.channels.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[self.visibility.is_some() as u8])?;
        match &self.payload {
            SscvPayload::Labels(l) => w.write_all(l)?,
            SscvPayload::Values(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        if let Some(vis) = &self.visibility {
            let codes: Vec<u8> = vis.iter().map(|&v| v as u8).collect();
            w.write_all(&codes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SscvError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(SscvError::BadMagic(magic));
        }
        let version = read_u16(&mut r)?;
        if version != VERSION {
            return Err(SscvError::Version(version));
        }
        let dtype = read_u16(&mut r)?;
        let channels = read_u32(&mut r)?;
        let dims = [read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?];
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let voxels: usize = dims.iter().map(|&d| d as usize).product();
        let payload = match dtype {
            DTYPE_U8 => {
                let mut labels = vec![0u8; voxels];
                read_exact(&mut r, &mut labels)?;
                SscvPayload::Labels(labels)
            }
            DTYPE_F32 => {
                let count = voxels * channels as usize;
                let mut raw = vec![0u8; count * 4];
                read_exact(&mut r, &mut raw)?;
                SscvPayload::Values(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                )
            }
            other => return Err(SscvError::Dtype(other)),
        };
        let visibility = if flag[0] != 0 {
            let mut codes = vec![0u8; voxels];
            read_exact(&mut r, &mut codes)?;
            Some(
                codes
                    .into_iter()
                    .map(|c| Visibility::from_u8(c).ok_or(SscvError::VisibilityCode(c)))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let file = Self {
            channels,
            dims,
            payload,
            visibility,
        };
        debug_assert_eq!(file.voxels(), voxels);
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SscvError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SscvError> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), SscvError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SscvError::Truncated,
        _ => SscvError::Io(e),
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, SscvError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SscvError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
