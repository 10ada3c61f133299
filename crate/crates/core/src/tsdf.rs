//! Projective TSDF encoding of a depth image at generator-input resolution,
//! and the label-resolution conditioning channel derived from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegen::DepthImage;
use crate::voxcore::{GridSpec, VoxelError};

#[derive(Debug, Error, PartialEq)]
pub enum TsdfError {
    #[error("truncation must be positive and finite, got {0}")]
    Truncation(f64),
    #[error("depth pixel {0} is not a finite non-negative value")]
    BadDepth(usize),
    #[error("volume has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsdfEncoding {
    /// `clamp(d - z, -tau, tau) / tau`.
    #[default]
    Plain,
    /// `sign(v) * (1 - |v|)` of the plain value, strongest at the surface.
    Flipped,
}

/// Single-channel volume at `input_scale` times the label resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    /// Label-resolution grid this volume belongs to.
    pub spec: GridSpec,
    pub truncation: f64,
    pub values: Vec<f32>,
}

impl TsdfVolume {
    pub fn input_dims(&self) -> [usize; 3] {
        self.spec.input_grid().dims()
    }
}

/// Default truncation: three voxel edges at label resolution.
pub fn default_truncation(spec: &GridSpec) -> f64 {
    3.0 * spec.voxel_size
}

pub fn depth_to_tsdf(
    depth: &DepthImage,
    spec: &GridSpec,
    truncation: f64,
) -> Result<TsdfVolume, TsdfError> {
    depth_to_tsdf_with(depth, spec, truncation, TsdfEncoding::Plain)
}

/// Voxels that project outside the image, behind the camera or onto a
/// pixel without a return get -1 (same as far behind a surface).
pub fn depth_to_tsdf_with(
    depth: &DepthImage,
    spec: &GridSpec,
    truncation: f64,
    encoding: TsdfEncoding,
) -> Result<TsdfVolume, TsdfError> {
    spec.validate()?;
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(TsdfError::Truncation(truncation));
    }
    if let Some(i) = depth
        .depths
        .iter()
        .position(|d| !(d.is_finite() && *d >= 0.0))
    {
        return Err(TsdfError::BadDepth(i));
    }
    let grid = spec.input_grid();
    let mut values = Vec::with_capacity(grid.voxel_count());
    for i in 0..grid.height {
        for j in 0..grid.width {
            for k in 0..grid.depth {
                let plain = match depth.camera.project(grid.voxel_center(i, j, k)) {
                    Some(p) => {
                        let d = depth.at(p.u, p.v) as f64;
                        if d > 0.0 {
                            (d - p.z).clamp(-truncation, truncation) / truncation
                        } else {
                            -1.0
                        }
                    }
                    None => -1.0,
                };
                let v = match encoding {
                    TsdfEncoding::Plain => plain,
                    TsdfEncoding::Flipped => {
                        let sign = if plain >= 0.0 { 1.0 } else { -1.0 };
                        sign * (1.0 - plain.abs())
                    }
                };
                values.push(v as f32);
            }
        }
    }
    Ok(TsdfVolume {
        spec: spec.clone(),
        truncation,
        values,
    })
}

/// Averages `s x s x s` blocks of the input-resolution TSDF down to label
/// resolution. Identity for `s = 1`.
pub fn condition_channel(tsdf: &TsdfVolume, spec: &GridSpec) -> Result<Vec<f32>, TsdfError> {
    let s = spec.input_scale;
    let [h, w, d] = spec.dims();
    let (fw, fd) = (w * s, d * s);
    let expected = h * w * d * s * s * s;
    if tsdf.values.len() != expected {
        return Err(TsdfError::ShapeMismatch {
            expected,
            got: tsdf.values.len(),
        });
    }
    if s == 1 {
        return Ok(tsdf.values.clone());
    }
    let norm = 1.0 / (s * s * s) as f64;
    let mut out = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            for k in 0..d {
                let mut acc = 0.0f64;
                for a in 0..s {
                    for b in 0..s {
                        let row = ((i * s + a) * fw + j * s + b) * fd + k * s;
                        acc += tsdf.values[row..row + s]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                }
                out.push((acc * norm) as f32);
            }
        }
    }
    Ok(out)
}
