//! Dense voxel grids: the label volume (ground truth), one-hot and
//! probability volumes, and the grid geometry they share.
//!
//! Arrays are row-major. Spatial index order is `(i, j, k)` over
//! `(height, width, depth)`; class-indexed arrays put the class axis first,
//! i.e. `values[c * H*W*D + (i * W + j) * D + k]`.
//!
//! World coordinates follow the same axis order: world axis 0 is vertical
//! ("up"), axes 1 and 2 are horizontal. Voxel `(i, j, k)` covers
//! `origin + voxel_size * [i, i+1) x [j, j+1) x [k, k+1)`.

pub mod sscv;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Class index reserved for empty space.
pub const EMPTY: u8 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("label {label} at voxel {index} is outside [0, {max}]")]
    LabelOutOfRange { index: usize, label: u8, max: usize },
    #[error("shape mismatch: expected {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite probability at element {0}")]
    NonFinite(usize),
    #[error("class distribution at voxel {index} sums to {sum}")]
    NotNormalized { index: usize, sum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// Number of classes including class 0 (empty).
    pub num_classes: usize,
    /// Meters per voxel edge at label resolution.
    pub voxel_size: f64,
    /// World position of the corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
    /// Generator input resolution divided by label resolution.
    pub input_scale: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: 24,
            width: 24,
            depth: 24,
            num_classes: 6,
            voxel_size: 0.1,
            origin: [0.0; 3],
            input_scale: 1,
        }
    }
}

impl GridSpec {
    pub fn cube(n: usize, num_classes: usize) -> Self {
        Self {
            height: n,
            width: n,
            depth: n,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        if self.height == 0 || self.width == 0 || self.depth == 0 {
            return Err(VoxelError::InvalidGrid(format!(
                "dimensions must be positive, got {:?}",
                self.dims()
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(VoxelError::InvalidGrid(format!(
                "num_classes must be in [2, 256], got {}",
                self.num_classes
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(VoxelError::InvalidGrid(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.input_scale == 0 {
            return Err(VoxelError::InvalidGrid("input_scale must be >= 1".into()));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(VoxelError::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.depth]
    }

    pub fn voxel_count(&self) -> usize {
        self.height * self.width * self.depth
    }

    pub fn divisible_by(&self, factor: usize) -> bool {
        self.dims().iter().all(|d| d % factor == 0)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.width + j) * self.depth + k
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.depth;
        let j = (index / self.depth) % self.width;
        let i = index / (self.depth * self.width);
        [i, j, k]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.voxel_size;
        [
            self.origin[0] + (i as f64 + 0.5) * s,
            self.origin[1] + (j as f64 + 0.5) * s,
            self.origin[2] + (k as f64 + 0.5) * s,
        ]
    }

    /// The grid at generator-input resolution: same origin and extent,
    /// `input_scale` times finer.
    pub fn input_grid(&self) -> GridSpec {
        let s = self.input_scale;
        GridSpec {
            height: self.height * s,
            width: self.width * s,
            depth: self.depth * s,
            num_classes: self.num_classes,
            voxel_size: self.voxel_size / s as f64,
            origin: self.origin,
            input_scale: 1,
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        let d = self.dims();
        [
            d[0] as f64 * self.voxel_size,
            d[1] as f64 * self.voxel_size,
            d[2] as f64 * self.voxel_size,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Visibility {
    Observed = 0,
    Occluded = 1,
    OutOfView = 2,
}

impl Visibility {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Observed),
            1 => Some(Self::Occluded),
            2 => Some(Self::OutOfView),
            _ => None,
        }
    }
}

/// Ground-truth (or decoded) semantic labels plus the visibility mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub spec: GridSpec,
    pub labels: Vec<u8>,
    pub visibility: Vec<Visibility>,
}

impl LabelVolume {
    /// All-empty volume with every voxel marked occluded.
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.voxel_count();
        Self {
            spec,
            labels: vec![EMPTY; n],
            visibility: vec![Visibility::Occluded; n],
        }
    }

    pub fn new(
        spec: GridSpec,
        labels: Vec<u8>,
        visibility: Vec<Visibility>,
    ) -> Result<Self, VoxelError> {
        let v = Self {
            spec,
            labels,
            visibility,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        self.spec.validate()?;
        let n = self.spec.voxel_count();
        if self.labels.len() != n {
            return Err(VoxelError::ShapeMismatch {
                expected: n,
                got: self.labels.len(),
            });
        }
        if self.visibility.len() != n {
            return Err(VoxelError::ShapeMismatch {
                expected: n,
                got: self.visibility.len(),
            });
        }
        let max = self.spec.num_classes - 1;
        if let Some((index, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize > max)
        {
            return Err(VoxelError::LabelOutOfRange { index, label, max });
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.spec.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u8) {
        let idx = self.spec.index(i, j, k);
        self.labels[idx] = label;
    }

    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.get(i, j, k) != EMPTY
    }

    /// Voxel counts per class, length `num_classes`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.spec.num_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Counts of (observed, occluded, out of view).
    pub fn visibility_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &v in &self.visibility {
            c[v as usize] += 1;
        }
        c
    }
}

/// One-hot encoded labels, class axis first.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotVolume<T = f32> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// Per-voxel class distribution, class axis first.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume<T = f32> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

impl<T: Scalar> ProbabilityVolume<T> {
    /// Wraps raw values, checking finiteness and per-voxel normalization.
    pub fn new(spec: GridSpec, values: Vec<T>) -> Result<Self, VoxelError> {
        let n = spec.voxel_count();
        let c = spec.num_classes;
        if values.len() != n * c {
            return Err(VoxelError::ShapeMismatch {
                expected: n * c,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VoxelError::NonFinite(i));
        }
        for v in 0..n {
            let sum: f64 = (0..c).map(|ci| values[ci * n + v].as_f64()).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(VoxelError::NotNormalized { index: v, sum });
            }
        }
        Ok(Self { spec, values })
    }

    /// Class distribution of a single voxel.
    pub fn distribution(&self, voxel: usize) -> Vec<T> {
        let n = self.spec.voxel_count();
        (0..self.spec.num_classes)
            .map(|c| self.values[c * n + voxel])
            .collect()
    }
}

pub fn one_hot_encode<T: Scalar>(labels: &LabelVolume) -> Result<OneHotVolume<T>, VoxelError> {
    labels.validate()?;
    let n = labels.spec.voxel_count();
    let mut values = vec![T::zero(); n * labels.spec.num_classes];
    for (v, &l) in labels.labels.iter().enumerate() {
        values[l as usize * n + v] = T::one();
    }
    Ok(OneHotVolume {
        spec: labels.spec.clone(),
        values,
    })
}

/// Per-voxel argmax with ties going to the smallest class index.
///
/// Without a visibility mask every voxel is marked occluded.
pub fn argmax_decode<T: Scalar>(
    prob: &ProbabilityVolume<T>,
    visibility: Option<&[Visibility]>,
) -> Result<LabelVolume, VoxelError> {
    let n = prob.spec.voxel_count();
    let c = prob.spec.num_classes;
    if prob.values.len() != n * c {
        return Err(VoxelError::ShapeMismatch {
            expected: n * c,
            got: prob.values.len(),
        });
    }
    if let Some(i) = prob.values.iter().position(|v| v.is_nan()) {
        return Err(VoxelError::NonFinite(i));
    }
    let visibility = match visibility {
        Some(mask) if mask.len() != n => {
            return Err(VoxelError::ShapeMismatch {
                expected: n,
                got: mask.len(),
            })
        }
        Some(mask) => mask.to_vec(),
        None => vec![Visibility::Occluded; n],
    };
    let labels = (0..n)
        .map(|v| {
            let mut best = 0usize;
            let mut best_p = prob.values[v];
            for ci in 1..c {
                let p = prob.values[ci * n + v];
                if p > best_p {
                    best = ci;
                    best_p = p;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelVolume {
        spec: prob.spec.clone(),
        labels,
        visibility,
    })
}

/// Binary occupancy: `true` wherever the label is not empty.
pub fn occupancy_of(labels: &LabelVolume) -> Vec<bool> {
    labels.labels.iter().map(|&l| l != EMPTY).collect()
}
