//! Generator and discriminator networks with hand-written backward passes.
//!
//! The generator is an SSCNet-style fully convolutional network: a strided
//! stem that brings the TSDF input down to label resolution, residual blocks
//! of dilated 3D convolutions, a concatenation of every stage's features,
//! two pointwise convolutions, and a per-voxel softmax.
//!
//! Discriminators share a convolutional trunk of four blocks
//! (convolution, normalization, leaky ReLU) whose strides compose to a 12x
//! reduction:
//!
//! | block | channels | kernel | stride |
//! |-------|----------|--------|--------|
//! | 1     | 32       | 3      | 2      |
//! | 2     | 64       | 3      | 2      |
//! | 3     | 32       | 3      | 3      |
//! | 4     | 16       | 1      | 1      |
//!
//! The global variant flattens the trunk output (5x3x5x16 = 1200 features
//! for a 60x36x60 grid) into fully connected layers 256, 128, 1 and a
//! sigmoid. The local variant maps the trunk output to one logit per class
//! channel, upsamples trilinearly by 12 back to the input size, and applies
//! a sigmoid per element. Conditional variants receive the label-resolution
//! TSDF as one extra input channel.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod params;
pub mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discriminator::Discriminator;
pub use generator::Generator;
pub use layers::{Mode, Normalization};
pub use params::{Param, ParamKind, ParamStore};
pub use tensor::Tensor;

use crate::scalar::Scalar;
use crate::tsdf::TsdfVolume;
use crate::voxcore::{GridSpec, OneHotVolume, ProbabilityVolume, VoxelError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter store does not match the network layout")]
    Layout,
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("conditional discriminator requires a conditioning channel")]
    MissingCondition,
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Generator,
    DiscGlobal,
    DiscLocal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    pub kind: NetKind,
    pub conditional: bool,
    /// Generator: `[stem, block_1, .., block_n, head]`.
    /// Discriminators: one width per trunk block.
    pub widths: Vec<usize>,
    pub normalization: Normalization,
    pub leaky_slope: f64,
    pub grid: GridSpec,
    /// Generator: one dilation per residual block.
    pub dilations: Vec<usize>,
    /// Discriminator trunk kernels, one per block.
    pub kernels: Vec<usize>,
    /// Discriminator trunk strides, one per block.
    pub strides: Vec<usize>,
    /// Global discriminator fully connected widths before the final logit.
    pub fc_widths: Vec<usize>,
    /// Local discriminator: one output channel instead of `C`.
    pub single_channel: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self::generator(GridSpec::default())
    }
}

impl NetSpec {
    pub fn generator(grid: GridSpec) -> Self {
        Self {
            kind: NetKind::Generator,
            conditional: false,
            widths: vec![16, 16, 16, 16, 32],
            normalization: Normalization::None,
            leaky_slope: 0.2,
            grid,
            dilations: vec![1, 2, 2],
            kernels: Vec::new(),
            strides: Vec::new(),
            fc_widths: Vec::new(),
            single_channel: false,
        }
    }

    pub fn discriminator(grid: GridSpec, kind: NetKind, conditional: bool) -> Self {
        Self {
            kind,
            conditional,
            widths: vec![32, 64, 32, 16],
            normalization: Normalization::Instance,
            leaky_slope: 0.2,
            grid,
            dilations: Vec::new(),
            kernels: vec![3, 3, 3, 1],
            strides: vec![2, 2, 3, 1],
            fc_widths: vec![256, 128],
            single_channel: false,
        }
    }

    /// Spatial reduction of the discriminator trunk.
    pub fn reduction(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.grid.validate()?;
        if self.widths.iter().any(|&w| w == 0) {
            return Err(NetError::Config("channel widths must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(NetError::Config(format!(
                "leaky ReLU slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        match self.kind {
            NetKind::Generator => {
                if self.widths.len() != self.dilations.len() + 2 {
                    return Err(NetError::Config(format!(
                        "generator needs {} widths (stem, {} blocks, head), got {}",
                        self.dilations.len() + 2,
                        self.dilations.len(),
                        self.widths.len()
                    )));
                }
                if self.dilations.iter().any(|&d| d == 0) {
                    return Err(NetError::Config("dilations must be positive".into()));
                }
                if self.normalization != Normalization::None {
                    return Err(NetError::Config(
                        "the generator has no normalization layers".into(),
                    ));
                }
            }
            NetKind::DiscGlobal | NetKind::DiscLocal => {
                let n = self.widths.len();
                if n == 0 || self.kernels.len() != n || self.strides.len() != n {
                    return Err(NetError::Config(
                        "discriminator needs matching widths, kernels and strides".into(),
                    ));
                }
                if self.kernels.iter().any(|&k| k == 0 || k % 2 == 0)
                    || self.strides.iter().any(|&s| s == 0)
                {
                    return Err(NetError::Config("kernels must be odd, strides positive".into()));
                }
                let r = self.reduction();
                if !self.grid.divisible_by(r) {
                    let hint = if self.kind == NetKind::DiscGlobal {
                        "; use the local discriminator or a grid whose dimensions are multiples of it"
                    } else {
                        "; choose a grid whose dimensions are multiples of it"
                    };
                    return Err(NetError::Config(format!(
                        "grid {:?} is not divisible by the trunk reduction {r}{hint}",
                        self.grid.dims()
                    )));
                }
                if self.kind == NetKind::DiscGlobal && self.fc_widths.iter().any(|&w| w == 0) {
                    return Err(NetError::Config("fully connected widths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Elements entering the first fully connected layer of the global
    /// discriminator: `last_width * (H/r) * (W/r) * (D/r)`.
    pub fn flatten_width(&self) -> usize {
        let r = self.reduction();
        let last = *self.widths.last().unwrap_or(&0);
        self.grid.dims().iter().map(|d| d / r).product::<usize>() * last
    }
}

/// Wraps a TSDF volume as a single-sample network input.
pub fn tsdf_tensor<T: Scalar>(x: &TsdfVolume) -> Tensor<T> {
    let d = x.input_dims();
    Tensor::from_vec(
        &[1, d[0], d[1], d[2]],
        x.values.iter().map(|&v| T::of(v as f64)).collect(),
    )
}

pub fn volume_tensor<T: Scalar>(spec: &GridSpec, values: &[T]) -> Tensor<T> {
    let d = spec.dims();
    Tensor::from_vec(&[values.len() / spec.voxel_count(), d[0], d[1], d[2]], values.to_vec())
}

pub fn one_hot_tensor<T: Scalar>(v: &OneHotVolume<T>) -> Tensor<T> {
    volume_tensor(&v.spec, &v.values)
}

pub fn cond_tensor<T: Scalar>(spec: &GridSpec, cond: &[f32]) -> Tensor<T> {
    let d = spec.dims();
    Tensor::from_vec(
        &[1, d[0], d[1], d[2]],
        cond.iter().map(|&v| T::of(v as f64)).collect(),
    )
}

/// `g(x)`: evaluates the generator on one TSDF volume.
pub fn generator_forward<T: Scalar>(
    net: &Generator<T>,
    params: &ParamStore<T>,
    x: &TsdfVolume,
) -> Result<ProbabilityVolume<T>, NetError> {
    let out = net.infer(params, &[tsdf_tensor(x)])?;
    let t = out.into_iter().next().expect("one sample");
    Ok(ProbabilityVolume::new(net.spec().grid.clone(), t.data)?)
}

/// `d(x, y)` of the global discriminator for one volume.
pub fn disc_global_forward<T: Scalar>(
    net: &Discriminator<T>,
    params: &ParamStore<T>,
    volume: &Tensor<T>,
    cond: Option<&Tensor<T>>,
) -> Result<T, NetError> {
    if net.spec().kind != NetKind::DiscGlobal {
        return Err(NetError::Config("not a global discriminator".into()));
    }
    let cond = cond.map(|c| vec![c.clone()]);
    let out = net.infer(params, &[volume.clone()], cond.as_deref())?;
    Ok(out[0].data[0])
}

/// Per-element real/fake probabilities of the local discriminator.
pub fn disc_local_forward<T: Scalar>(
    net: &Discriminator<T>,
    params: &ParamStore<T>,
    volume: &Tensor<T>,
    cond: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NetError> {
    if net.spec().kind != NetKind::DiscLocal {
        return Err(NetError::Config("not a local discriminator".into()));
    }
    let cond = cond.map(|c| vec![c.clone()]);
    let mut out = net.infer(params, &[volume.clone()], cond.as_deref())?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_width_formula() {
        let g = GridSpec {
            height: 60,
            width: 36,
            depth: 60,
            ..GridSpec::default()
        };
        let spec = NetSpec::discriminator(g, NetKind::DiscGlobal, false);
        spec.validate().unwrap();
        assert_eq!(spec.flatten_width(), 1200);
        let spec = NetSpec::discriminator(GridSpec::default(), NetKind::DiscGlobal, true);
        assert_eq!(spec.flatten_width(), 128);
    }

    #[test]
    fn indivisible_grid_is_rejected_with_hint() {
        let spec = NetSpec::discriminator(GridSpec::cube(20, 4), NetKind::DiscGlobal, false);
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("local discriminator"), "{msg}");
        let spec = NetSpec::discriminator(GridSpec::cube(20, 4), NetKind::DiscLocal, false);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn generator_spec_checks_widths() {
        let mut spec = NetSpec::generator(GridSpec::default());
        spec.validate().unwrap();
        spec.widths.pop();
        assert!(spec.validate().is_err());
        let mut spec = NetSpec::generator(GridSpec::default());
        spec.leaky_slope = 1.5;
        assert!(spec.validate().is_err());
    }
}
