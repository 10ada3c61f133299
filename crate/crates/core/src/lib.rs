//! Adversarially trained 3D semantic scene completion from a single depth
//! image, at desk scale.
//!
//! The pipeline: [`scenegen`] builds procedural rooms and renders a depth
//! image, [`tsdf`] turns the depth image into the generator input,
//! [`nets`] holds the generator and the four discriminator variants,
//! [`losses`] and [`train`] run the alternating minimax optimization,
//! [`metrics`] scores completions and [`probe`] replays the
//! label-noise experiment against trained discriminators.

pub mod cli;
pub mod dataset;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod probe;
pub mod scalar;
pub mod scenegen;
pub mod train;
pub mod tsdf;
pub mod voxcore;

pub use scalar::Scalar;
