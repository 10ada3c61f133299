//! On-disk synthetic datasets: per-scene SSCV labels, 16-bit depth PGM and
//! camera JSON, tied together by `manifest.json`. Loading recomputes the
//! TSDF input from depth and camera.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegen::{self, io as scene_io, SceneConfig, SceneError, SceneSample};
use crate::tsdf::{condition_channel, depth_to_tsdf_with, TsdfEncoding, TsdfError, TsdfVolume};
use crate::voxcore::sscv::{SscvError, SscvFile};
use crate::voxcore::{one_hot_encode, GridSpec, LabelVolume, VoxelError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Sscv { path: PathBuf, source: SscvError },
    #[error("{path}: malformed manifest: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("dataset is empty")]
    Empty,
    #[error("scene {seed}: {reason}")]
    Inconsistent { seed: u64, reason: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How the generator input is derived from a depth image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsdfOptions {
    /// Truncation in label-resolution voxel edges.
    pub truncation_voxels: f64,
    pub encoding: TsdfEncoding,
}

impl Default for TsdfOptions {
    fn default() -> Self {
        Self {
            truncation_voxels: 3.0,
            encoding: TsdfEncoding::Plain,
        }
    }
}

impl TsdfOptions {
    pub fn truncation(&self, grid: &GridSpec) -> f64 {
        self.truncation_voxels * grid.voxel_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub labels: String,
    pub depth: String,
    pub camera: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsdf: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_config: SceneConfig,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Generates scenes for `seeds` and writes them under `out`, returning the
/// manifest (also written as `out/manifest.json`). `emit_tsdf` additionally
/// stores each input volume as an f32 SSCV file.
pub fn write_dataset(
    config: &SceneConfig,
    seeds: &[u64],
    out: &Path,
    emit_tsdf: Option<TsdfOptions>,
) -> Result<Manifest, DatasetError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let entries = seeds
        .par_iter()
        .map(|&seed| -> Result<ManifestEntry, DatasetError> {
            let sample = scenegen::synthesize(&config.clone().with_seed(seed))?;
            let entry = ManifestEntry {
                seed,
                labels: format!("scene_{seed}.sscv"),
                depth: format!("depth_{seed}.pgm"),
                camera: format!("camera_{seed}.json"),
                tsdf: emit_tsdf.map(|_| format!("tsdf_{seed}.sscv")),
            };
            let p = out.join(&entry.labels);
            SscvFile::from_labels(&sample.labels)
                .save(&p)
                .map_err(|source| DatasetError::Sscv { path: p, source })?;
            let p = out.join(&entry.depth);
            scene_io::write_depth(&p, &sample.depth).map_err(io_err(&p))?;
            let p = out.join(&entry.camera);
            scene_io::write_camera(&p, &sample.depth.camera).map_err(io_err(&p))?;
            if let (Some(opts), Some(name)) = (emit_tsdf, &entry.tsdf) {
                let t = depth_to_tsdf_with(&sample.depth, &config.grid, opts.truncation(&config.grid), opts.encoding)?;
                let p = out.join(name);
                SscvFile::from_values(1, t.input_dims(), t.values)
                    .save(&p)
                    .map_err(|source| DatasetError::Sscv { path: p, source })?;
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        scene_config: config.clone(),
        scenes: entries,
    };
    manifest.save(out.join(MANIFEST))?;
    Ok(manifest)
}

/// One training or evaluation example, fully prepared.
#[derive(Clone, Debug)]
pub struct Sample {
    pub seed: u64,
    pub labels: LabelVolume,
    /// False when the label file carried no visibility mask.
    pub has_visibility: bool,
    pub tsdf: TsdfVolume,
    /// Label-resolution conditioning channel.
    pub cond: Vec<f32>,
    pub one_hot: Vec<f32>,
}

impl Sample {
    pub fn prepare(
        seed: u64,
        labels: LabelVolume,
        depth: &scenegen::DepthImage,
        opts: &TsdfOptions,
    ) -> Result<Self, DatasetError> {
        let grid = &labels.spec;
        let tsdf = depth_to_tsdf_with(depth, grid, opts.truncation(grid), opts.encoding)?;
        let cond = condition_channel(&tsdf, grid)?;
        let one_hot = one_hot_encode::<f32>(&labels)?.values;
        Ok(Self {
            seed,
            labels,
            has_visibility: true,
            tsdf,
            cond,
            one_hot,
        })
    }

    pub fn from_scene(sample: &SceneSample, opts: &TsdfOptions) -> Result<Self, DatasetError> {
        Self::prepare(sample.seed, sample.labels.clone(), &sample.depth, opts)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub grid: GridSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Reads every scene of a manifest; paths are relative to its directory.
    pub fn load(manifest_path: impl AsRef<Path>, opts: &TsdfOptions) -> Result<Self, DatasetError> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, dir, opts)
    }

    pub fn from_manifest(manifest: &Manifest, dir: &Path, opts: &TsdfOptions) -> Result<Self, DatasetError> {
        if manifest.scenes.is_empty() {
            return Err(DatasetError::Empty);
        }
        let grid = manifest.scene_config.grid.clone();
        let samples = manifest
            .scenes
            .par_iter()
            .map(|e| -> Result<Sample, DatasetError> {
                let p = dir.join(&e.labels);
                let file = SscvFile::load(&p).map_err(|source| DatasetError::Sscv { path: p.clone(), source })?;
                let has_visibility = file.visibility.is_some();
                let labels = file
                    .into_labels(&grid)
                    .map_err(|source| DatasetError::Sscv { path: p, source })?;
                if labels.spec != grid {
                    return Err(DatasetError::Inconsistent {
                        seed: e.seed,
                        reason: format!(
                            "label grid {:?} with {} classes does not match the manifest",
                            labels.spec.dims(),
                            labels.spec.num_classes
                        ),
                    });
                }
                let (dp, cp) = (dir.join(&e.depth), dir.join(&e.camera));
                let depth = scene_io::read_depth(&dp, &cp).map_err(io_err(&dp))?;
                let mut s = Sample::prepare(e.seed, labels, &depth, opts)?;
                s.has_visibility = has_visibility;
                Ok(s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid, samples })
    }

    /// Builds a dataset in memory without touching the filesystem.
    pub fn synthesize(config: &SceneConfig, seeds: &[u64], opts: &TsdfOptions) -> Result<Self, DatasetError> {
        if seeds.is_empty() {
            return Err(DatasetError::Empty);
        }
        let samples = seeds
            .par_iter()
            .map(|&seed| {
                let s = scenegen::synthesize(&config.clone().with_seed(seed))?;
                Sample::from_scene(&s, opts)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            grid: config.grid.clone(),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
