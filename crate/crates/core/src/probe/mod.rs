//! Label-noise probe for trained discriminators: corrupt the occluded part
//! of ground-truth volumes, present them as real, and record the
//! discriminator's cross-entropy against the "real" target as noise grows.

mod chart;

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::losses::{bce_const, DEFAULT_CLAMP};
use crate::nets::checkpoint::{Checkpoint, CheckpointError};
use crate::nets::{volume_tensor, Discriminator, NetError, NetSpec, ParamStore};
use crate::voxcore::{one_hot_encode, LabelVolume, Visibility, VoxelError};

pub use chart::render_svg;

pub const DEFAULT_LEVELS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("noise fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
    #[error("scene {0} has no visibility mask")]
    NoVisibility(u64),
    #[error("checkpoint {0} holds no discriminator spec")]
    NotADiscriminator(String),
    #[error("checkpoint grid does not match the dataset")]
    GridMismatch,
    #[error("nothing to probe: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Replaces the labels of exactly `floor(p * |occluded|)` occluded voxels,
/// chosen uniformly without replacement, with a label drawn uniformly from
/// the other `C - 1` classes. Everything else is copied.
pub fn inject_label_noise(gt: &LabelVolume, p: f64, seed: u64) -> Result<LabelVolume, ProbeError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ProbeError::Fraction(p));
    }
    let occluded: Vec<usize> = gt
        .visibility
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == Visibility::Occluded)
        .map(|(i, _)| i)
        .collect();
    // The small slack keeps products like 0.3 * 100 from flooring to 29.
    let count = ((p * occluded.len() as f64) + 1e-9).floor() as usize;
    let count = count.min(occluded.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = gt.clone();
    let others = gt.spec.num_classes as u8 - 1;
    for pick in index::sample(&mut rng, occluded.len(), count).into_vec() {
        let i = occluded[pick];
        let cur = out.labels[i];
        let r = rng.gen_range(0..others);
        out.labels[i] = if r >= cur { r + 1 } else { r };
    }
    Ok(out)
}

/// A frozen discriminator taken from a training checkpoint.
#[derive(Clone, Debug)]
pub struct ProbeTarget {
    pub name: String,
    pub variant: String,
    pub disc: Discriminator<f32>,
    pub params: ParamStore<f32>,
}

impl ProbeTarget {
    pub fn from_checkpoint(name: impl Into<String>, ck: &Checkpoint) -> Result<Self, ProbeError> {
        let name = name.into();
        if ck.meta.get("discriminator").is_none() {
            return Err(ProbeError::NotADiscriminator(name));
        }
        let spec: NetSpec = serde_json::from_value(ck.meta["discriminator"].clone())?;
        let disc = Discriminator::new(spec)?;
        let mut params = disc.init_params(0);
        ck.load_store("disc", &mut params)?;
        let variant = variant_of(disc.spec());
        Ok(Self {
            name,
            variant,
            disc,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        let name = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| format!("{}/{}", n.to_string_lossy(), path.file_name().unwrap_or_default().to_string_lossy()))
            .unwrap_or_else(|| path.display().to_string());
        Self::from_checkpoint(name, &Checkpoint::load(path)?)
    }

    /// `bce(d(volume | cond), 1)` for one labeled volume.
    pub fn real_loss(&self, labels: &LabelVolume, cond: &[f32]) -> Result<f64, ProbeError> {
        let grid = &self.disc.spec().grid;
        let v = volume_tensor(grid, &one_hot_encode::<f32>(labels)?.values);
        let c = self.disc.spec().conditional.then(|| vec![volume_tensor(grid, cond)]);
        let out = self.disc.infer(&self.params, &[v], c.as_deref())?;
        Ok(bce_const(&out[0].data, 1.0, DEFAULT_CLAMP) as f64)
    }
}

fn variant_of(spec: &NetSpec) -> String {
    let c = if spec.conditional { "cGAN" } else { "GAN" };
    let l = match spec.kind {
        crate::nets::NetKind::DiscLocal => "LL",
        _ => "GL",
    };
    format!("SSC-{c}-{l}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub checkpoint: String,
    pub variant: String,
    pub p: f64,
    /// Mean over all (scene, seed) losses.
    pub mean: f64,
    /// Population standard deviation over the same values.
    pub std: f64,
    /// Mean over scenes, one entry per seed.
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub checkpoint: String,
    pub variant: String,
    /// Spearman correlation between noise level and per-seed mean loss.
    pub per_seed: Vec<(u64, f64)>,
    /// Spearman correlation of the seed-averaged curve.
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<CurveRow>,
    pub trends: Vec<Trend>,
}

/// Scene-specific noise seed, independent across levels and seeds.
fn noise_seed(seed: u64, scene: u64, level: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene.wrapping_mul(1024).wrapping_add(level as u64));
    rng.gen()
}

pub fn noise_curve(targets: &[ProbeTarget], data: &Dataset, levels: &[f64], seeds: &[u64]) -> Result<Curve, ProbeError> {
    if targets.is_empty() || levels.is_empty() || seeds.is_empty() {
        return Err(ProbeError::Empty("need checkpoints, levels and seeds"));
    }
    if data.is_empty() {
        return Err(ProbeError::Empty("dataset"));
    }
    if let Some(s) = data.samples.iter().find(|s| !s.has_visibility) {
        return Err(ProbeError::NoVisibility(s.seed));
    }
    for &p in levels {
        if !(0.0..=1.0).contains(&p) {
            return Err(ProbeError::Fraction(p));
        }
    }
    let mut rows = Vec::new();
    let mut trends = Vec::new();
    for t in targets {
        let g = &t.disc.spec().grid;
        if g.dims() != data.grid.dims() || g.num_classes != data.grid.num_classes {
            return Err(ProbeError::GridMismatch);
        }
        let mut seed_curves = vec![Vec::with_capacity(levels.len()); seeds.len()];
        for (li, &p) in levels.iter().enumerate() {
            let mut all = Vec::new();
            for (si, &seed) in seeds.iter().enumerate() {
                let losses = data
                    .samples
                    .par_iter()
                    .map(|s| {
                        let noisy = inject_label_noise(&s.labels, p, noise_seed(seed, s.seed, li))?;
                        t.real_loss(&noisy, &s.cond)
                    })
                    .collect::<Result<Vec<f64>, ProbeError>>()?;
                seed_curves[si].push(losses.iter().sum::<f64>() / losses.len() as f64);
                all.extend(losses);
            }
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
            rows.push(CurveRow {
                checkpoint: t.name.clone(),
                variant: t.variant.clone(),
                p,
                mean,
                std: var.sqrt(),
                per_seed: seed_curves.iter().map(|c| c[li]).collect(),
            });
        }
        let means: Vec<f64> = rows[rows.len() - levels.len()..].iter().map(|r| r.mean).collect();
        trends.push(Trend {
            checkpoint: t.name.clone(),
            variant: t.variant.clone(),
            per_seed: seeds.iter().zip(&seed_curves).map(|(&s, c)| (s, spearman(levels, c))).collect(),
            overall: spearman(levels, &means),
        });
    }
    Ok(Curve {
        levels: levels.to_vec(),
        seeds: seeds.to_vec(),
        rows,
        trends,
    })
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("checkpoint,variant,p,mean_bce,std_bce");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}", r.checkpoint, r.variant, r.p, r.mean, r.std));
            for v in &r.per_seed {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `curve.csv`, `curve.svg` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ProbeError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("curve.csv"), self.to_csv())?;
        fs::write(dir.join("curve.svg"), render_svg(self))?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
