//! Alternating minimax training: Adam on the discriminator, SGD with weight
//! decay on the generator, one-sided label smoothing, checkpoints and a CSV
//! log per step.
//!
//! Data order depends only on `(seed, step)`, so a run resumed from a
//! checkpoint replays exactly what an uninterrupted run would have done.

pub mod optim;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Sample, TsdfOptions};
use crate::losses::{self, LossConfig, LossError};
use crate::nets::checkpoint::{Checkpoint, CheckpointError};
use crate::nets::{
    tsdf_tensor, volume_tensor, Discriminator, Generator, Mode, NetError, NetKind, NetSpec, Normalization, ParamStore,
    Tensor,
};
use crate::nets::generator_forward;
use crate::voxcore::{argmax_decode, GridSpec, LabelVolume};

pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, SgdConfig};

pub const LOG_FILE: &str = "train.csv";
pub const CSV_HEADER: &str = "step,mce_sum,mce_per_voxel,disc_loss,gen_adv_term,d_real_mean,d_fake_mean,wall_ms";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Gradient(String),
    #[error("non-finite {what} at step {step}; snapshot written to {snapshot:?}")]
    NonFinite {
        step: u64,
        what: &'static str,
        snapshot: Option<PathBuf>,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvLoss {
    Global,
    Local,
}

/// How the cross-entropy enters the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Summed over voxels and batch, as the objective is written.
    Sum,
    /// Averaged over voxels and batch.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorArch {
    /// `[stem, block_1, .., block_n, head]`.
    pub widths: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        let s = NetSpec::generator(GridSpec::default());
        Self {
            widths: s.widths,
            dilations: s.dilations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorArch {
    pub widths: Vec<usize>,
    pub normalization: Normalization,
    pub leaky_slope: f64,
    pub fc_widths: Vec<usize>,
    pub single_channel: bool,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        let s = NetSpec::discriminator(GridSpec::default(), NetKind::DiscGlobal, false);
        Self {
            widths: s.widths,
            normalization: s.normalization,
            leaky_slope: s.leaky_slope,
            fc_widths: s.fc_widths,
            single_channel: s.single_channel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Generator updates.
    pub steps: u64,
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub conditional: bool,
    pub adv_loss: AdvLoss,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    /// Update the discriminator before the generator within a step.
    pub disc_first: bool,
    pub mce_reduction: Reduction,
    pub seed: u64,
    pub deterministic: bool,
    /// Write a checkpoint every this many steps (0: only first and last).
    pub checkpoint_every: u64,
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    pub tsdf: TsdfOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            steps: 500,
            sgd: SgdConfig::default(),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            conditional: true,
            adv_loss: AdvLoss::Global,
            disc_steps: 1,
            disc_first: true,
            mce_reduction: Reduction::Mean,
            seed: 0,
            deterministic: true,
            checkpoint_every: 100,
            generator: GeneratorArch::default(),
            discriminator: DiscriminatorArch::default(),
            tsdf: TsdfOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.sgd.lr > 0.0 && self.adam.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.sgd.weight_decay < 0.0 {
            return bad("weight decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || self.adam.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.disc_steps == 0 {
            return bad("disc_steps must be >= 1".into());
        }
        if !(self.tsdf.truncation_voxels > 0.0) {
            return bad("tsdf.truncation_voxels must be positive".into());
        }
        self.loss.validate()?;
        Ok(())
    }

    /// Conventional name of the variant, e.g. `SSC-cGAN-GL`.
    pub fn variant_name(&self) -> &'static str {
        match (self.conditional, self.adv_loss) {
            (false, AdvLoss::Global) => "SSC-GAN-GL",
            (false, AdvLoss::Local) => "SSC-GAN-LL",
            (true, AdvLoss::Global) => "SSC-cGAN-GL",
            (true, AdvLoss::Local) => "SSC-cGAN-LL",
        }
    }

    pub fn generator_spec(&self, grid: &GridSpec) -> NetSpec {
        let mut s = NetSpec::generator(grid.clone());
        s.widths = self.generator.widths.clone();
        s.dilations = self.generator.dilations.clone();
        s
    }

    pub fn discriminator_spec(&self, grid: &GridSpec) -> NetSpec {
        let kind = match self.adv_loss {
            AdvLoss::Global => NetKind::DiscGlobal,
            AdvLoss::Local => NetKind::DiscLocal,
        };
        let mut s = NetSpec::discriminator(grid.clone(), kind, self.conditional);
        let a = &self.discriminator;
        s.widths = a.widths.clone();
        s.normalization = a.normalization;
        s.leaky_slope = a.leaky_slope;
        s.fc_widths = a.fc_widths.clone();
        s.single_channel = a.single_channel;
        s
    }
}

/// Per-step record, one CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    /// Batch mean of the per-sample summed cross-entropy.
    pub mce_sum: f64,
    pub mce_per_voxel: f64,
    pub disc_loss: f64,
    pub gen_adv_term: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub wall_ms: f64,
}

impl StepStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.step,
            self.mce_sum,
            self.mce_per_voxel,
            self.disc_loss,
            self.gen_adv_term,
            self.d_real_mean,
            self.d_fake_mean,
            self.wall_ms
        )
    }

    /// Everything except wall time, bit for bit.
    pub fn same_values(&self, other: &Self) -> bool {
        self.step == other.step
            && self.mce_sum.to_bits() == other.mce_sum.to_bits()
            && self.mce_per_voxel.to_bits() == other.mce_per_voxel.to_bits()
            && self.disc_loss.to_bits() == other.disc_loss.to_bits()
            && self.gen_adv_term.to_bits() == other.gen_adv_term.to_bits()
            && self.d_real_mean.to_bits() == other.d_real_mean.to_bits()
            && self.d_fake_mean.to_bits() == other.d_fake_mean.to_bits()
    }
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

fn flatten(ts: &[Tensor<f32>]) -> Vec<f32> {
    ts.iter().flat_map(|t| t.data.iter().copied()).collect()
}

fn unflatten(flat: Vec<f32>, like: &[Tensor<f32>]) -> Vec<Tensor<f32>> {
    let mut out = Vec::with_capacity(like.len());
    let mut at = 0;
    for t in like {
        out.push(Tensor::from_vec(&t.shape, flat[at..at + t.len()].to_vec()));
        at += t.len();
    }
    out
}

/// Sample index for global position `pos` of the training stream: epochs
/// are independent permutations keyed by `(seed, epoch)`.
pub fn sample_index(seed: u64, n: usize, pos: u64) -> usize {
    let epoch = pos / n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm[(pos % n as u64) as usize]
}

/// Complete training state: both networks, their parameters, the Adam
/// moments and the number of completed steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub grid: GridSpec,
    pub gen: Generator<f32>,
    pub gen_params: ParamStore<f32>,
    pub disc: Discriminator<f32>,
    pub disc_params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, grid: GridSpec) -> Result<Self, TrainError> {
        config.validate()?;
        let gen = Generator::new(config.generator_spec(&grid))?;
        let disc = Discriminator::new(config.discriminator_spec(&grid))?;
        let gen_params = gen.init_params(config.seed);
        let disc_params = disc.init_params(config.seed.wrapping_add(1));
        let adam = AdamState::new(&disc_params);
        Ok(Self {
            config,
            grid,
            gen,
            gen_params,
            disc,
            disc_params,
            adam,
            step: 0,
        })
    }

    /// Indices into the dataset for the batch of the next step.
    pub fn next_batch(&self, n: usize) -> Vec<usize> {
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|i| sample_index(self.config.seed ^ 0x5eed_da7a, n, self.step * b + i))
            .collect()
    }

    fn cond_tensors(&self, batch: &[&Sample]) -> Option<Vec<Tensor<f32>>> {
        self.config
            .conditional
            .then(|| batch.iter().map(|s| volume_tensor(&self.grid, &s.cond)).collect())
    }

    /// Discriminator update on detached fakes; returns (loss, d_real mean,
    /// d_fake mean) measured before the update.
    fn disc_update(
        &mut self,
        real: &[Tensor<f32>],
        fake: &[Tensor<f32>],
        cond: Option<&[Tensor<f32>]>,
    ) -> Result<(f64, f64, f64), TrainError> {
        let cfg = self.config.loss;
        self.disc_params.zero_grad();
        let d_real = self.disc.forward(&self.disc_params, real, cond, Mode::Train)?;
        self.disc.commit_running_stats(&mut self.disc_params);
        let real_flat = flatten(&d_real);
        let g_real = losses::bce_const_grad(&real_flat, cfg.real_target(), cfg.clamp);
        self.disc.backward(&mut self.disc_params, unflatten(g_real, &d_real), false)?;

        let d_fake = self.disc.forward(&self.disc_params, fake, cond, Mode::Train)?;
        self.disc.commit_running_stats(&mut self.disc_params);
        let fake_flat = flatten(&d_fake);
        let g_fake = losses::bce_const_grad(&fake_flat, 0.0, cfg.clamp);
        self.disc.backward(&mut self.disc_params, unflatten(g_fake, &d_fake), false)?;

        let loss = losses::disc_loss(&real_flat, &fake_flat, &cfg)? as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step + 1,
                what: "discriminator loss",
                snapshot: None,
            });
        }
        self.adam.step(&mut self.disc_params, &self.config.adam)?;
        Ok((loss, mean(&real_flat), mean(&fake_flat)))
    }

    /// Generator update; returns the adversarial term value.
    fn gen_update(
        &mut self,
        probs: &[Tensor<f32>],
        batch: &[&Sample],
        cond: Option<&[Tensor<f32>]>,
    ) -> Result<f64, TrainError> {
        let cfg = self.config.loss;
        let b = batch.len();
        let voxels = self.grid.voxel_count();
        let scale = match self.config.mce_reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / (b * voxels) as f32,
        };
        let mut grads: Vec<Tensor<f32>> = probs
            .iter()
            .zip(batch)
            .map(|(p, s)| {
                let g = losses::mce_grad(&p.data, &s.one_hot, cfg.clamp).expect("shapes checked");
                Tensor::from_vec(&p.shape, g.into_iter().map(|v| v * scale).collect())
            })
            .collect();
        let mut adv = 0.0;
        if cfg.lambda > 0.0 {
            // The discriminator is frozen here: its gradients are discarded
            // and its running statistics are not committed.
            let d_fake = self.disc.forward(&self.disc_params, probs, cond, Mode::Train)?;
            let flat = flatten(&d_fake);
            adv = losses::gen_adv_term(&flat, &cfg) as f64;
            let g = losses::gen_adv_term_grad(&flat, &cfg);
            let gx = self
                .disc
                .backward(&mut self.disc_params, unflatten(g, &d_fake), true)?
                .expect("input gradient requested");
            for (acc, g) in grads.iter_mut().zip(&gx) {
                acc.add_assign(g);
            }
            self.disc_params.zero_grad();
        }
        // Re-record the generator pass that produced `probs`.
        let xs: Vec<Tensor<f32>> = batch.iter().map(|s| tsdf_tensor(&s.tsdf)).collect();
        self.gen_params.zero_grad();
        if !self.gen.has_recording() {
            self.gen.forward(&self.gen_params, &xs)?;
        }
        self.gen.backward(&mut self.gen_params, &grads)?;
        sgd_step(&mut self.gen_params, self.config.sgd.lr, self.config.sgd.weight_decay)?;
        Ok(adv)
    }

    /// One generator update (plus `disc_steps` discriminator updates).
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepStats, TrainError> {
        if batch.len() != self.config.batch_size {
            return Err(TrainError::Config(format!(
                "batch of {} samples, config expects {}",
                batch.len(),
                self.config.batch_size
            )));
        }
        let start = Instant::now();
        let xs: Vec<Tensor<f32>> = batch.iter().map(|s| tsdf_tensor(&s.tsdf)).collect();
        let probs = self.gen.forward(&self.gen_params, &xs)?;
        let voxels = self.grid.voxel_count() as f64;
        let mut mce_total = 0.0;
        for (p, s) in probs.iter().zip(batch) {
            mce_total += losses::mce(&p.data, &s.one_hot, self.config.loss.clamp)? as f64;
        }
        let mce_sum = mce_total / batch.len() as f64;
        if !mce_sum.is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step + 1,
                what: "cross-entropy",
                snapshot: None,
            });
        }
        let real: Vec<Tensor<f32>> = batch.iter().map(|s| volume_tensor(&self.grid, &s.one_hot)).collect();
        let cond = self.cond_tensors(batch);

        let mut disc_stats = (0.0, 0.0, 0.0);
        let adv;
        if self.config.disc_first {
            for k in 0..self.config.disc_steps {
                let s = self.disc_update(&real, &probs, cond.as_deref())?;
                if k == 0 {
                    disc_stats = s;
                }
            }
            adv = self.gen_update(&probs, batch, cond.as_deref())?;
        } else {
            adv = self.gen_update(&probs, batch, cond.as_deref())?;
            for k in 0..self.config.disc_steps {
                let s = self.disc_update(&real, &probs, cond.as_deref())?;
                if k == 0 {
                    disc_stats = s;
                }
            }
        }
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            mce_sum,
            mce_per_voxel: mce_sum / voxels,
            disc_loss: disc_stats.0,
            gen_adv_term: adv,
            d_real_mean: disc_stats.1,
            d_fake_mean: disc_stats.2,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "grid": self.grid,
            "generator": self.gen.spec(),
            "discriminator": self.disc.spec(),
            "adam_t": self.adam.t,
            "tool_version": env!("CARGO_PKG_VERSION"),
        });
        let mut ck = Checkpoint::new(self.step, meta);
        ck.put_store("gen", &self.gen_params);
        ck.put_store("disc", &self.disc_params);
        for ((name, p), (m, v)) in self.disc_params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            ck.put(format!("adam.m/{name}"), &p.shape, m.clone());
            ck.put(format!("adam.v/{name}"), &p.shape, v.clone());
        }
        ck
    }

    /// Restores the complete state written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let config: TrainConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let grid: GridSpec = serde_json::from_value(ck.meta["grid"].clone())?;
        let mut t = Self::new(config, grid)?;
        ck.load_store("gen", &mut t.gen_params)?;
        ck.load_store("disc", &mut t.disc_params)?;
        t.adam.t = ck.meta["adam_t"].as_u64().unwrap_or(0);
        for (i, name) in t.disc_params.names().into_iter().enumerate() {
            t.adam.m[i] = ck.get(&format!("adam.m/{name}"))?.data.clone();
            t.adam.v[i] = ck.get(&format!("adam.v/{name}"))?.data.clone();
        }
        t.step = ck.step;
        Ok(t)
    }
}

/// Argmax labels of the generator for each sample, carrying the sample's
/// visibility mask.
pub fn predict_labels(
    gen: &Generator<f32>,
    params: &ParamStore<f32>,
    samples: &[Sample],
) -> Result<Vec<LabelVolume>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let prob = generator_forward(gen, params, &s.tsdf)?;
            Ok(argmax_decode(&prob, Some(&s.labels.visibility)).map_err(NetError::from)?)
        })
        .collect()
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ssck")
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub stats: Vec<StepStats>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

/// Runs `config.steps` steps (counting any already completed by `resume`),
/// writing checkpoints and `train.csv` into `out`.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    out: &Path,
    resume: Option<Trainer>,
) -> Result<TrainSummary, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    let mut trainer = match resume {
        Some(t) => t,
        None => Trainer::new(config.clone(), data.grid.clone())?,
    };
    fs::create_dir_all(out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = if trainer.step == 0 {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "{CSV_HEADER}")?;
        f
    } else {
        // Drop rows beyond the resumed step so the log stays one row per step.
        let text = fs::read_to_string(&log_path).unwrap_or_else(|_| format!("{CSV_HEADER}\n"));
        let keep: Vec<&str> = text.lines().take(1 + trainer.step as usize).collect();
        let mut f = fs::File::create(&log_path)?;
        for line in keep {
            writeln!(f, "{line}")?;
        }
        f
    };
    let mut checkpoints = Vec::new();
    let save = |t: &Trainer, list: &mut Vec<PathBuf>| -> Result<PathBuf, TrainError> {
        let p = out.join(checkpoint_name(t.step));
        t.checkpoint().save(&p)?;
        list.push(p.clone());
        Ok(p)
    };
    if trainer.step == 0 {
        save(&trainer, &mut checkpoints)?;
    }
    let mut stats = Vec::new();
    let n = data.len();
    while trainer.step < config.steps {
        let idx = trainer.next_batch(n);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
        let s = match trainer.train_step(&batch) {
            Ok(s) => s,
            Err(TrainError::NonFinite { step, what, .. }) => {
                let p = out.join("diverged.ssck");
                trainer.checkpoint().save(&p)?;
                return Err(TrainError::NonFinite {
                    step,
                    what,
                    snapshot: Some(p),
                });
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", s.csv_row())?;
        stats.push(s);
        let every = config.checkpoint_every;
        if (every > 0 && trainer.step % every == 0) || trainer.step == config.steps {
            save(&trainer, &mut checkpoints)?;
        }
    }
    log.flush()?;
    let final_checkpoint = out.join(checkpoint_name(trainer.step));
    if !final_checkpoint.exists() {
        save(&trainer, &mut checkpoints)?;
    }
    Ok(TrainSummary {
        stats,
        checkpoints,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::SceneConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            steps: 3,
            generator: GeneratorArch {
                widths: vec![4, 4, 4],
                dilations: vec![1],
            },
            discriminator: DiscriminatorArch {
                widths: vec![4, 4, 4, 4],
                fc_widths: vec![8, 8],
                ..DiscriminatorArch::default()
            },
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n: u64) -> Dataset {
        let cfg = SceneConfig::for_grid(GridSpec::cube(12, 4));
        Dataset::synthesize(&cfg, &(0..n).collect::<Vec<_>>(), &TsdfOptions::default()).unwrap()
    }

    #[test]
    fn sample_order_is_a_permutation_per_epoch() {
        let mut seen: Vec<usize> = (0..7).map(|p| sample_index(3, 7, p)).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let e1: Vec<usize> = (7..14).map(|p| sample_index(3, 7, p)).collect();
        let e0: Vec<usize> = (0..7).map(|p| sample_index(3, 7, p)).collect();
        assert_ne!(e0, e1);
    }

    #[test]
    fn step_is_deterministic_and_updates_both_nets() {
        let data = tiny_data(3);
        let mut a = Trainer::new(tiny_config(), data.grid.clone()).unwrap();
        let mut b = a.clone();
        let (g0, d0) = (a.gen_params.content_hash(), a.disc_params.content_hash());
        for _ in 0..2 {
            let idx = a.next_batch(data.len());
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
            let sa = a.train_step(&batch).unwrap();
            let sb = b.train_step(&batch).unwrap();
            assert!(sa.same_values(&sb));
            assert!(sa.d_real_mean > 0.0 && sa.d_real_mean < 1.0);
            assert!(sa.d_fake_mean > 0.0 && sa.d_fake_mean < 1.0);
        }
        assert_eq!(a.gen_params.content_hash(), b.gen_params.content_hash());
        assert_ne!(a.gen_params.content_hash(), g0);
        assert_ne!(a.disc_params.content_hash(), d0);
    }

    #[test]
    fn lambda_zero_gives_pure_cross_entropy_generator_step() {
        let data = tiny_data(2);
        let mut cfg = tiny_config();
        cfg.loss.lambda = 0.0;
        let mut t = Trainer::new(cfg, data.grid.clone()).unwrap();
        let batch: Vec<&Sample> = data.samples.iter().collect();
        let start = t.clone();
        let d0 = t.disc_params.content_hash();
        t.train_step(&batch).unwrap();
        assert_ne!(t.disc_params.content_hash(), d0);

        // Reference: cross-entropy only step from the same state.
        let mut r = start;
        let xs: Vec<Tensor<f32>> = batch.iter().map(|s| tsdf_tensor(&s.tsdf)).collect();
        let probs = r.gen.forward(&r.gen_params, &xs).unwrap();
        let n = (batch.len() * r.grid.voxel_count()) as f32;
        let grads: Vec<Tensor<f32>> = probs
            .iter()
            .zip(&batch)
            .map(|(p, s)| {
                let g = losses::mce_grad(&p.data, &s.one_hot, 1e-7).unwrap();
                Tensor::from_vec(&p.shape, g.into_iter().map(|v| v * (1.0 / n)).collect())
            })
            .collect();
        r.gen_params.zero_grad();
        r.gen.backward(&mut r.gen_params, &grads).unwrap();
        sgd_step(&mut r.gen_params, 0.01, 0.0005).unwrap();
        assert_eq!(r.gen_params.content_hash(), t.gen_params.content_hash());
    }

    #[test]
    fn train_writes_log_and_checkpoints_and_resumes_exactly() {
        let data = tiny_data(3);
        let mut cfg = tiny_config();
        cfg.steps = 4;
        cfg.checkpoint_every = 2;
        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&cfg, &data, full_dir.path(), None).unwrap();
        let log = fs::read_to_string(full_dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 5);
        assert!(full_dir.path().join(checkpoint_name(0)).exists());
        assert!(full_dir.path().join(checkpoint_name(2)).exists());

        let ck = Checkpoint::load(full_dir.path().join(checkpoint_name(2))).unwrap();
        let resumed = Trainer::from_checkpoint(&ck).unwrap();
        let part_dir = tempfile::tempdir().unwrap();
        let part = train(&cfg, &data, part_dir.path(), Some(resumed)).unwrap();
        assert_eq!(part.stats.len(), 2);
        for (a, b) in part.stats.iter().zip(&full.stats[2..]) {
            assert!(a.same_values(b));
        }
        let a = Checkpoint::load(&full.final_checkpoint).unwrap();
        let b = Checkpoint::load(&part.final_checkpoint).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn zero_steps_writes_only_initial_checkpoint() {
        let data = tiny_data(2);
        let mut cfg = tiny_config();
        cfg.steps = 0;
        let dir = tempfile::tempdir().unwrap();
        let s = train(&cfg, &data, dir.path(), None).unwrap();
        assert_eq!(s.checkpoints.len(), 1);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss.lambda = -1.0;
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
