//! Trains an unconditional and a conditional global-loss model briefly,
//! then measures how each discriminator's real-label loss responds to label
//! noise in the occluded region. Writes curve.csv, curve.svg and
//! summary.json.
//!
//! cargo run --release --example noise_probe -- [out_dir] [steps]

use std::env;
use std::path::PathBuf;

use sscgan::dataset::{Dataset, Sample, TsdfOptions};
use sscgan::probe::{noise_curve, ProbeTarget, DEFAULT_LEVELS};
use sscgan::scenegen::SceneConfig;
use sscgan::train::{TrainConfig, Trainer};
use sscgan::voxcore::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "probe".into()));
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);

    let grid = GridSpec::default();
    let seeds: Vec<u64> = (0..8).collect();
    let data = Dataset::synthesize(&SceneConfig::for_grid(grid.clone()), &seeds, &TsdfOptions::default())?;
    let mut targets = Vec::new();
    for conditional in [false, true] {
        let config = TrainConfig { steps, conditional, ..TrainConfig::default() };
        let name = config.variant_name();
        let mut t = Trainer::new(config, grid.clone())?;
        while t.step < steps {
            let idx = t.next_batch(data.len());
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
            t.train_step(&batch)?;
        }
        println!("trained {name} for {steps} steps");
        targets.push(ProbeTarget::from_checkpoint(name, &t.checkpoint())?);
    }

    let curve = noise_curve(&targets, &data, &DEFAULT_LEVELS, &[1, 2, 3])?;
    for row in &curve.rows {
        println!("{:12} p={:.2}  bce {:.4} +- {:.4}", row.variant, row.p, row.mean, row.std);
    }
    for t in &curve.trends {
        println!("{}: spearman {:.3}, per seed {:?}", t.variant, t.overall, t.per_seed);
    }
    curve.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
