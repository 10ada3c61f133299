//! Shows that stopping and resuming from a checkpoint reproduces an
//! uninterrupted run bit for bit.
//!
//! cargo run --release --example resume_training -- [steps]

use std::env;

use sscgan::dataset::{Dataset, Sample, TsdfOptions};
use sscgan::nets::checkpoint::Checkpoint;
use sscgan::scenegen::SceneConfig;
use sscgan::train::{GeneratorArch, TrainConfig, Trainer};
use sscgan::voxcore::GridSpec;

fn run(t: &mut Trainer, data: &Dataset, until: u64) -> Result<(), Box<dyn std::error::Error>> {
    while t.step < until {
        let idx = t.next_batch(data.len());
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
        t.train_step(&batch)?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(6);
    let grid = GridSpec::cube(12, 4);
    let data = Dataset::synthesize(&SceneConfig::for_grid(grid.clone()), &[0, 1, 2, 3, 4], &TsdfOptions::default())?;
    let config = TrainConfig {
        steps,
        generator: GeneratorArch { widths: vec![8, 8, 8, 8, 16], dilations: vec![1, 2, 2] },
        ..TrainConfig::default()
    };

    let mut straight = Trainer::new(config.clone(), grid.clone())?;
    run(&mut straight, &data, steps)?;

    let mut first = Trainer::new(config, grid)?;
    run(&mut first, &data, steps / 2)?;
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
    run(&mut resumed, &data, steps)?;

    let a = straight.checkpoint().hash();
    let b = resumed.checkpoint().hash();
    println!("uninterrupted {a}\nresumed       {b}");
    println!("{}", if a == b { "identical" } else { "DIFFERENT" });
    Ok(())
}
