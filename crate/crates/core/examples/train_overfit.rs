//! Overfits a small synthetic dataset with the conditional global-loss
//! variant and scores the training set.
//!
//! cargo run --release --example train_overfit -- [steps] [scenes] [lambda]

use std::env;

use sscgan::dataset::{Dataset, Sample, TsdfOptions};
use sscgan::metrics::{majority_baseline, Accumulator, Region};
use sscgan::scenegen::SceneConfig;
use sscgan::train::{predict_labels, TrainConfig, Trainer};
use sscgan::voxcore::{GridSpec, LabelVolume};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().skip(1).collect();
    let steps: u64 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let scenes: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let lambda: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(1.0);

    let grid = GridSpec::default();
    let data = Dataset::synthesize(&SceneConfig::for_grid(grid.clone()), &(0..scenes).collect::<Vec<_>>(), &TsdfOptions::default())?;
    let mut config = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    config.loss.lambda = lambda;
    println!("{} on {} scenes, {} steps", config.variant_name(), data.len(), steps);
    let mut trainer = Trainer::new(config, grid)?;
    let mut first = None;
    while trainer.step < steps {
        let idx = trainer.next_batch(data.len());
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
        let s = trainer.train_step(&batch)?;
        first.get_or_insert(s.mce_per_voxel);
        if s.step % 25 == 0 || s.step == 1 {
            println!(
                "step {:4}  mce/voxel {:.4}  disc {:.4}  d_real {:.3}  d_fake {:.3}  {:.0} ms",
                s.step, s.mce_per_voxel, s.disc_loss, s.d_real_mean, s.d_fake_mean, s.wall_ms
            );
        }
    }
    let preds = predict_labels(&trainer.gen, &trainer.gen_params, &data.samples)?;
    let mut acc = Accumulator::new(data.grid.num_classes, Region::Occluded);
    for (p, s) in preds.iter().zip(&data.samples) {
        acc.add(p, &s.labels)?;
    }
    let report = acc.report();
    let gts: Vec<&LabelVolume> = data.samples.iter().map(|s| &s.labels).collect();
    let baseline = majority_baseline(&gts, Region::Occluded)?;
    println!("SC  precision {:.3} recall {:.3} IoU {:.3}", report.sc_precision, report.sc_recall, report.sc_iou);
    println!("SSC per class {:?}", report.per_class_iou);
    println!("SSC avg {:.3} (majority baseline {:.3})", report.ssc_avg.unwrap_or(0.0), baseline);
    if let Some(f) = first {
        let last = trainer.step;
        println!("mce/voxel first step {f:.4}, lambda {lambda}, {last} steps");
    }
    Ok(())
}
