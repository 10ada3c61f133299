//! Writes a synthetic dataset (labels, depth, cameras, manifest) and prints
//! a per-scene summary.
//!
//! cargo run --release --example gen_data -- <out_dir> [count]

use std::env;
use std::path::PathBuf;

use sscgan::dataset::{write_dataset, Dataset, TsdfOptions};
use sscgan::scenegen::SceneConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let count: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);

    let config = SceneConfig::default();
    let seeds: Vec<u64> = (0..count).collect();
    let manifest = write_dataset(&config, &seeds, &out, Some(TsdfOptions::default()))?;
    println!("wrote {} scenes to {}", manifest.scenes.len(), out.display());

    let data = Dataset::load(out.join("manifest.json"), &TsdfOptions::default())?;
    for s in &data.samples {
        let [obs, occ, oov] = s.labels.visibility_counts();
        println!("scene {:3}  classes {:?}  observed {obs} occluded {occ} out-of-view {oov}", s.seed, s.labels.histogram());
    }
    Ok(())
}
