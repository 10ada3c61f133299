//! Converts a rendered depth image to a TSDF volume in both encodings and
//! writes them as SSCV files.
//!
//! cargo run --release --example tsdf_encode -- [seed] [out_dir]

use std::env;
use std::path::PathBuf;

use sscgan::scenegen::{synthesize, SceneConfig};
use sscgan::tsdf::{condition_channel, default_truncation, depth_to_tsdf_with, TsdfEncoding};
use sscgan::voxcore::sscv::{SscvFile, SscvPayload};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;

    let sample = synthesize(&SceneConfig::default().with_seed(seed))?;
    let grid = &sample.labels.spec;
    let tau = default_truncation(grid);
    for enc in [TsdfEncoding::Plain, TsdfEncoding::Flipped] {
        let t = depth_to_tsdf_with(&sample.depth, grid, tau, enc)?;
        let near = t.values.iter().filter(|v| v.abs() < 1.0).count();
        let front = t.values.iter().filter(|&&v| v == 1.0).count();
        println!("{enc:?}: {} voxels, {near} inside the truncation band, {front} clamped in front", t.values.len());
        let cond = condition_channel(&t, grid)?;
        println!("  conditioning channel at label resolution: {} values", cond.len());
        let dims = t.input_dims();
        let file = SscvFile {
            channels: 1,
            dims: [dims[0] as u32, dims[1] as u32, dims[2] as u32],
            payload: SscvPayload::Values(t.values),
            visibility: None,
        };
        let path = out.join(format!("tsdf_{seed}_{enc:?}.sscv").to_lowercase());
        file.write_to(std::fs::File::create(&path)?)?;
        println!("  wrote {}", path.display());
    }
    Ok(())
}
