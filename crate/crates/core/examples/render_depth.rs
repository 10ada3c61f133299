//! Generates one scene, renders its depth image and writes it as a 16-bit
//! PGM next to the camera JSON.
//!
//! cargo run --release --example render_depth -- [seed] [out_dir]

use std::env;
use std::path::PathBuf;

use sscgan::scenegen::io::{write_camera, write_depth};
use sscgan::scenegen::{synthesize, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let sample = synthesize(&SceneConfig::default().with_seed(seed))?;
    let d = &sample.depth;
    let hits: Vec<f32> = d.depths.iter().copied().filter(|&z| z > 0.0).collect();
    let lo = hits.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = hits.iter().copied().fold(0.0, f32::max);
    println!("{}x{} depth, {} of {} pixels hit, z in [{lo:.3}, {hi:.3}] m", d.width, d.height, hits.len(), d.depths.len());
    println!("camera at {:?}", d.camera.pose.translation);

    std::fs::create_dir_all(&out)?;
    write_depth(out.join(format!("depth_{seed}.pgm")), d)?;
    write_camera(out.join(format!("camera_{seed}.json")), &d.camera)?;

    // Coarse ASCII preview, nearer is darker.
    let ramp = b"@%#*+=-:. ";
    for v in (0..d.height).step_by((d.height / 16).max(1)) {
        let row: String = (0..d.width)
            .step_by((d.width / 48).max(1))
            .map(|u| {
                let z = d.at(u, v);
                if z <= 0.0 {
                    ' '
                } else {
                    let t = ((z - lo) / (hi - lo).max(1e-6) * (ramp.len() - 1) as f32) as usize;
                    ramp[t.min(ramp.len() - 1)] as char
                }
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
