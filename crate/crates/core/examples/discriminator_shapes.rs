//! Prints the layer shapes of every discriminator variant for a grid.
//!
//! cargo run --release --example discriminator_shapes -- [H W D C]

use std::env;

use sscgan::nets::{Discriminator, Mode, NetKind, NetSpec, Tensor};
use sscgan::voxcore::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a: Vec<usize> = env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let grid = if a.len() == 4 {
        GridSpec { height: a[0], width: a[1], depth: a[2], num_classes: a[3], ..GridSpec::default() }
    } else {
        GridSpec { height: 60, width: 36, depth: 60, num_classes: 12, ..GridSpec::default() }
    };
    let [h, w, d] = grid.dims();
    let c = grid.num_classes;
    println!("grid {h}x{w}x{d}, {c} classes");
    for kind in [NetKind::DiscGlobal, NetKind::DiscLocal] {
        for conditional in [false, true] {
            let spec = NetSpec::discriminator(grid.clone(), kind, conditional);
            let mut disc = match Discriminator::<f32>::new(spec) {
                Ok(d) => d,
                Err(e) => {
                    println!("{kind:?} conditional={conditional}: {e}");
                    continue;
                }
            };
            let params = disc.init_params(0);
            let x = Tensor::zeros(&[c, h, w, d]);
            let cond = conditional.then(|| vec![Tensor::zeros(&[1, h, w, d])]);
            let out = disc.forward(&params, &[x], cond.as_deref(), Mode::Train)?;
            println!(
                "{kind:?} conditional={conditional}: input channels {}, output {:?}, {} trainable values",
                c + conditional as usize,
                out[0].shape,
                params.iter().filter(|(_, p)| p.kind.trainable()).map(|(_, p)| p.len()).sum::<usize>()
            );
            if let Some(f) = disc.recorded_flatten_shape() {
                println!("  trunk output {f:?}, fully connected {:?}", disc.fc_shapes());
            }
        }
    }
    Ok(())
}
