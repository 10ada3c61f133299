//! Compares hand-written gradients with central finite differences in f64
//! for a small generator and each discriminator variant.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sscgan::nets::{Discriminator, Generator, Mode, NetKind, NetSpec, Normalization, ParamStore, Tensor};
use sscgan::voxcore::GridSpec;

const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn dot(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum::<f64>()).sum()
}

/// Largest relative error over a few entries of every parameter.
fn worst(ps: &ParamStore<f64>, analytic: &ParamStore<f64>, f: impl Fn(&ParamStore<f64>) -> f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for name in ps.names() {
        let p = ps.by_name(&name).unwrap();
        if !p.kind.trainable() {
            continue;
        }
        for e in [0, p.len() / 2, p.len() - 1] {
            let mut plus = ps.clone();
            plus.by_name_mut(&name).unwrap().value[e] += H;
            let mut minus = ps.clone();
            minus.by_name_mut(&name).unwrap().value[e] -= H;
            let fd = (f(&plus) - f(&minus)) / (2.0 * H);
            let an = analytic.by_name(&name).unwrap().grad[e];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
            checked += 1;
        }
    }
    (worst, checked)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = GridSpec::cube(12, 3);

    let mut spec = NetSpec::generator(grid.clone());
    spec.widths = vec![4, 6, 6, 8];
    spec.dilations = vec![1, 2];
    let mut gen = Generator::<f64>::new(spec)?;
    let mut ps = gen.init_params(1);
    let x = vec![random(&mut rng, &[1, 12, 12, 12])];
    let w = vec![random(&mut rng, &[3, 12, 12, 12])];
    gen.forward(&ps, &x)?;
    ps.zero_grad();
    gen.backward(&mut ps, &w)?;
    let (err, n) = worst(&ps, &ps, |p| dot(&gen.infer(p, &x).unwrap(), &w));
    println!("generator: {n} entries, max relative error {err:.2e}");

    for kind in [NetKind::DiscGlobal, NetKind::DiscLocal] {
        let mut spec = NetSpec::discriminator(grid.clone(), kind, true);
        spec.widths = vec![4, 6, 4, 3];
        spec.fc_widths = vec![8, 4];
        spec.normalization = Normalization::None;
        let mut disc = Discriminator::<f64>::new(spec)?;
        let mut ps = disc.init_params(2);
        let v = vec![random(&mut rng, &[3, 12, 12, 12])];
        let c = vec![random(&mut rng, &[1, 12, 12, 12])];
        let out = disc.forward(&ps, &v, Some(&c), Mode::Train)?;
        let g: Vec<Tensor<f64>> = out.iter().map(|o| random(&mut rng, &o.shape)).collect();
        ps.zero_grad();
        disc.backward(&mut ps, g.clone(), false)?;
        let (err, n) = worst(&ps, &ps, |p| dot(&disc.infer(p, &v, Some(&c)).unwrap(), &g));
        println!("{kind:?}: {n} entries, max relative error {err:.2e}");
    }
    Ok(())
}
