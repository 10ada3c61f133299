//! Evaluates the training losses on small hand-made inputs.
//!
//! cargo run --example loss_values

use sscgan::losses::{bce, disc_loss, gen_adv_term, hybrid_objective, mce, AdvMode, LossConfig, ObjectiveTerm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = LossConfig::default();
    // Two voxels, three classes, channel-major.
    let pred = [0.7f64, 0.1, 0.2, 0.8, 0.1, 0.1];
    let target = [1.0f64, 0.0, 0.0, 1.0, 0.0, 0.0];
    println!("mce = {:.6}", mce(&pred, &target, cfg.clamp)?);
    println!("bce([0.9, 0.2], 1) = {:.6}", bce(&[0.9f64, 0.2], &[1.0, 1.0], cfg.clamp)?);

    let d_real = [0.9f64, 0.8];
    let d_fake = [0.3f64, 0.1];
    println!("discriminator loss = {:.6}", disc_loss(&d_real, &d_fake, &cfg)?);
    for mode in [AdvMode::Minimax, AdvMode::Nonsaturating] {
        let c = LossConfig { adv_mode: mode, ..cfg };
        println!("{mode:?} generator adversarial term = {:.6}", gen_adv_term(&d_fake, &c));
    }
    let term = ObjectiveTerm { pred: &pred, target: &target, d_real: &d_real, d_fake: &d_fake };
    println!("hybrid objective = {:.6}", hybrid_objective(&[term], 1.0, cfg.clamp)?);
    Ok(())
}
