//! Fine-tunes an already trained operator toward a new task, with only a
//! subset of transformer layers unfrozen.
//!
//! Run: cargo run --release --example warm_start_finetune

use pops::datagen::{toy_dataset, ToyOracle};
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::NoiseSchedule;
use pops::trainer::{load_net, TrainConfig, Trainer};

fn main() -> pops::Result<()> {
    let d = 16;
    let ckpt = std::env::temp_dir().join("pops_warm_start_base.ckpt");

    // Base run: midpoint task, all parameters trainable.
    let base_data = toy_dataset(&ToyOracle::Midpoint, d, 256, 1)?;
    let mut config = TrainConfig::toy(0);
    config.log_every = 0;
    let mut base = Trainer::new(
        PriorNet::init(&PriorConfig::toy(d), 0)?,
        NoiseSchedule::linear(1000),
        builtin_spec(OperatorName::Union),
        FreezePolicy::All,
        config.clone(),
    )?;
    base.fit(&base_data, 300, None, None)?;
    base.save(&ckpt)?;

    // Warm start: reuse the weights, train only the last two layers on a
    // weighted mix instead of the plain midpoint.
    let new_data = toy_dataset(&ToyOracle::WeightedMix(0.8), d, 256, 2)?;
    let (net, _, schedule) = load_net(&ckpt)?;
    let mut tuned = Trainer::warm_start(
        net,
        schedule,
        builtin_spec(OperatorName::Union),
        FreezePolicy::Subset(vec![2, 3]),
        config,
    )?;
    let losses = tuned.fit(&new_data, 200, None, None)?;
    println!(
        "fine-tune loss: first {:.4} -> last {:.4} (layers 2,3 only)",
        losses.first().unwrap(),
        losses.last().unwrap()
    );
    Ok(())
}
