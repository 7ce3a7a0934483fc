//! Trains a small operator prior on a synthetic midpoint task and saves
//! a checkpoint.
//!
//! Run: cargo run --release --example train_toy_operator

use pops::datagen::{toy_dataset, ToyOracle};
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::NoiseSchedule;
use pops::trainer::{TrainConfig, Trainer};

fn main() -> pops::Result<()> {
    let d = 16;
    let dataset = toy_dataset(&ToyOracle::Midpoint, d, 256, 1)?;

    let net = PriorNet::init(&PriorConfig::toy(d), 0)?;
    let mut config = TrainConfig::toy(0);
    config.log_every = 50;
    let mut trainer = Trainer::new(
        net,
        NoiseSchedule::linear(1000),
        builtin_spec(OperatorName::Union),
        FreezePolicy::All,
        config,
    )?;

    let losses = trainer.fit(&dataset, 300, None, None)?;
    println!(
        "loss: first {:.4} -> last {:.4}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    let out = std::env::temp_dir().join("pops_toy_union.ckpt");
    trainer.save(&out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
