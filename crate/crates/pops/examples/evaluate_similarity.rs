//! Scores a trained operator against held-out data and prints the CSV
//! report, including the full-scale reference row for context.
//!
//! Run: cargo run --release --example evaluate_similarity

use pops::datagen::{derive_seed, toy_dataset, ToyOracle};
use pops::metrics::{aggregate, image_similarity, to_csv, EvalRecord};
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use pops::trainer::{TrainConfig, Trainer};

fn main() -> pops::Result<()> {
    let d = 16;
    let train = toy_dataset(&ToyOracle::Midpoint, d, 256, 1)?;
    let held_out = toy_dataset(&ToyOracle::Midpoint, d, 32, 2)?;

    let net = PriorNet::init(&PriorConfig::toy(d), 0)?;
    let mut config = TrainConfig::toy(0);
    config.log_every = 0;
    let mut trainer = Trainer::new(
        net,
        NoiseSchedule::linear(1000),
        builtin_spec(OperatorName::Union),
        FreezePolicy::All,
        config,
    )?;
    trainer.fit(&train, 300, None, None)?;

    let mut records = Vec::new();
    for (i, s) in held_out.samples.iter().enumerate() {
        let pred = sample(
            trainer.net(),
            trainer.schedule(),
            &s.conditions,
            &SampleConfig {
                steps: 25,
                guidance: GuidanceConfig { scale: 1.0, ..GuidanceConfig::default() },
                seed: derive_seed(3, i as u64),
                renorm_to: None,
            },
        )?;
        records.push(EvalRecord {
            method: "union_toy".into(),
            image_sim: image_similarity(&pred, &s.target).ok(),
            text_sim: None,
            sentence_sim: None,
        });
    }
    print!("{}", to_csv(&aggregate(&records), true));
    Ok(())
}
