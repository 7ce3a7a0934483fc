//! Compares a trained operator against the embedding-averaging baseline
//! on the midpoint task (where averaging is the exact answer) and on the
//! first-argument task (where it is not).
//!
//! Run: cargo run --release --example average_baseline

use pops::datagen::{toy_dataset, ToyOracle};
use pops::embedding::{average, cosine, EmbeddingBatch};
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use pops::trainer::{TrainConfig, Trainer};

fn score(oracle: &ToyOracle, label: &str) -> pops::Result<()> {
    let d = 16;
    let train = toy_dataset(oracle, d, 256, 1)?;
    let held_out = toy_dataset(oracle, d, 32, 2)?;

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
    trainer.fit(&train, 400, None, None)?;

    let mut op_sum = 0.0;
    let mut avg_sum = 0.0;
    for (i, s) in held_out.samples.iter().enumerate() {
        let pred = sample(
            trainer.net(),
            trainer.schedule(),
            &s.conditions,
            &SampleConfig {
                steps: 25,
                guidance: GuidanceConfig { scale: 1.0, ..GuidanceConfig::default() },
                seed: i as u64,
                renorm_to: None,
            },
        )?;
        op_sum += cosine(&pred, &s.target)?;

        let inputs: Vec<_> = s.conditions.iter().map(|(_, e)| e.clone()).collect();
        let baseline = average(&EmbeddingBatch::new(inputs)?)?;
        avg_sum += cosine(&baseline, &s.target)?;
    }
    let n = held_out.samples.len() as f64;
    println!(
        "{label:<10} operator {:.4} | averaging baseline {:.4}",
        op_sum / n,
        avg_sum / n
    );
    Ok(())
}

fn main() -> pops::Result<()> {
    score(&ToyOracle::Midpoint, "midpoint")?;
    score(&ToyOracle::FirstArg, "first_arg")?;
    Ok(())
}
