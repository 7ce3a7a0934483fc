//! Samples embeddings from a quickly trained operator at several
//! guidance scales and shows how guidance pulls the output toward the
//! conditioned prediction.
//!
//! Run: cargo run --release --example sample_with_guidance

use pops::datagen::{toy_dataset, ToyOracle};
use pops::embedding::cosine;
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use pops::trainer::{TrainConfig, Trainer};

fn main() -> pops::Result<()> {
    let d = 16;
    let dataset = toy_dataset(&ToyOracle::Midpoint, d, 256, 1)?;
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
    trainer.fit(&dataset, 400, None, None)?;

    let probe = &dataset.samples[0];
    for scale in [0.0, 1.0, 4.0, 8.0] {
        let out = sample(
            trainer.net(),
            trainer.schedule(),
            &probe.conditions,
            &SampleConfig {
                steps: 25,
                guidance: GuidanceConfig { scale, ..GuidanceConfig::default() },
                seed: 7,
                renorm_to: None,
            },
        )?;
        println!(
            "scale {scale:>4}: cosine to true midpoint {:.4}",
            cosine(&out, &probe.target)?
        );
    }
    Ok(())
}
