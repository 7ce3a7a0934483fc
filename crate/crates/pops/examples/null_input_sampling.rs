//! Trains an operator with aggressive condition dropping, then samples
//! with a condition slot left empty: outputs vary across seeds instead
//! of collapsing to one point.
//!
//! Run: cargo run --release --example null_input_sampling

use pops::datagen::{toy_dataset, ToyOracle};
use pops::embedding::cosine;
use pops::ops::{builtin_spec, DropConfig, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use pops::trainer::{TrainConfig, Trainer};

fn main() -> pops::Result<()> {
    let d = 16;
    let train = toy_dataset(&ToyOracle::FirstArg, d, 256, 1)?;

    let net = PriorNet::init(&PriorConfig::toy(d), 0)?;
    let mut config = TrainConfig::toy(0);
    config.log_every = 200;
    config.drop_override = Some(DropConfig { p_drop: 0.2, per_slot: Some(0.5) });
    let mut trainer = Trainer::new(
        net,
        NoiseSchedule::linear(1000),
        builtin_spec(OperatorName::Texturing),
        FreezePolicy::All,
        config,
    )?;
    trainer.fit(&train, 600, None, None)?;

    // Slot 0 carries the answer for this task; leave it empty and the
    // model has to fall back on the noised token, so each seed lands
    // somewhere different.
    let fixed = train.samples[0].conditions[1].1.clone();
    let outputs: Vec<_> = (0..8)
        .map(|seed| {
            sample(
                trainer.net(),
                trainer.schedule(),
                &[(1, fixed.clone())],
                &SampleConfig {
                    steps: 25,
                    guidance: GuidanceConfig { scale: 1.0, ..GuidanceConfig::default() },
                    seed,
                    renorm_to: None,
                },
            )
        })
        .collect::<pops::Result<_>>()?;

    for (i, out) in outputs.iter().enumerate().skip(1) {
        println!(
            "seed {i}: cosine to seed 0 = {:.4}, norm {:.3}",
            cosine(out, &outputs[0])?,
            out.norm()
        );
    }
    Ok(())
}
