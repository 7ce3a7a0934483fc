//! Parses a generative-tree program and evaluates it against trained
//! operators, mixing text leaves, bindings, and nested operator calls.
//!
//! Run: cargo run --release --example compose_tree

use pops::clients::MockEncoder;
use pops::datagen::{toy_dataset, ToyOracle};
use pops::ops::{builtin_spec, OperatorName};
use pops::prior::{FreezePolicy, PriorConfig, PriorNet};
use pops::schedule::NoiseSchedule;
use pops::trainer::{TrainConfig, Trainer};
use pops::tree::{evaluate, parse, EvalContext, OperatorRegistry};

fn train_quick(d: usize, name: OperatorName) -> pops::Result<Trainer> {
    let dataset = toy_dataset(&ToyOracle::Midpoint, d, 128, 1)?;
    let net = PriorNet::init(&PriorConfig::toy(d), 0)?;
    let mut config = TrainConfig::toy(0);
    config.log_every = 0;
    let mut trainer = Trainer::new(
        net,
        NoiseSchedule::linear(1000),
        builtin_spec(name),
        FreezePolicy::All,
        config,
    )?;
    trainer.fit(&dataset, 150, None, None)?;
    Ok(trainer)
}

fn main() -> pops::Result<()> {
    let d = 16;
    let mut registry = OperatorRegistry::new();
    for name in [OperatorName::Union, OperatorName::Texturing] {
        let trainer = train_quick(d, name)?;
        let (spec, schedule) = (trainer.spec().clone(), trainer.schedule().clone());
        registry.insert(trainer.into_net(), spec, schedule);
    }

    let program = parse(
        r#"
        ; fuse two concepts, then texture the result
        (let fused (union (text "a ceramic mug") (text "a brass lamp") :seed 11))
        (texturing fused (text "carved oak") :scale 2.0)
        "#,
    )?;
    println!("canonical form:\n{program}");

    let encoder = MockEncoder::new(d);
    let mut ctx = EvalContext::new(&registry, &encoder);
    ctx.base_seed = 5;
    ctx.steps = 25;
    let result = evaluate(&program, &ctx)?;
    println!("result: dim {} norm {:.4}", result.dim(), result.norm());
    Ok(())
}
