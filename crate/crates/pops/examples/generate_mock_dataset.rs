//! Builds paired datasets for every operator with the deterministic mock
//! clients and prints manifest statistics.
//!
//! Run: cargo run --release --example generate_mock_dataset

use pops::datagen::{
    gen_composition, gen_instruct, gen_scene, gen_texturing, gen_union, load_dataset, GenConfig,
    MockAtrSource, MockClients,
};

fn main() -> pops::Result<()> {
    let mocks = MockClients::new(16);
    let clients = mocks.as_clients();
    let config = GenConfig::default();
    let base = std::env::temp_dir().join("pops_mock_datasets");

    let texturing = gen_texturing(&clients, 12, &config, &base.join("texturing"))?;
    let scene = gen_scene(&clients, 12, &config, &base.join("scene"))?;
    let union = gen_union(&clients, 12, &config, &base.join("union"))?;
    let instruct = gen_instruct(&clients, 12, &config, &base.join("instruct"))?;
    let atr = MockAtrSource { count: 12, seed: 0 };
    let composition =
        gen_composition(&atr, &mocks.encoder, 12, 0, &base.join("composition"))?;

    for header in [texturing, scene, union, instruct, composition] {
        println!(
            "{:<12} emitted {:>3} / attempted {:>3}",
            header.operator.to_string(),
            header.emitted,
            header.attempted
        );
    }

    let (_, ds) = load_dataset(&base.join("instruct"))?;
    println!(
        "instruct sample 0: {} conditions, text embedding present: {}",
        ds.samples[0].conditions.len(),
        ds.samples[0].e_text.is_some()
    );
    println!("datasets under {}", base.display());
    Ok(())
}
