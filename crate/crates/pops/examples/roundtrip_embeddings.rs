//! Writes an embedding batch to the binary container format, reads it
//! back bit-exactly, and shows the JSON sidecar.
//!
//! Run: cargo run --release --example roundtrip_embeddings

use pops::clients::{EncoderClient, MockEncoder};
use pops::embedding::{meta_path_for, read_embeddings, write_embeddings, EmbeddingBatch};

fn main() -> pops::Result<()> {
    let encoder = MockEncoder::new(16);
    let items = vec![
        encoder.encode_text("a mug")?,
        encoder.encode_text("a lamp")?,
        encoder.encode_text("a chair")?,
    ];
    let batch = EmbeddingBatch::new(items)?;

    let path = std::env::temp_dir().join("pops_demo.pops");
    write_embeddings(&path, &batch, encoder.encoder_id())?;

    let loaded = read_embeddings(&path)?;
    assert_eq!(loaded.items().len(), 3);
    for (a, b) in batch.items().iter().zip(loaded.items()) {
        assert_eq!(a.values(), b.values());
    }
    println!("round-tripped {} embeddings bit-exactly", loaded.items().len());

    let meta = std::fs::read_to_string(meta_path_for(&path))
        .map_err(|e| pops::Error::io(&path, e))?;
    println!("sidecar: {meta}");
    Ok(())
}
