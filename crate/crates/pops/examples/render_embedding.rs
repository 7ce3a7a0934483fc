//! Renders an embedding to a PNG through the renderer client interface
//! (the bundled mock renderer paints a deterministic heat strip).
//!
//! Run: cargo run --release --example render_embedding

use pops::clients::{renderer_by_id, EncoderClient, MockEncoder, RenderOptions};

fn main() -> pops::Result<()> {
    let encoder = MockEncoder::new(64);
    let e = encoder.encode_text("a copper kettle on a windowsill")?;

    let renderer = renderer_by_id("mock")?;
    let image = renderer.render(&e, &RenderOptions { seed: 3, spatial_condition: None })?;
    let path = std::env::temp_dir().join("pops_render.png");
    std::fs::write(&path, image.to_png_bytes()?).map_err(|err| pops::Error::io(&path, err))?;
    println!("{}x{} render written to {}", image.width, image.height, path.display());

    // Production renderer ids exist but need external services.
    for id in ["kandinsky", "ip_adapter", "ip_adapter_depth"] {
        match renderer_by_id(id) {
            Err(e) => println!("{id}: {e}"),
            Ok(_) => println!("{id}: available"),
        }
    }
    Ok(())
}
