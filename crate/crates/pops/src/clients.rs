//! Client abstraction over external encoders, generative models, and image
//! decoders ("renderers"), plus deterministic mocks.
//!
//! The decoder is never trained or re-implemented; it is strictly an I/O
//! boundary. Mock clients are pure functions of their inputs and are the
//! test vehicle for every pipeline in this crate. Client selection for the
//! CLI goes through the `POPS_ENCODER` / `POPS_RENDERER` env vars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::embedding::{Embedding, SpaceTag};
use crate::{Error, Result};

/// In-memory RGB image passed between clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub width: u32,
    pub height: u32,
    /// RGB8, row-major.
    pub pixels: Vec<u8>,
}

impl ImageData {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), (width * height * 3) as usize);
        ImageData { width, height, pixels }
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.pixels);
        h.finalize().into()
    }

    pub fn crop(&self, b: &BBox) -> ImageData {
        let x1 = b.x.min(self.width.saturating_sub(1));
        let y1 = b.y.min(self.height.saturating_sub(1));
        let x2 = (b.x + b.w).min(self.width);
        let y2 = (b.y + b.h).min(self.height);
        let (w, h) = (x2 - x1, y2 - y1);
        let mut pixels = Vec::with_capacity((w * h * 3) as usize);
        for row in y1..y2 {
            let start = ((row * self.width + x1) * 3) as usize;
            let end = start + (w * 3) as usize;
            pixels.extend_from_slice(&self.pixels[start..end]);
        }
        ImageData::new(w, h, pixels)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let enc = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            enc,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Client(format!("png encode: {e}")))?;
        Ok(out)
    }

    pub fn load_png(path: &std::path::Path) -> Result<ImageData> {
        let img = image::open(path)
            .map_err(|e| Error::Client(format!("png load {}: {e}", path.display())))?
            .to_rgb8();
        Ok(ImageData::new(img.width(), img.height(), img.into_raw()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }
}

/// Binary mask aligned with an image.
#[derive(Debug, Clone)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn coverage(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

pub trait EncoderClient: Sync {
    fn encoder_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_image(&self, image: &ImageData) -> Result<Embedding>;
    fn encode_text(&self, text: &str) -> Result<Embedding>;
}

pub trait GeneratorClient: Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageData>;
    /// Generation conditioned on the depth map of another image.
    fn generate_depth_conditioned(
        &self,
        prompt: &str,
        depth_source: &ImageData,
        seed: u64,
    ) -> Result<ImageData>;
}

pub trait DetectorClient: Sync {
    /// Grounded detection; may legitimately return no boxes.
    fn detect(&self, image: &ImageData, prompt: &str) -> Result<Vec<BBox>>;
}

pub trait BackgroundClient: Sync {
    fn remove_background(&self, image: &ImageData) -> Result<Mask>;
}

pub trait InpaintClient: Sync {
    fn inpaint(&self, image: &ImageData, mask: &Mask) -> Result<ImageData>;
}

pub trait SentenceEncoderClient: Sync {
    fn encode_sentence(&self, sentence: &str) -> Result<Embedding>;
}

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    pub seed: u64,
    pub spatial_condition: Option<ImageData>,
}

pub trait RendererClient: Sync {
    fn renderer_id(&self) -> &str;
    fn render(&self, e: &Embedding, options: &RenderOptions) -> Result<ImageData>;
}

fn seed_from_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Deterministic stand-in for a CLIP-style encoder: embeddings are a pure
/// function of the input bytes.
pub struct MockEncoder {
    d: usize,
}

impl MockEncoder {
    pub fn new(d: usize) -> Self {
        MockEncoder { d }
    }

    fn embed(&self, seed: u64, tag: SpaceTag) -> Result<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..self.d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        Embedding::new(v, tag)
    }
}

impl EncoderClient for MockEncoder {
    fn encoder_id(&self) -> &str {
        "mock-encoder"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn encode_image(&self, image: &ImageData) -> Result<Embedding> {
        let seed = seed_from_hash(&[b"mock-image", &image.content_hash()]);
        self.embed(seed, SpaceTag::Image)
    }

    fn encode_text(&self, text: &str) -> Result<Embedding> {
        let seed = seed_from_hash(&[b"mock-text", text.as_bytes()]);
        self.embed(seed, SpaceTag::Text)
    }
}

impl SentenceEncoderClient for MockEncoder {
    fn encode_sentence(&self, sentence: &str) -> Result<Embedding> {
        let seed = seed_from_hash(&[b"mock-sentence", sentence.as_bytes()]);
        self.embed(seed, SpaceTag::Text)
    }
}

/// Deterministic image generator: pixels are a hash-seeded pattern.
pub struct MockGenerator {
    pub size: u32,
}

impl Default for MockGenerator {
    fn default() -> Self {
        MockGenerator { size: 64 }
    }
}

impl MockGenerator {
    fn synth(&self, seed: u64) -> ImageData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (self.size * self.size * 3) as usize;
        let pixels: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        ImageData::new(self.size, self.size, pixels)
    }
}

impl GeneratorClient for MockGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageData> {
        Ok(self.synth(seed_from_hash(&[b"gen", prompt.as_bytes(), &seed.to_le_bytes()])))
    }

    fn generate_depth_conditioned(
        &self,
        prompt: &str,
        depth_source: &ImageData,
        seed: u64,
    ) -> Result<ImageData> {
        Ok(self.synth(seed_from_hash(&[
            b"gen-depth",
            prompt.as_bytes(),
            &depth_source.content_hash(),
            &seed.to_le_bytes(),
        ])))
    }
}

/// Deterministic detector; misses with a configurable rate so skip paths
/// stay exercised.
pub struct MockDetector {
    pub miss_rate: f64,
}

impl Default for MockDetector {
    fn default() -> Self {
        MockDetector { miss_rate: 0.05 }
    }
}

impl DetectorClient for MockDetector {
    fn detect(&self, image: &ImageData, prompt: &str) -> Result<Vec<BBox>> {
        let seed = seed_from_hash(&[b"detect", &image.content_hash(), prompt.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.gen::<f64>() < self.miss_rate {
            return Ok(vec![]);
        }
        // A box covering 40-80% of each dimension, fully inside the image.
        let w = (image.width as f64 * rng.gen_range(0.4..0.8)) as u32;
        let h = (image.height as f64 * rng.gen_range(0.4..0.8)) as u32;
        let x = rng.gen_range(0..=(image.width - w));
        let y = rng.gen_range(0..=(image.height - h));
        Ok(vec![BBox { x, y, w, h }])
    }
}

/// Deterministic background removal: a centered rectangle mask.
#[derive(Default)]
pub struct MockBackgroundRemoval;

impl BackgroundClient for MockBackgroundRemoval {
    fn remove_background(&self, image: &ImageData) -> Result<Mask> {
        let (w, h) = (image.width, image.height);
        let (x0, y0) = (w / 4, h / 4);
        let (x1, y1) = (x0 + w / 2, y0 + h / 2);
        let data = (0..h)
            .flat_map(|y| (0..w).map(move |x| x >= x0 && x < x1 && y >= y0 && y < y1))
            .collect();
        Ok(Mask { width: w, height: h, data })
    }
}

#[derive(Default)]
pub struct MockInpaint;

impl InpaintClient for MockInpaint {
    fn inpaint(&self, image: &ImageData, mask: &Mask) -> Result<ImageData> {
        let seed = seed_from_hash(&[b"inpaint", &image.content_hash()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = image.clone();
        for (i, &masked) in mask.data.iter().enumerate() {
            if masked {
                for c in 0..3 {
                    out.pixels[i * 3 + c] = rng.gen();
                }
            }
        }
        Ok(out)
    }
}

/// Mock renderer: a deterministic heat-strip visualization of the
/// embedding, 16 pixels tall, one column band per component.
pub struct MockRenderer {
    pub bands_width: u32,
}

impl Default for MockRenderer {
    fn default() -> Self {
        MockRenderer { bands_width: 8 }
    }
}

impl RendererClient for MockRenderer {
    fn renderer_id(&self) -> &str {
        "mock"
    }

    fn render(&self, e: &Embedding, options: &RenderOptions) -> Result<ImageData> {
        if options.spatial_condition.is_some() {
            return Err(Error::UnsupportedOption {
                renderer: self.renderer_id().to_string(),
                option: "spatial_condition".to_string(),
            });
        }
        let d = e.dim() as u32;
        let (w, h) = (d * self.bands_width, 16u32);
        let mut pixels = vec![0u8; (w * h * 3) as usize];
        for (i, &v) in e.values().iter().enumerate() {
            // Map roughly [-3, 3] to [0, 255].
            let g = (((v as f64 + 3.0) / 6.0).clamp(0.0, 1.0) * 255.0) as u8;
            for y in 0..h {
                for bx in 0..self.bands_width {
                    let x = i as u32 * self.bands_width + bx;
                    let p = ((y * w + x) * 3) as usize;
                    pixels[p] = g;
                    pixels[p + 1] = 255 - g;
                    pixels[p + 2] = (options.seed % 251) as u8;
                }
            }
        }
        Ok(ImageData::new(w, h, pixels))
    }
}

/// Known renderer backends; only `mock` ships an implementation.
pub const RENDERER_IDS: [&str; 4] = ["kandinsky", "ip_adapter", "ip_adapter_depth", "mock"];

/// Builds a renderer by id. Real backends are external services and are
/// not bundled; requesting one without an adapter is an error, never a
/// silent fallback to the mock.
pub fn renderer_by_id(id: &str) -> Result<Box<dyn RendererClient>> {
    match id {
        "mock" => Ok(Box::new(MockRenderer::default())),
        other if RENDERER_IDS.contains(&other) => Err(Error::Client(format!(
            "renderer {other:?} requires external weights; no adapter configured"
        ))),
        other => Err(Error::Client(format!("unknown renderer {other:?}"))),
    }
}

/// render(encode_image(image)) — the reconstruction limitation probe.
pub fn reconstruct(
    encoder: &dyn EncoderClient,
    renderer: &dyn RendererClient,
    image: &ImageData,
    options: &RenderOptions,
) -> Result<ImageData> {
    let e = encoder.encode_image(image)?;
    renderer.render(&e, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(seed: u64) -> ImageData {
        MockGenerator { size: 32 }.synth(seed)
    }

    #[test]
    fn mock_encoder_is_pure() {
        let enc = MockEncoder::new(16);
        let img = test_image(1);
        let a = enc.encode_image(&img).unwrap();
        let b = enc.encode_image(&img).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.space_tag(), SpaceTag::Image);
        let t = enc.encode_text("a spiky dog").unwrap();
        assert_eq!(t.space_tag(), SpaceTag::Text);
        assert_eq!(t.dim(), 16);
    }

    #[test]
    fn mock_render_deterministic_png() {
        let r = MockRenderer::default();
        let e = Embedding::new(vec![0.5, -1.0, 2.0], SpaceTag::Image).unwrap();
        let a = r.render(&e, &RenderOptions::default()).unwrap().to_png_bytes().unwrap();
        let b = r.render(&e, &RenderOptions::default()).unwrap().to_png_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mock_renderer_rejects_spatial_condition() {
        let r = MockRenderer::default();
        let e = Embedding::new(vec![0.0], SpaceTag::Image).unwrap();
        let opts = RenderOptions { seed: 0, spatial_condition: Some(test_image(2)) };
        assert!(matches!(r.render(&e, &opts), Err(Error::UnsupportedOption { .. })));
    }

    #[test]
    fn unknown_and_unbundled_renderers() {
        assert!(renderer_by_id("mock").is_ok());
        assert!(renderer_by_id("kandinsky").is_err());
        assert!(renderer_by_id("nope").is_err());
    }

    #[test]
    fn reconstruct_is_deterministic_and_preserves_dim() {
        let enc = MockEncoder::new(8);
        let r = MockRenderer::default();
        let img = test_image(3);
        let a = reconstruct(&enc, &r, &img, &RenderOptions::default()).unwrap();
        let b = reconstruct(&enc, &r, &img, &RenderOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.width, 8 * r.bands_width);
    }

    #[test]
    fn crop_stays_in_bounds() {
        let img = test_image(4);
        let c = img.crop(&BBox { x: 8, y: 8, w: 16, h: 12 });
        assert_eq!((c.width, c.height), (16, 12));
    }
}
