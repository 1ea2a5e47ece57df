//! Offline, bit-reproducible backend.
//!
//! Objects are category-keyed superellipse sprites painted in saturated
//! colors over grayscale noise, so segmentation is an exact chroma key.
//! Inpainting fills masked pixels with a seeded, prompt-tinted texture.

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, RasterImage};
use crate::seed::{hash_str, mix64, unit_open_closed};
use crate::vocab::Category;

use super::{
    Backend, CapabilitySet, EmbedItem, GenerationRequest, SegmentationResult, OBJECT_PROMPT_PREFIX,
};

pub const EMBED_DIM: usize = 64;

/// Pixels whose max-min channel spread reaches this are object pixels.
const CHROMA_KEY: u8 = 24;

#[derive(Debug, Default, Clone)]
pub struct ProceduralBackend;

impl ProceduralBackend {
    pub fn new() -> Self {
        Self
    }
}

#[inline]
fn pixel_hash(seed: u64, x: u32, y: u32) -> u64 {
    mix64(seed ^ mix64(((x as u64) << 32) | y as u64))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h * 6.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Shape parameters for one generated object.
struct ObjectShape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    exponent: f64,
    base: [f64; 3],
    stripe_period: f64,
}

impl ObjectShape {
    fn new(category: &Category, seed: u64, w: u32, h: u32) -> Self {
        let ck = hash_str(category.as_str());
        let u = |k: u64| unit_open_closed(mix64(seed ^ mix64(k)));
        let exponent = 4.0 + (ck % 5) as f64;
        let side = w.min(h) as f64;
        let radius = side * (0.27 + 0.08 * u(1));
        let aspect = 0.96 + 0.04 * u(2);
        let (rx, ry) = if ck & 1 == 0 {
            (radius, radius * aspect)
        } else {
            (radius * aspect, radius)
        };
        let hue = category.index() as f64 / 80.0;
        Self {
            cx: w as f64 / 2.0 + (u(3) - 0.5) * 0.1 * side,
            cy: h as f64 / 2.0 + (u(4) - 0.5) * 0.1 * side,
            rx,
            ry,
            exponent,
            base: hsv_to_rgb(hue, 0.85, 0.9),
            stripe_period: 4.0 + ((ck >> 8) % 9) as f64,
        }
    }

    fn inside(&self, x: u32, y: u32) -> bool {
        let dx = ((x as f64 + 0.5 - self.cx) / self.rx).abs();
        let dy = ((y as f64 + 0.5 - self.cy) / self.ry).abs();
        dx.powf(self.exponent) + dy.powf(self.exponent) <= 1.0
    }

    fn color(&self, x: u32, y: u32) -> [u8; 4] {
        let t = ((x + y) as f64 / self.stripe_period).floor() as i64;
        let shade = if t % 2 == 0 { 1.0 } else { 0.8 };
        let c = self
            .base
            .map(|v| (v * shade * 255.0).round().clamp(0.0, 255.0) as u8);
        [c[0], c[1], c[2], 255]
    }
}

fn gray_noise(seed: u64, x: u32, y: u32) -> [u8; 4] {
    let v = 96 + (pixel_hash(seed, x, y) & 63) as u8;
    [v, v, v, 255]
}

/// Low-frequency tinted texture: bilinear blend of a hashed 32-px lattice plus
/// per-pixel grain.
fn texture(seed: u64, tint: [f64; 3], x: u32, y: u32) -> [u8; 4] {
    const CELL: u32 = 32;
    let (gx, gy) = (x / CELL, y / CELL);
    let (fx, fy) = (
        (x % CELL) as f64 / CELL as f64,
        (y % CELL) as f64 / CELL as f64,
    );
    let lattice = |i: u32, j: u32| unit_open_closed(pixel_hash(seed ^ 0x5eed, i, j));
    let v = lattice(gx, gy) * (1.0 - fx) * (1.0 - fy)
        + lattice(gx + 1, gy) * fx * (1.0 - fy)
        + lattice(gx, gy + 1) * (1.0 - fx) * fy
        + lattice(gx + 1, gy + 1) * fx * fy;
    let grain = (pixel_hash(seed, x, y) & 15) as f64 - 7.5;
    let level = 0.55 + 0.35 * v;
    let c = tint.map(|t| (t * level * 255.0 + grain).round().clamp(0.0, 255.0) as u8);
    [c[0], c[1], c[2], 255]
}

fn prompt_tint(prompt: &str) -> [f64; 3] {
    let h = hash_str(prompt);
    let hue = unit_open_closed(h);
    // Low saturation keeps backgrounds muted next to sprites.
    hsv_to_rgb(hue, 0.35, 1.0)
}

fn text_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0.0f32; EMBED_DIM];
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    let mut add = |feature: &str, weight: f32| {
        let h = hash_str(feature);
        let idx = (h % EMBED_DIM as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    };
    for t in &tokens {
        add(t, 1.0);
    }
    for w in tokens.windows(2) {
        add(&format!("{} {}", w[0], w[1]), 0.5);
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

fn image_embedding(img: &RasterImage) -> Vec<f32> {
    // 4x4 grid of mean RGB (48) + per-cell alpha coverage (16).
    let mut sums = [[0.0f64; 4]; 16];
    let mut counts = [0u64; 16];
    for y in 0..img.height() {
        let gy = (y as u64 * 4 / img.height() as u64) as usize;
        for x in 0..img.width() {
            let gx = (x as u64 * 4 / img.width() as u64) as usize;
            let cell = gy * 4 + gx;
            let px = img.get(x, y);
            for c in 0..4 {
                sums[cell][c] += px[c] as f64 / 255.0;
            }
            counts[cell] += 1;
        }
    }
    let mut v = Vec::with_capacity(EMBED_DIM);
    for (cell, s) in sums.iter().enumerate() {
        let n = counts[cell].max(1) as f64;
        v.extend(s[..3].iter().map(|c| (c / n) as f32));
    }
    for (cell, s) in sums.iter().enumerate() {
        v.push((s[3] / counts[cell].max(1) as f64) as f32);
    }
    v[0] += 1e-6;
    v
}

impl Backend for ProceduralBackend {
    fn name(&self) -> &str {
        "procedural"
    }

    fn capabilities(&self) -> Result<CapabilitySet> {
        Ok(CapabilitySet::ALL)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage> {
        if request.prompt.trim().is_empty() {
            return Err(Error::InvalidInput("generation prompt is empty".into()));
        }
        let name = request
            .prompt
            .strip_prefix(OBJECT_PROMPT_PREFIX)
            .ok_or_else(|| {
                Error::Backend(format!(
                    "procedural backend only renders single-object prompts, got `{}`",
                    request.prompt
                ))
            })?;
        let category = Category::new(name)?;
        let (w, h) = (request.width, request.height);
        if w < 4 || h < 4 {
            return Err(Error::InvalidInput(format!(
                "generation size {w}x{h} too small"
            )));
        }
        let shape = ObjectShape::new(&category, request.seed, w, h);
        let mut px = Vec::with_capacity(w as usize * h as usize * 4);
        for y in 0..h {
            for x in 0..w {
                let p = if shape.inside(x, y) {
                    shape.color(x, y)
                } else {
                    gray_noise(request.seed, x, y)
                };
                px.extend_from_slice(&p);
            }
        }
        RasterImage::new(w, h, px)
    }

    fn segment(&self, image: &RasterImage, category: &Category) -> Result<SegmentationResult> {
        let (w, h) = (image.width(), image.height());
        let mut mask = BinaryMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let [r, g, b, a] = image.get(x, y);
                let spread = r.max(g).max(b) - r.min(g).min(b);
                if a > 0 && spread >= CHROMA_KEY {
                    mask.set(x, y, true);
                }
            }
        }
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::NotFound(category.to_string()))?;
        Ok(SegmentationResult {
            mask,
            bbox,
            confidence: 1.0,
        })
    }

    fn inpaint(
        &self,
        image: &RasterImage,
        mask: &BinaryMask,
        prompt: &str,
        seed: u64,
    ) -> Result<RasterImage> {
        if !mask.same_dims(image) {
            return Err(Error::InvalidInput("mask/image size mismatch".into()));
        }
        let tint = prompt_tint(prompt);
        let mut out = image.clone();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if mask.get(x, y) {
                    out.put(x, y, texture(seed, tint, x, y));
                }
            }
        }
        Ok(out)
    }

    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        Ok(items
            .iter()
            .map(|item| match item {
                EmbedItem::Text(t) => text_embedding(t),
                EmbedItem::Image(img) => image_embedding(img),
            })
            .collect())
    }
}
