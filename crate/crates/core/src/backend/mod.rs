//! Generative and embedding backends.
//!
//! Every backend implements [`Backend`]; concrete implementations are
//! registered by name in a [`BackendRegistry`] and picked at runtime from a
//! backend spec string (`procedural`, or an `http://` endpoint).

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, PixelRect, RasterImage};
use crate::vocab::Category;

pub mod http;
pub mod procedural;
pub mod protocol;

pub use http::HttpBackend;
pub use procedural::ProceduralBackend;

pub const OBJECT_PROMPT_PREFIX: &str = "a photo of a single and fully visible ";

/// The generation prompt for a single-object image.
pub fn object_prompt(category: &Category) -> String {
    format!("{OBJECT_PROMPT_PREFIX}{category}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySet {
    pub generate: bool,
    pub segment: bool,
    pub inpaint: bool,
    pub embed: bool,
}

impl CapabilitySet {
    pub const ALL: CapabilitySet = CapabilitySet {
        generate: true,
        segment: true,
        inpaint: true,
        embed: true,
    };

    pub fn require(&self, cap: Capability) -> Result<()> {
        let ok = match cap {
            Capability::Generate => self.generate,
            Capability::Segment => self.segment,
            Capability::Inpaint => self.inpaint,
            Capability::Embed => self.embed,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MissingCapability(cap.as_str()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    Generate,
    Segment,
    Inpaint,
    Embed,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Generate => "generate",
            Capability::Segment => "segment",
            Capability::Inpaint => "inpaint",
            Capability::Embed => "embed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    pub bbox: PixelRect,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedItem {
    Image(RasterImage),
    Text(String),
}

/// A provider of the generation, segmentation, inpainting and embedding roles.
///
/// Callers should go through the free functions in this module, which check
/// preconditions and advertised capabilities before dispatching.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Result<CapabilitySet>;
    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage>;
    fn segment(&self, image: &RasterImage, category: &Category) -> Result<SegmentationResult>;
    /// Replace masked pixels; unmasked pixels must come back bit-identical.
    fn inpaint(
        &self,
        image: &RasterImage,
        mask: &BinaryMask,
        prompt: &str,
        seed: u64,
    ) -> Result<RasterImage>;
    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>>;
}

pub fn generate_object_image(
    backend: &dyn Backend,
    category: &str,
    seed: u64,
    width: u32,
    height: u32,
) -> Result<RasterImage> {
    let category = Category::new(category)?;
    backend.capabilities()?.require(Capability::Generate)?;
    let request = GenerationRequest {
        prompt: object_prompt(&category),
        seed,
        width,
        height,
    };
    let img = backend.generate(&request)?;
    if img.width() != width || img.height() != height {
        return Err(Error::Backend(format!(
            "generated {}x{} image, requested {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

pub fn segment_object(
    backend: &dyn Backend,
    image: &RasterImage,
    category: &Category,
) -> Result<SegmentationResult> {
    backend.capabilities()?.require(Capability::Segment)?;
    let res = backend.segment(image, category)?;
    if !res.mask.same_dims(image) {
        return Err(Error::Backend("segmentation mask size mismatch".into()));
    }
    match res.mask.bbox() {
        None => Err(Error::NotFound(category.to_string())),
        Some(tight) => {
            if tight.intersection(&res.bbox) != Some(tight) {
                return Err(Error::Backend(format!(
                    "segmentation bbox {:?} does not contain mask extent {tight:?}",
                    res.bbox
                )));
            }
            if !(0.0..=1.0).contains(&res.confidence) {
                return Err(Error::Backend(format!(
                    "confidence {} outside [0,1]",
                    res.confidence
                )));
            }
            Ok(res)
        }
    }
}

pub fn inpaint(
    backend: &dyn Backend,
    image: &RasterImage,
    mask: &BinaryMask,
    prompt: &str,
    seed: u64,
) -> Result<RasterImage> {
    if !mask.same_dims(image) {
        return Err(Error::InvalidInput(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    backend.capabilities()?.require(Capability::Inpaint)?;
    let out = backend.inpaint(image, mask, prompt, seed)?;
    if out.width() != image.width() || out.height() != image.height() {
        return Err(Error::Backend("inpaint changed the image size".into()));
    }
    Ok(out)
}

pub fn embed(backend: &dyn Backend, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
    if items.is_empty() {
        return Err(Error::InvalidInput("embed batch is empty".into()));
    }
    backend.capabilities()?.require(Capability::Embed)?;
    let out = backend.embed(items)?;
    if out.len() != items.len() {
        return Err(Error::Backend(format!(
            "embedded {} items, sent {}",
            out.len(),
            items.len()
        )));
    }
    let dim = out[0].len();
    if dim == 0 || out.iter().any(|v| v.len() != dim) {
        return Err(Error::Backend(
            "embeddings have inconsistent dimensionality".into(),
        ));
    }
    Ok(out)
}

/// Settings a backend factory may consult.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    /// `procedural` or an `http(s)://` endpoint.
    pub spec: String,
    pub timeout: Duration,
}

impl BackendConfig {
    pub fn new(spec: impl Into<String>) -> Self {
        Self {
            spec: spec.into(),
            timeout: Duration::from_secs(120),
        }
    }
}

type Factory = Box<dyn Fn(&BackendConfig) -> Result<Arc<dyn Backend>> + Send + Sync>;

/// Name → backend factory.
pub struct BackendRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("procedural", |_| Ok(Arc::new(ProceduralBackend::new())));
        reg.register("http", |cfg| {
            Ok(Arc::new(HttpBackend::new(&cfg.spec, cfg.timeout)?))
        });
        reg
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BackendConfig) -> Result<Arc<dyn Backend>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// URLs resolve to the `http` factory; anything else is looked up by name.
    pub fn create(&self, config: &BackendConfig) -> Result<Arc<dyn Backend>> {
        let key = if config.spec.starts_with("http://") || config.spec.starts_with("https://") {
            "http"
        } else {
            config.spec.as_str()
        };
        let factory = self.factories.get(key).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown backend `{}` (known: {})",
                config.spec,
                self.factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        factory(config)
    }
}

#[cfg(test)]
pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}
