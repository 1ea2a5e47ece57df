//! Value types shared by every stage: rasters, masks, sprites, placements and layouts.
//!
//! Coordinates are normalized to `[0,1]²` with the origin at the top-left and
//! y pointing down. Pixel geometry only appears at rasterization time, via
//! [`Placement::pixel_rect`].

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Category;

pub const DEFAULT_CANVAS: u32 = 1024;

/// RGBA8 raster.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "raster buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Fully transparent raster.
    pub fn transparent(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![0; width as usize * height as usize * 4])
            .expect("positive dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 4] {
        let o = self.offset(x, y);
        [
            self.pixels[o],
            self.pixels[o + 1],
            self.pixels[o + 2],
            self.pixels[o + 3],
        ]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 4]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 4].copy_from_slice(&px);
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = RgbaImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked on construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgba8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct RasterRepr {
    width: u32,
    height: u32,
    rgba_base64: String,
}

impl Serialize for RasterImage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RasterRepr {
            width: self.width,
            height: self.height,
            rgba_base64: B64.encode(&self.pixels),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RasterImage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RasterRepr::deserialize(d)?;
        let pixels = B64
            .decode(r.rgba_base64)
            .map_err(serde::de::Error::custom)?;
        RasterImage::new(r.width, r.height, pixels).map_err(serde::de::Error::custom)
    }
}

/// Boolean pixel grid.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "mask has {} cells, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn same_dims(&self, image: &RasterImage) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    /// Minimal box containing every set pixel, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        any.then(|| PixelRect::new(x0 as i64, y0 as i64, x1 - x0, y1 - y0))
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let raw = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        let img = GrayImage::from_raw(self.width, self.height, raw).expect("sized");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Decodes a 1-channel PNG; any nonzero value counts as set.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::from_bits(w, h, img.into_raw().into_iter().map(|v| v > 0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    width: u32,
    height: u32,
    bits_base64: String,
}

impl Serialize for BinaryMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            if *b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        MaskRepr {
            width: self.width,
            height: self.height,
            bits_base64: B64.encode(packed),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MaskRepr::deserialize(d)?;
        let packed = B64
            .decode(r.bits_base64)
            .map_err(serde::de::Error::custom)?;
        let n = r.width as usize * r.height as usize;
        if packed.len() != n.div_ceil(8) {
            return Err(serde::de::Error::custom("mask payload length mismatch"));
        }
        let bits = (0..n)
            .map(|i| packed[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        BinaryMask::from_bits(r.width, r.height, bits).map_err(serde::de::Error::custom)
    }
}

/// Half-open pixel rectangle. The origin may lie outside a canvas (tiles can
/// overhang the border).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> i64 {
        self.x + self.width as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.height as i64
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn intersection(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn iou(&self, other: &PixelRect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area());
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn inside(&self, width: u32, height: u32) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= width as i64 && self.bottom() <= height as i64
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }
}

/// A normalized point in `[0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

/// A background-free object cutout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteAsset {
    pub category: Category,
    pub raster: RasterImage,
    pub alpha: BinaryMask,
    pub bbox: PixelRect,
    pub source_seed: u64,
}

impl SpriteAsset {
    /// Cut the object out of `image`: pixels outside `alpha` become fully
    /// transparent and the bbox is recomputed tightly.
    pub fn cut_out(
        category: Category,
        image: &RasterImage,
        alpha: BinaryMask,
        source_seed: u64,
    ) -> Result<Self> {
        if !alpha.same_dims(image) {
            return Err(Error::InvalidInput(
                "sprite alpha/raster size mismatch".into(),
            ));
        }
        let bbox = alpha
            .bbox()
            .ok_or_else(|| Error::InvalidInput("sprite alpha is empty".into()))?;
        let mut raster = image.clone();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if alpha.get(x, y) {
                    let mut px = raster.get(x, y);
                    px[3] = 255;
                    raster.put(x, y, px);
                } else {
                    raster.put(x, y, [0, 0, 0, 0]);
                }
            }
        }
        Ok(Self {
            category,
            raster,
            alpha,
            bbox,
            source_seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.same_dims(&self.raster) {
            return Err(Error::InvalidInput(
                "sprite alpha/raster size mismatch".into(),
            ));
        }
        match self.alpha.bbox() {
            None => return Err(Error::InvalidInput("sprite alpha is empty".into())),
            Some(b) if b != self.bbox => {
                return Err(Error::InvalidInput(format!(
                    "sprite bbox {:?} is not tight (expected {b:?})",
                    self.bbox
                )))
            }
            _ => {}
        }
        for y in 0..self.raster.height() {
            for x in 0..self.raster.width() {
                if !self.alpha.get(x, y) && self.raster.get(x, y)[3] != 0 {
                    return Err(Error::InvalidInput(format!(
                        "sprite pixel ({x},{y}) outside alpha is not transparent"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn alpha_count(&self) -> usize {
        self.alpha.count()
    }
}

/// One sprite instance on a canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Index into the probe's sprite list.
    pub sprite: usize,
    pub center: Point,
    pub scale: f64,
    pub z: i32,
}

impl Placement {
    /// Pixel extent of a sprite with native bbox `native_w`×`native_h` under this
    /// placement on a `canvas_w`×`canvas_h` canvas.
    pub fn pixel_rect(
        &self,
        native_w: u32,
        native_h: u32,
        canvas_w: u32,
        canvas_h: u32,
    ) -> PixelRect {
        let w = ((native_w as f64 * self.scale).round() as u32).max(1);
        let h = ((native_h as f64 * self.scale).round() as u32).max(1);
        let x = (self.center.x * canvas_w as f64 - w as f64 / 2.0).round() as i64;
        let y = (self.center.y * canvas_h as f64 - h as f64 / 2.0).round() as i64;
        PixelRect::new(x, y, w, h)
    }
}

/// Placements of sprites on one canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasLayout {
    pub width: u32,
    pub height: u32,
    pub placements: Vec<Placement>,
    pub background_prompt: String,
    pub layout_seed: u64,
}

impl CanvasLayout {
    pub fn rects(&self, sprites: &[SpriteAsset]) -> Result<Vec<PixelRect>> {
        self.placements
            .iter()
            .map(|p| {
                let s = sprites.get(p.sprite).ok_or_else(|| {
                    Error::InvalidInput(format!("unresolved sprite reference {}", p.sprite))
                })?;
                Ok(p.pixel_rect(s.bbox.width, s.bbox.height, self.width, self.height))
            })
            .collect()
    }

    /// Check layout invariants without mutating anything. `occlusion_free`
    /// additionally requires pairwise IoU = 0.
    pub fn validate(&self, sprites: &[SpriteAsset], occlusion_free: bool) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "canvas dimensions must be positive".into(),
            ));
        }
        let rects = self.rects(sprites)?;
        for (p, r) in self.placements.iter().zip(&rects) {
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-positive scale {}",
                    p.scale
                )));
            }
            if !p.center.in_unit_square() {
                return Err(Error::InvalidInput(format!(
                    "center {:?} outside [0,1]²",
                    p.center
                )));
            }
            if !r.inside(self.width, self.height) {
                return Err(Error::InvalidInput(format!(
                    "placement {r:?} is clipped by the {}x{} canvas",
                    self.width, self.height
                )));
            }
        }
        if occlusion_free {
            for i in 0..rects.len() {
                for j in i + 1..rects.len() {
                    if rects[i].iou(&rects[j]) > 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "placements {i} and {j} overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
