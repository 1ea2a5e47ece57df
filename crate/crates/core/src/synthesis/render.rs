//! Nearest-neighbor sprite rasterization and alpha-over compositing.

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, CanvasLayout, PixelRect, Placement, RasterImage, SpriteAsset};

/// A sprite resampled to its on-canvas size.
#[derive(Debug, Clone)]
pub struct RenderedSprite {
    pub rect: PixelRect,
    /// `rect`-sized alpha.
    pub alpha: BinaryMask,
    /// `rect`-sized RGBA.
    pub rgba: RasterImage,
}

fn source_index(dst: u32, dst_len: u32, src_len: u32) -> u32 {
    (((dst as u64 * 2 + 1) * src_len as u64) / (dst_len as u64 * 2)) as u32
}

pub fn render_sprite(
    sprite: &SpriteAsset,
    placement: &Placement,
    canvas_w: u32,
    canvas_h: u32,
) -> RenderedSprite {
    let rect = placement.pixel_rect(sprite.bbox.width, sprite.bbox.height, canvas_w, canvas_h);
    let (w, h) = (rect.width, rect.height);
    let mut alpha = BinaryMask::empty(w, h);
    let mut rgba = RasterImage::transparent(w, h);
    let (bx, by) = (sprite.bbox.x as u32, sprite.bbox.y as u32);
    for y in 0..h {
        let sy = by + source_index(y, h, sprite.bbox.height);
        for x in 0..w {
            let sx = bx + source_index(x, w, sprite.bbox.width);
            if sprite.alpha.get(sx, sy) {
                alpha.set(x, y, true);
                rgba.put(x, y, sprite.raster.get(sx, sy));
            }
        }
    }
    RenderedSprite { rect, alpha, rgba }
}

/// Alpha pixel count of `sprite` rendered at `scale` (position-independent).
pub fn rendered_alpha_count(sprite: &SpriteAsset, scale: f64) -> usize {
    let w = ((sprite.bbox.width as f64 * scale).round() as u32).max(1);
    let h = ((sprite.bbox.height as f64 * scale).round() as u32).max(1);
    let (bx, by) = (sprite.bbox.x as u32, sprite.bbox.y as u32);
    let cols: Vec<u32> = (0..w)
        .map(|x| bx + source_index(x, w, sprite.bbox.width))
        .collect();
    let mut n = 0;
    for y in 0..h {
        let sy = by + source_index(y, h, sprite.bbox.height);
        n += cols.iter().filter(|sx| sprite.alpha.get(**sx, sy)).count();
    }
    n
}

impl RenderedSprite {
    /// Full-canvas mask of this sprite's alpha.
    pub fn canvas_mask(&self, canvas_w: u32, canvas_h: u32) -> BinaryMask {
        let mut m = BinaryMask::empty(canvas_w, canvas_h);
        self.for_each_canvas_pixel(canvas_w, canvas_h, |x, y, _, _| m.set(x, y, true));
        m
    }

    /// Visit alpha pixels that land on the canvas: `(canvas_x, canvas_y, local_x, local_y)`.
    pub fn for_each_canvas_pixel<F: FnMut(u32, u32, u32, u32)>(
        &self,
        canvas_w: u32,
        canvas_h: u32,
        mut f: F,
    ) {
        for ly in 0..self.rect.height {
            let cy = self.rect.y + ly as i64;
            if cy < 0 || cy >= canvas_h as i64 {
                continue;
            }
            for lx in 0..self.rect.width {
                let cx = self.rect.x + lx as i64;
                if cx < 0 || cx >= canvas_w as i64 {
                    continue;
                }
                if self.alpha.get(lx, ly) {
                    f(cx as u32, cy as u32, lx, ly);
                }
            }
        }
    }
}

/// Output of [`composite`].
#[derive(Debug, Clone)]
pub struct Composite {
    /// Sprites over a fully transparent background.
    pub image: RasterImage,
    pub union_mask: BinaryMask,
    /// One full-canvas mask per placement, in placement order.
    pub object_masks: Vec<BinaryMask>,
}

/// Paste every placement in z-order (ties keep list order) onto a blank canvas.
pub fn composite(layout: &CanvasLayout, sprites: &[SpriteAsset]) -> Result<Composite> {
    let (w, h) = (layout.width, layout.height);
    let mut image = RasterImage::transparent(w, h);
    let mut union_mask = BinaryMask::empty(w, h);
    let mut rendered = Vec::with_capacity(layout.placements.len());
    for p in &layout.placements {
        let sprite = sprites.get(p.sprite).ok_or_else(|| {
            Error::InvalidInput(format!("unresolved sprite reference {}", p.sprite))
        })?;
        rendered.push(render_sprite(sprite, p, w, h));
    }
    let mut order: Vec<usize> = (0..rendered.len()).collect();
    order.sort_by_key(|i| layout.placements[*i].z);
    for i in order {
        let r = &rendered[i];
        r.for_each_canvas_pixel(w, h, |cx, cy, lx, ly| {
            image.put(cx, cy, r.rgba.get(lx, ly));
            union_mask.set(cx, cy, true);
        });
    }
    let object_masks = rendered.iter().map(|r| r.canvas_mask(w, h)).collect();
    Ok(Composite {
        image,
        union_mask,
        object_masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point;
    use crate::vocab::Category;

    /// A solid `w`×`h` sprite inside a slightly larger frame.
    pub(crate) fn block_sprite(w: u32, h: u32, color: [u8; 4]) -> SpriteAsset {
        let mut img = RasterImage::transparent(w + 2, h + 2);
        let mut alpha = BinaryMask::empty(w + 2, h + 2);
        for y in 1..=h {
            for x in 1..=w {
                img.put(x, y, color);
                alpha.set(x, y, true);
            }
        }
        SpriteAsset::cut_out(Category::new("cup").unwrap(), &img, alpha, 0).unwrap()
    }

    fn layout(ps: Vec<Placement>) -> CanvasLayout {
        CanvasLayout {
            width: 64,
            height: 64,
            placements: ps,
            background_prompt: "x".into(),
            layout_seed: 0,
        }
    }

    fn at(x: f64, y: f64, scale: f64) -> Placement {
        Placement {
            sprite: 0,
            center: Point::new(x, y),
            scale,
            z: 0,
        }
    }

    #[test]
    fn empty_layout_is_transparent() {
        let s = block_sprite(4, 4, [200, 0, 0, 255]);
        let c = composite(&layout(vec![]), &[s]).unwrap();
        assert_eq!(c.image, RasterImage::transparent(64, 64));
        assert_eq!(c.union_mask.count(), 0);
    }

    #[test]
    fn single_placement_mask_matches_scaled_alpha() {
        let s = block_sprite(5, 7, [200, 0, 0, 255]);
        let c = composite(&layout(vec![at(0.5, 0.5, 2.0)]), std::slice::from_ref(&s)).unwrap();
        assert_eq!(c.union_mask.count(), rendered_alpha_count(&s, 2.0));
        assert_eq!(c.union_mask.count(), 10 * 14);
    }

    #[test]
    fn disjoint_placements_add_up() {
        let s = block_sprite(6, 6, [0, 200, 0, 255]);
        let c = composite(
            &layout(vec![at(0.25, 0.25, 1.0), at(0.75, 0.75, 1.5)]),
            &[s],
        )
        .unwrap();
        assert_eq!(c.union_mask.count(), 36 + 81);
        assert_eq!(c.object_masks.len(), 2);
        assert!(!c.object_masks[0].intersects(&c.object_masks[1]));
    }

    #[test]
    fn higher_z_paints_last() {
        let red = block_sprite(8, 8, [255, 0, 0, 255]);
        let blue = block_sprite(8, 8, [0, 0, 255, 255]);
        let mut l = layout(vec![
            Placement {
                sprite: 1,
                center: Point::new(0.5, 0.5),
                scale: 1.0,
                z: 5,
            },
            Placement {
                sprite: 0,
                center: Point::new(0.5, 0.5),
                scale: 1.0,
                z: 1,
            },
        ]);
        let c = composite(&l, &[red.clone(), blue.clone()]).unwrap();
        assert_eq!(c.image.get(32, 32), [0, 0, 255, 255]);
        l.placements[0].z = 0;
        let c = composite(&l, &[red, blue]).unwrap();
        assert_eq!(c.image.get(32, 32), [255, 0, 0, 255]);
    }

    #[test]
    fn unresolved_sprite_is_an_error() {
        let mut p = at(0.5, 0.5, 1.0);
        p.sprite = 3;
        assert!(composite(&layout(vec![p]), &[]).is_err());
    }
}
