//! Candidate layout planning.
//!
//! For each subset the planner pins every factor except the probed attribute
//! and then enumerates that attribute's label set in canonical order. Sizes
//! aim at the middle of each legal band; positions use pure-axis offsets or
//! grid-cell centers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::{CanvasLayout, PixelRect, Placement, Point, SpriteAsset};
use crate::seed::SeedPath;
use crate::semantics::{canonical_labels, GridCell, SubsetKind};

use super::measure::measure_layout;
use super::render::rendered_alpha_count;
use super::AttributeProbe;

/// Area-fraction targets for Small / Medium / Large.
pub const ABSOLUTE_SIZE_TARGETS: [f64; 3] = [0.1, 0.5, 0.85];
/// Area-ratio targets (A ÷ B) for smaller / equal / larger.
pub const RELATIVE_SIZE_TARGETS: [f64; 3] = [0.4, 1.0, 2.5];

const RELATIVE_SIZE_B_AREA: f64 = 0.04;
const RELATIVE_SIZE_A_CENTER: Point = Point::new(0.27, 0.5);
const RELATIVE_SIZE_B_CENTER: Point = Point::new(0.73, 0.5);
const ABSOLUTE_POSITION_AREA: f64 = 0.04;
const RELATIVE_POSITION_AREA: f64 = 0.03;
const RELATIVE_POSITION_OFFSET: f64 = 0.3;
const EXISTENCE_AREA: f64 = 0.05;
/// Count sprites: longest bbox side as a fraction of the shorter canvas side.
pub const COUNT_EXTENT: f64 = 180.0 / 1024.0;
pub const COUNT_MIN_SEP: f64 = 40.0 / 1024.0;

/// The shared background tile spans this multiple of the anchor bbox.
pub const TILE_MARGIN: f64 = 1.5;

const BACKOFF_STEPS: u32 = 3;
const BACKOFF_FACTOR: f64 = 0.9;
const RESTARTS: usize = 100;
const TRIES_PER_OBJECT: usize = 400;

/// Scale at which `sprite` renders with about `target_pixels` alpha pixels.
pub fn scale_for_area(sprite: &SpriteAsset, target_pixels: f64) -> f64 {
    let base = sprite.alpha_count() as f64;
    let mut scale = (target_pixels / base).sqrt();
    for _ in 0..6 {
        let got = rendered_alpha_count(sprite, scale) as f64;
        if (got / target_pixels - 1.0).abs() < 0.002 {
            break;
        }
        scale *= (target_pixels / got).sqrt();
    }
    scale
}

/// Tile box (canvas coordinates) centered on `anchor`.
pub fn tile_box(anchor: &PixelRect, tile_w: u32, tile_h: u32) -> PixelRect {
    let cx = anchor.x + (anchor.width / 2) as i64;
    let cy = anchor.y + (anchor.height / 2) as i64;
    PixelRect::new(
        cx - (tile_w / 2) as i64,
        cy - (tile_h / 2) as i64,
        tile_w,
        tile_h,
    )
}

pub fn tile_size(anchor_w: u32, anchor_h: u32) -> (u32, u32) {
    (
        (anchor_w as f64 * TILE_MARGIN).ceil() as u32,
        (anchor_h as f64 * TILE_MARGIN).ceil() as u32,
    )
}

/// Sample `n` occlusion-free centers for an object of pixel size `extent`.
///
/// Every returned placement has `sprite = 0`, `z = index`, and `scale` set to
/// the back-off factor that was needed (1.0, 0.9, 0.81 or 0.729), relative
/// to `extent`.
pub fn place_non_overlapping(
    n: usize,
    extent: (u32, u32),
    canvas: (u32, u32),
    min_sep: f64,
    seed: u64,
) -> Result<Vec<Placement>> {
    place_non_overlapping_with(n, extent, canvas, min_sep, seed, None)
}

/// As [`place_non_overlapping`]; with `anchor_keepout = Some(m)` no later
/// object may intersect the first object's bbox grown by factor `m`.
pub fn place_non_overlapping_with(
    n: usize,
    extent: (u32, u32),
    canvas: (u32, u32),
    min_sep: f64,
    seed: u64,
    anchor_keepout: Option<f64>,
) -> Result<Vec<Placement>> {
    if !(1..=9).contains(&n) {
        return Err(Error::InvalidInput(format!(
            "object count {n} outside 1..=9"
        )));
    }
    let (cw, ch) = canvas;
    let mut backoff = 1.0;
    for step in 0..=BACKOFF_STEPS {
        if step > 0 {
            backoff *= BACKOFF_FACTOR;
        }
        let mut rng = SeedPath::root(seed).push("backoff", step as u64).rng();
        let probe = Placement {
            sprite: 0,
            center: Point::new(0.5, 0.5),
            scale: backoff,
            z: 0,
        };
        let r = probe.pixel_rect(extent.0, extent.1, cw, ch);
        if r.width > cw || r.height > ch {
            continue;
        }
        let (hx, hy) = (
            r.width as f64 / 2.0 / cw as f64,
            r.height as f64 / 2.0 / ch as f64,
        );
        'restart: for _ in 0..RESTARTS {
            let mut placed: Vec<(Placement, PixelRect)> = Vec::with_capacity(n);
            let mut keepout: Option<PixelRect> = None;
            for i in 0..n {
                let mut ok = false;
                for _ in 0..TRIES_PER_OBJECT {
                    let c = Point::new(rng.gen_range(hx..=1.0 - hx), rng.gen_range(hy..=1.0 - hy));
                    let p = Placement {
                        sprite: 0,
                        center: c,
                        scale: backoff,
                        z: i as i32,
                    };
                    let rect = p.pixel_rect(extent.0, extent.1, cw, ch);
                    if !rect.inside(cw, ch) {
                        continue;
                    }
                    let clash = placed.iter().any(|(q, qr)| {
                        let dx = (q.center.x - c.x) * cw as f64;
                        let dy = (q.center.y - c.y) * ch as f64;
                        qr.intersection(&rect).is_some() || (dx * dx + dy * dy).sqrt() < min_sep
                    }) || keepout.is_some_and(|k| k.intersection(&rect).is_some());
                    if clash {
                        continue;
                    }
                    if i == 0 {
                        if let Some(m) = anchor_keepout {
                            let tw = (rect.width as f64 * m).ceil() as u32;
                            let th = (rect.height as f64 * m).ceil() as u32;
                            keepout = Some(tile_box(&rect, tw, th));
                        }
                    }
                    placed.push((p, rect));
                    ok = true;
                    break;
                }
                if !ok {
                    continue 'restart;
                }
            }
            return Ok(placed.into_iter().map(|(p, _)| p).collect());
        }
    }
    Err(Error::InfeasiblePlacement {
        n,
        final_scale: backoff,
    })
}

fn infeasible(subset: SubsetKind, reason: impl Into<String>) -> Error {
    Error::InfeasibleProbe {
        subset,
        reason: reason.into(),
    }
}

/// Plan the K candidate layouts of `probe`, in canonical label order.
///
/// Each layout is re-measured before returning; a layout whose measured label
/// differs from the intended one makes the whole probe infeasible.
pub fn plan_candidate_layouts(probe: &AttributeProbe) -> Result<Vec<CanvasLayout>> {
    probe.validate()?;
    let subset = probe.subset;
    let (cw, ch) = (probe.canvas_width, probe.canvas_height);
    let canvas_area = cw as f64 * ch as f64;
    let seed = probe.root_seed;
    let layout = |i: usize, placements: Vec<Placement>| CanvasLayout {
        width: cw,
        height: ch,
        placements,
        background_prompt: probe.background_prompt.clone(),
        layout_seed: SeedPath::root(seed).push("layout", i as u64).seed(),
    };
    let single = |sprite: usize, center: Point, scale: f64| Placement {
        sprite,
        center,
        scale,
        z: sprite as i32,
    };

    let layouts: Vec<CanvasLayout> = match subset {
        SubsetKind::AbsoluteSize => {
            let s = &probe.sprites[0];
            ABSOLUTE_SIZE_TARGETS
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let scale = scale_for_area(s, p * canvas_area);
                    layout(i, vec![single(0, Point::new(0.5, 0.5), scale)])
                })
                .collect()
        }
        SubsetKind::RelativeSize => {
            let (a, b) = (&probe.sprites[0], &probe.sprites[1]);
            let b_scale = scale_for_area(b, RELATIVE_SIZE_B_AREA * canvas_area);
            let b_area = super::render::rendered_alpha_count(b, b_scale) as f64;
            let b_place = single(1, RELATIVE_SIZE_B_CENTER, b_scale);
            RELATIVE_SIZE_TARGETS
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let a_scale = scale_for_area(a, r * b_area);
                    layout(
                        i,
                        vec![single(0, RELATIVE_SIZE_A_CENTER, a_scale), b_place.clone()],
                    )
                })
                .collect()
        }
        SubsetKind::AbsolutePosition => {
            let s = &probe.sprites[0];
            let scale = scale_for_area(s, ABSOLUTE_POSITION_AREA * canvas_area);
            GridCell::ALL
                .iter()
                .enumerate()
                .map(|(i, cell)| layout(i, vec![single(0, cell.center(), scale)]))
                .collect()
        }
        SubsetKind::RelativePosition => {
            let (a, b) = (&probe.sprites[0], &probe.sprites[1]);
            let a_scale = scale_for_area(a, RELATIVE_POSITION_AREA * canvas_area);
            let b_scale = scale_for_area(b, RELATIVE_POSITION_AREA * canvas_area);
            let b_place = single(1, Point::new(0.5, 0.5), b_scale);
            let d = RELATIVE_POSITION_OFFSET;
            [(-d, 0.0), (d, 0.0), (0.0, -d), (0.0, d)]
                .iter()
                .enumerate()
                .map(|(i, (dx, dy))| {
                    layout(
                        i,
                        vec![
                            single(0, Point::new(0.5 + dx, 0.5 + dy), a_scale),
                            b_place.clone(),
                        ],
                    )
                })
                .collect()
        }
        SubsetKind::Existence => {
            let s = &probe.sprites[0];
            let scale = scale_for_area(s, EXISTENCE_AREA * canvas_area);
            let mut rng = SeedPath::root(seed).push("existence-center", 0).rng();
            let c = Point::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
            vec![layout(0, vec![]), layout(1, vec![single(0, c, scale)])]
        }
        SubsetKind::Count => {
            let s = &probe.sprites[0];
            let side = cw.min(ch) as f64;
            let base = COUNT_EXTENT * side / s.bbox.width.max(s.bbox.height) as f64;
            let extent = (
                ((s.bbox.width as f64 * base).round() as u32).max(1),
                ((s.bbox.height as f64 * base).round() as u32).max(1),
            );
            let packed = place_non_overlapping_with(
                9,
                extent,
                (cw, ch),
                COUNT_MIN_SEP * side,
                SeedPath::root(seed).push("count-placement", 0).seed(),
                Some(TILE_MARGIN),
            )
            .map_err(|e| infeasible(subset, e.to_string()))?;
            // Scale relative to the native bbox; the extent was already rounded,
            // so recompute from the final pixel size to keep rects identical.
            let scale = base * packed[0].scale;
            let all: Vec<Placement> = packed
                .iter()
                .enumerate()
                .map(|(i, p)| Placement {
                    sprite: 0,
                    center: p.center,
                    scale,
                    z: i as i32,
                })
                .collect();
            (1..=9).map(|n| layout(n - 1, all[..n].to_vec())).collect()
        }
    };

    let occlusion_free = matches!(subset, SubsetKind::Count | SubsetKind::Existence);
    for (l, want) in layouts.iter().zip(canonical_labels(subset)) {
        l.validate(&probe.sprites, occlusion_free)
            .map_err(|e| infeasible(subset, e.to_string()))?;
        let got = measure_layout(l, &probe.sprites, subset)
            .map_err(|e| infeasible(subset, e.to_string()))?;
        if got != want {
            return Err(infeasible(
                subset,
                format!("layout measured as {got:?}, intended {want:?}"),
            ));
        }
    }
    Ok(layouts)
}

/// Report every factor that should be pinned across `layouts` but is not.
pub fn fixed_context_violations(subset: SubsetKind, layouts: &[CanvasLayout]) -> Vec<String> {
    let mut out = Vec::new();
    let Some(first) = layouts.first() else {
        return out;
    };
    for (i, l) in layouts.iter().enumerate().skip(1) {
        if (l.width, l.height) != (first.width, first.height) {
            out.push(format!("candidate {i}: canvas size differs"));
        }
        if l.background_prompt != first.background_prompt {
            out.push(format!("candidate {i}: background prompt differs"));
        }
    }
    let want = |i: usize, n: usize, out: &mut Vec<String>| {
        let got = layouts[i].placements.len();
        if got != n {
            out.push(format!("candidate {i}: {got} placements, expected {n}"));
            false
        } else {
            true
        }
    };
    let mut pinned = |i: usize, what: &str, same: bool| {
        if !same {
            out.push(format!("candidate {i}: {what} differs from candidate 0"));
        }
    };
    let mut shape_ok = true;
    let mut shape = Vec::new();
    for i in 0..layouts.len() {
        let n = match subset {
            SubsetKind::RelativeSize | SubsetKind::RelativePosition => 2,
            SubsetKind::Existence => i,
            SubsetKind::Count => i + 1,
            _ => 1,
        };
        shape_ok &= want(i, n, &mut shape);
    }
    if !shape_ok {
        return shape;
    }
    let p0 = &first.placements;
    for (i, l) in layouts.iter().enumerate().skip(1) {
        let p = &l.placements;
        match subset {
            SubsetKind::AbsoluteSize => {
                pinned(i, "object center", p[0].center == p0[0].center);
                pinned(i, "sprite", p[0].sprite == p0[0].sprite);
            }
            SubsetKind::RelativeSize => {
                pinned(i, "object B placement", p[1] == p0[1]);
                pinned(i, "object A center", p[0].center == p0[0].center);
            }
            SubsetKind::AbsolutePosition => {
                pinned(i, "object scale", p[0].scale == p0[0].scale);
                pinned(i, "sprite", p[0].sprite == p0[0].sprite);
            }
            SubsetKind::RelativePosition => {
                pinned(i, "object B placement", p[1] == p0[1]);
                pinned(i, "object A scale", p[0].scale == p0[0].scale);
            }
            SubsetKind::Existence => {}
            SubsetKind::Count => {
                let prev = &layouts[i - 1].placements;
                pinned(i, "earlier placements", p[..prev.len()] == prev[..]);
                pinned(i, "object scale", p.iter().all(|q| q.scale == p0[0].scale));
            }
        }
    }
    out
}
