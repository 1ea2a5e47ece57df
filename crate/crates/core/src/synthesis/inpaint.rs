//! Consistent-background inpainting.
//!
//! One shared step paints a background tile around the anchor object. Every
//! candidate then receives a verbatim copy of that tile (minus the anchor
//! hole) at its own anchor position, its sprites on top, and a per-candidate
//! fill of whatever is still blank.

use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend};
use crate::error::{Error, Result};
use crate::scene::{BinaryMask, CanvasLayout, PixelRect, RasterImage};
use crate::seed::SeedPath;
use crate::semantics::SubsetKind;

use super::layout::{tile_box, tile_size};
use super::render::{render_sprite, Composite};
use super::AttributeProbe;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum StepTarget {
    Shared,
    Candidate(usize),
}

/// One masked fill. Candidate conditioning rasters hold only the sprites; the
/// shared tile is pasted in when the step runs.
#[derive(Debug, Clone)]
pub struct InpaintStep {
    pub target: StepTarget,
    pub mask: BinaryMask,
    pub conditioning: RasterImage,
    pub prompt: String,
    pub seed: u64,
}

/// Geometry of the shared tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub width: u32,
    pub height: u32,
    /// Tile placement on each candidate canvas; may extend past the canvas edge.
    pub boxes: Vec<PixelRect>,
}

#[derive(Debug, Clone)]
pub struct InpaintPlan {
    pub subset: SubsetKind,
    pub steps: Vec<InpaintStep>,
    pub tile: TileRecord,
    /// Tile-sized union of every candidate's anchor alpha; never copied.
    pub hole: BinaryMask,
    /// Per candidate, one canvas mask per placed object.
    pub object_masks: Vec<Vec<BinaryMask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based; step 1 is the shared step.
    pub step: usize,
    pub target: StepTarget,
    pub seed: u64,
    pub prompt: String,
    pub mask_box: Option<PixelRect>,
    pub masked_pixels: usize,
}

/// Audit record of a plan, persisted next to the candidate images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub format_version: u32,
    pub subset: SubsetKind,
    pub tile: TileRecord,
    pub steps: Vec<TraceStep>,
}

impl InpaintPlan {
    pub fn k(&self) -> usize {
        self.tile.boxes.len()
    }

    pub fn trace(&self) -> PlanTrace {
        PlanTrace {
            format_version: PLAN_FORMAT_VERSION,
            subset: self.subset,
            tile: self.tile.clone(),
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| TraceStep {
                    step: i + 1,
                    target: s.target,
                    seed: s.seed,
                    prompt: s.prompt.clone(),
                    mask_box: s.mask.bbox(),
                    masked_pixels: s.mask.count(),
                })
                .collect(),
        }
    }

    /// Canvas pixels of candidate `c` that receive tile pixels.
    pub fn tile_core(&self, c: usize, canvas_w: u32, canvas_h: u32) -> BinaryMask {
        tile_core(&self.hole, &self.tile.boxes[c], canvas_w, canvas_h)
    }
}

/// Visit tile pixels outside `hole` that land on the canvas:
/// `(tile_x, tile_y, canvas_x, canvas_y)`.
fn for_each_core_pixel<F: FnMut(u32, u32, u32, u32)>(
    hole: &BinaryMask,
    bx: &PixelRect,
    cw: u32,
    ch: u32,
    mut f: F,
) {
    for ty in 0..hole.height() {
        let y = bx.y + ty as i64;
        if y < 0 || y >= ch as i64 {
            continue;
        }
        for tx in 0..hole.width() {
            let x = bx.x + tx as i64;
            if x < 0 || x >= cw as i64 || hole.get(tx, ty) {
                continue;
            }
            f(tx, ty, x as u32, y as u32);
        }
    }
}

pub fn tile_core(hole: &BinaryMask, bx: &PixelRect, canvas_w: u32, canvas_h: u32) -> BinaryMask {
    let mut m = BinaryMask::empty(canvas_w, canvas_h);
    for_each_core_pixel(hole, bx, canvas_w, canvas_h, |_, _, x, y| m.set(x, y, true));
    m
}

fn infeasible(subset: SubsetKind, reason: String) -> Error {
    Error::InfeasibleProbe { subset, reason }
}

/// Plan the shared step and the K per-candidate steps.
///
/// The anchor is placement 0: the single object, object A, or for Existence
/// the positive candidate's object (whose tile location the empty candidate
/// reuses).
pub fn build_inpaint_plan(
    layouts: &[CanvasLayout],
    composites: &[Composite],
    probe: &AttributeProbe,
) -> Result<InpaintPlan> {
    let subset = probe.subset;
    let k = crate::semantics::subset_cardinality(subset);
    if layouts.len() != k || composites.len() != k {
        return Err(Error::Cardinality {
            what: "candidate layouts",
            expected: k,
            got: layouts.len().min(composites.len()),
        });
    }
    let (cw, ch) = (probe.canvas_width, probe.canvas_height);
    if layouts.iter().any(|l| l.width != cw || l.height != ch) {
        return Err(Error::InvalidInput(
            "layouts disagree with the probe canvas".into(),
        ));
    }

    let anchor_of = |c: usize| -> Result<&crate::scene::Placement> {
        let l = if subset == SubsetKind::Existence {
            layouts
                .iter()
                .find(|l| !l.placements.is_empty())
                .ok_or_else(|| infeasible(subset, "no positive candidate to anchor on".into()))?
        } else {
            &layouts[c]
        };
        l.placements
            .first()
            .ok_or_else(|| infeasible(subset, format!("candidate {c} has no anchor object")))
    };
    let mut anchors = Vec::with_capacity(k);
    for c in 0..k {
        let p = anchor_of(c)?;
        let sprite = probe.sprites.get(p.sprite).ok_or_else(|| {
            Error::InvalidInput(format!("unresolved sprite reference {}", p.sprite))
        })?;
        anchors.push(render_sprite(sprite, p, cw, ch));
    }

    let max_w = anchors.iter().map(|a| a.rect.width).max().unwrap_or(1);
    let max_h = anchors.iter().map(|a| a.rect.height).max().unwrap_or(1);
    let (tw, th) = tile_size(max_w, max_h);
    let boxes: Vec<PixelRect> = anchors.iter().map(|a| tile_box(&a.rect, tw, th)).collect();

    let mut hole = BinaryMask::empty(tw, th);
    for (a, bx) in anchors.iter().zip(&boxes) {
        let (ox, oy) = (a.rect.x - bx.x, a.rect.y - bx.y);
        for ly in 0..a.rect.height {
            for lx in 0..a.rect.width {
                if a.alpha.get(lx, ly) {
                    hole.set((ox + lx as i64) as u32, (oy + ly as i64) as u32, true);
                }
            }
        }
    }

    let largest = (0..k)
        .max_by_key(|c| (anchors[*c].rect.area(), std::cmp::Reverse(*c)))
        .unwrap_or(0);
    let mut shared_cond = RasterImage::transparent(tw, th);
    {
        let a = &anchors[largest];
        let bx = &boxes[largest];
        let (ox, oy) = (a.rect.x - bx.x, a.rect.y - bx.y);
        for ly in 0..a.rect.height {
            for lx in 0..a.rect.width {
                if a.alpha.get(lx, ly) {
                    shared_cond.put(
                        (ox + lx as i64) as u32,
                        (oy + ly as i64) as u32,
                        a.rgba.get(lx, ly),
                    );
                }
            }
        }
    }
    let mut shared_mask = BinaryMask::full(tw, th);
    for ty in 0..th {
        for tx in 0..tw {
            if hole.get(tx, ty) {
                shared_mask.set(tx, ty, false);
            }
        }
    }

    let root = SeedPath::root(probe.root_seed);
    let mut steps = Vec::with_capacity(k + 1);
    steps.push(InpaintStep {
        target: StepTarget::Shared,
        mask: shared_mask,
        conditioning: shared_cond,
        prompt: probe.background_prompt.clone(),
        seed: root.clone().push("inpaint-shared", 0).seed(),
    });

    for c in 0..k {
        let core = tile_core(&hole, &boxes[c], cw, ch);
        let comp = &composites[c];
        let anchored = subset != SubsetKind::Existence || !layouts[c].placements.is_empty();
        for (j, m) in comp.object_masks.iter().enumerate() {
            if anchored && j == 0 {
                continue;
            }
            if m.intersects(&core) {
                return Err(infeasible(
                    subset,
                    format!("object {j} of candidate {c} overlaps the shared tile"),
                ));
            }
        }
        let mut mask = BinaryMask::full(cw, ch);
        for y in 0..ch {
            for x in 0..cw {
                if core.get(x, y) || comp.union_mask.get(x, y) {
                    mask.set(x, y, false);
                }
            }
        }
        steps.push(InpaintStep {
            target: StepTarget::Candidate(c),
            mask,
            conditioning: comp.image.clone(),
            prompt: probe.background_prompt.clone(),
            seed: root.clone().push("inpaint-candidate", c as u64).seed(),
        });
    }

    Ok(InpaintPlan {
        subset,
        steps,
        tile: TileRecord {
            width: tw,
            height: th,
            boxes,
        },
        hole,
        object_masks: composites.iter().map(|c| c.object_masks.clone()).collect(),
    })
}

/// Finished candidate set.
#[derive(Debug, Clone)]
pub struct CandidateImages {
    pub images: Vec<RasterImage>,
    pub object_masks: Vec<Vec<BinaryMask>>,
    pub tile: TileRecord,
    pub hole: BinaryMask,
}

fn check_preserved(before: &RasterImage, after: &RasterImage, mask: &BinaryMask) -> Result<()> {
    for y in 0..before.height() {
        for x in 0..before.width() {
            if !mask.get(x, y) && before.get(x, y) != after.get(x, y) {
                return Err(Error::Backend(format!(
                    "inpaint altered unmasked pixel ({x},{y})"
                )));
            }
        }
    }
    Ok(())
}

fn run_step(
    backend: &dyn Backend,
    step_no: usize,
    input: &RasterImage,
    s: &InpaintStep,
) -> Result<RasterImage> {
    let wrap = |e: Error| Error::Step {
        step: step_no,
        source: Box::new(e),
    };
    let out = backend::inpaint(backend, input, &s.mask, &s.prompt, s.seed).map_err(wrap)?;
    check_preserved(input, &out, &s.mask).map_err(wrap)?;
    Ok(out)
}

/// Run every step in order. Any failure names its 1-based step index and
/// discards the partial results.
pub fn execute_inpaint_plan(plan: &InpaintPlan, backend: &dyn Backend) -> Result<CandidateImages> {
    let (shared, rest) = plan
        .steps
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty inpaint plan".into()))?;
    if shared.target != StepTarget::Shared {
        return Err(Error::InvalidInput(
            "first plan step must be the shared step".into(),
        ));
    }
    let tile = run_step(backend, 1, &shared.conditioning, shared)?;

    let mut images = Vec::with_capacity(rest.len());
    for (i, s) in rest.iter().enumerate() {
        let StepTarget::Candidate(c) = s.target else {
            return Err(Error::InvalidInput("more than one shared step".into()));
        };
        let mut input = s.conditioning.clone();
        let (cw, ch) = (input.width(), input.height());
        for_each_core_pixel(&plan.hole, &plan.tile.boxes[c], cw, ch, |tx, ty, x, y| {
            input.put(x, y, tile.get(tx, ty));
        });
        images.push(run_step(backend, i + 2, &input, s)?);
    }
    Ok(CandidateImages {
        images,
        object_masks: plan.object_masks.clone(),
        tile: plan.tile.clone(),
        hole: plan.hole.clone(),
    })
}

/// Count tile pixels that are not bit-identical across every candidate on
/// whose canvas they are visible.
pub fn tile_mismatches(images: &[RasterImage], boxes: &[PixelRect], hole: &BinaryMask) -> usize {
    let mut bad = 0;
    for ty in 0..hole.height() {
        for tx in 0..hole.width() {
            if hole.get(tx, ty) {
                continue;
            }
            let mut reference: Option<[u8; 4]> = None;
            let mut mismatch = false;
            for (img, bx) in images.iter().zip(boxes) {
                let (x, y) = (bx.x + tx as i64, bx.y + ty as i64);
                if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
                    continue;
                }
                let px = img.get(x as u32, y as u32);
                match reference {
                    None => reference = Some(px),
                    Some(r) if r != px => mismatch = true,
                    _ => {}
                }
            }
            bad += mismatch as usize;
        }
    }
    bad
}
