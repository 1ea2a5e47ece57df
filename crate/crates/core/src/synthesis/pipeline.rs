//! End-to-end synthesis of one test case.

use rand::seq::index::sample;
use rand::Rng;

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::scene::CanvasLayout;
use crate::seed::SeedPath;
use crate::semantics::{canonical_labels, render_caption, Label, SubsetKind};
use crate::vocab::{Category, CATEGORIES};

use super::inpaint::{build_inpaint_plan, execute_inpaint_plan, CandidateImages, PlanTrace};
use super::layout::plan_candidate_layouts;
use super::render::composite;
use super::{acquire_sprite, AttributeProbe};

/// Infeasible probes are redrawn (new categories and sprites) this many times.
pub const MAX_PROBE_ATTEMPTS: u32 = 8;

pub const BACKGROUND_PROMPTS: [&str; 8] = [
    "a photo of a grassy meadow",
    "a photo of a sandy beach",
    "a photo of a quiet city street",
    "a photo of a living room",
    "a photo of a kitchen counter",
    "a photo of a forest clearing",
    "a photo of a snowy field",
    "a photo of a wooden table",
];

pub fn case_id(subset: SubsetKind, index: u64) -> String {
    format!("{}-{index:06}", subset.as_str())
}

/// Seed of the `attempt`-th probe drawn for case `index`.
pub fn probe_seed(root: u64, subset: SubsetKind, index: u64, attempt: u32) -> u64 {
    SeedPath::root(root)
        .push("synth", 0)
        .push(subset.as_str(), index)
        .push("attempt", attempt as u64)
        .seed()
}

/// Side length of generated object images for a canvas.
pub fn sprite_size(canvas_w: u32, canvas_h: u32) -> u32 {
    (canvas_w.min(canvas_h) / 2).clamp(64, 512)
}

/// Draw categories, sprites and a background prompt for one probe.
pub fn make_probe(
    backend: &dyn Backend,
    subset: SubsetKind,
    seed: u64,
    canvas_w: u32,
    canvas_h: u32,
) -> Result<AttributeProbe> {
    let root = SeedPath::root(seed);
    let mut rng = root.clone().push("categories", 0).rng();
    let categories: Vec<Category> = sample(&mut rng, CATEGORIES.len(), subset.category_count())
        .into_iter()
        .map(Category::from_index)
        .collect();
    let background_prompt =
        BACKGROUND_PROMPTS[rng.gen_range(0..BACKGROUND_PROMPTS.len())].to_string();
    let size = sprite_size(canvas_w, canvas_h);
    let sprites = categories
        .iter()
        .enumerate()
        .map(|(i, c)| {
            acquire_sprite(
                backend,
                c,
                root.clone().push("sprite", i as u64).seed(),
                size,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let probe = AttributeProbe {
        subset,
        categories,
        sprites,
        canvas_width: canvas_w,
        canvas_height: canvas_h,
        background_prompt,
        root_seed: seed,
    };
    probe.validate()?;
    Ok(probe)
}

/// A finished candidate set with everything needed to persist or score it.
#[derive(Debug, Clone)]
pub struct SynthesizedCase {
    pub id: String,
    pub index: u64,
    /// Number of probes drawn before one was feasible.
    pub attempts: u32,
    pub probe: AttributeProbe,
    pub layouts: Vec<CanvasLayout>,
    pub labels: Vec<Label>,
    pub captions: Vec<String>,
    pub candidates: CandidateImages,
    pub trace: PlanTrace,
}

impl SynthesizedCase {
    pub fn subset(&self) -> SubsetKind {
        self.probe.subset
    }
}

fn is_infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::InfeasibleProbe { .. } | Error::InfeasiblePlacement { .. }
    )
}

fn try_probe(
    backend: &dyn Backend,
    probe: &AttributeProbe,
) -> Result<(Vec<CanvasLayout>, CandidateImages, PlanTrace)> {
    let layouts = plan_candidate_layouts(probe)?;
    let composites = layouts
        .iter()
        .map(|l| composite(l, &probe.sprites))
        .collect::<Result<Vec<_>>>()?;
    let plan = build_inpaint_plan(&layouts, &composites, probe)?;
    let trace = plan.trace();
    let images = execute_inpaint_plan(&plan, backend)?;
    Ok((layouts, images, trace))
}

/// Synthesize case `index` of `subset` under `root_seed`.
pub fn synthesize_case(
    backend: &dyn Backend,
    subset: SubsetKind,
    root_seed: u64,
    index: u64,
    canvas_w: u32,
    canvas_h: u32,
) -> Result<SynthesizedCase> {
    let mut last = None;
    for attempt in 0..MAX_PROBE_ATTEMPTS {
        let seed = probe_seed(root_seed, subset, index, attempt);
        let probe = make_probe(backend, subset, seed, canvas_w, canvas_h)?;
        match try_probe(backend, &probe) {
            Ok((layouts, candidates, trace)) => {
                let labels = canonical_labels(subset);
                let captions = labels
                    .iter()
                    .map(|l| render_caption(subset, l, &probe.categories))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(SynthesizedCase {
                    id: case_id(subset, index),
                    index,
                    attempts: attempt + 1,
                    probe,
                    layouts,
                    labels,
                    captions,
                    candidates,
                    trace,
                });
            }
            Err(e) if is_infeasible(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InfeasibleProbe {
        subset,
        reason: "no attempts made".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::procedural::ProceduralBackend;
    use crate::synthesis::inpaint::tile_mismatches;
    use crate::synthesis::measure::measure_object_masks;

    #[test]
    fn every_subset_synthesizes_and_round_trips() {
        let b = ProceduralBackend::new();
        for subset in SubsetKind::ALL {
            for i in 0..4 {
                let case = synthesize_case(&b, subset, 42, i, 256, 256).unwrap();
                let k = crate::semantics::subset_cardinality(subset);
                assert_eq!(case.candidates.images.len(), k);
                assert_eq!(case.captions.len(), k);
                for (c, masks) in case.candidates.object_masks.iter().enumerate() {
                    let got = measure_object_masks(subset, masks, 256, 256).unwrap();
                    assert_eq!(got, case.labels[c]);
                }
                let t = &case.candidates;
                assert_eq!(tile_mismatches(&t.images, &t.tile.boxes, &t.hole), 0);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let b = ProceduralBackend::new();
        let a = synthesize_case(&b, SubsetKind::Count, 7, 3, 192, 192).unwrap();
        let c = synthesize_case(&b, SubsetKind::Count, 7, 3, 192, 192).unwrap();
        assert_eq!(a.candidates.images, c.candidates.images);
        assert_eq!(a.layouts, c.layouts);
        assert_eq!(a.trace, c.trace);
    }

    #[test]
    fn two_object_probes_use_distinct_categories() {
        let b = ProceduralBackend::new();
        for s in 0..20 {
            let p = make_probe(&b, SubsetKind::RelativePosition, s, 128, 128).unwrap();
            assert_ne!(p.categories[0], p.categories[1]);
        }
    }

    #[test]
    fn case_ids_are_zero_padded() {
        assert_eq!(case_id(SubsetKind::Count, 7), "count-000007");
    }
}
