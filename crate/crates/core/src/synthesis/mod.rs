//! Progressive construction of candidate sets: sprite acquisition, layout
//! planning, compositing and consistent-background inpainting.

pub mod inpaint;
pub mod layout;
pub mod measure;
pub mod pipeline;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::backend::{generate_object_image, segment_object, Backend};
use crate::error::{Error, Result};
use crate::scene::SpriteAsset;
use crate::semantics::SubsetKind;
use crate::vocab::Category;

pub use inpaint::{
    build_inpaint_plan, execute_inpaint_plan, CandidateImages, InpaintPlan, PlanTrace,
};
pub use layout::{place_non_overlapping, plan_candidate_layouts};
pub use measure::{measure_layout, measure_object_masks};
pub use pipeline::{case_id, synthesize_case, SynthesizedCase};
pub use render::composite;

/// Everything that stays fixed across one candidate set.
///
/// Only the subset's attribute varies between the layouts planned from a
/// probe; sprites, canvas, prompt and every derived seed come from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProbe {
    pub subset: SubsetKind,
    /// Object A first for two-object subsets.
    pub categories: Vec<Category>,
    /// One sprite per category, same order.
    pub sprites: Vec<SpriteAsset>,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub background_prompt: String,
    pub root_seed: u64,
}

impl AttributeProbe {
    pub fn validate(&self) -> Result<()> {
        let want = self.subset.category_count();
        if self.categories.len() != want {
            return Err(Error::Cardinality {
                what: "probe categories",
                expected: want,
                got: self.categories.len(),
            });
        }
        if want == 2 && self.categories[0] == self.categories[1] {
            return Err(Error::InvalidInput(format!(
                "{} needs two distinct categories",
                self.subset
            )));
        }
        if self.sprites.len() != self.categories.len() {
            return Err(Error::Cardinality {
                what: "probe sprites",
                expected: self.categories.len(),
                got: self.sprites.len(),
            });
        }
        for (s, c) in self.sprites.iter().zip(&self.categories) {
            if &s.category != c {
                return Err(Error::InvalidInput(format!(
                    "sprite of `{}` supplied for `{c}`",
                    s.category
                )));
            }
        }
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::InvalidInput(
                "canvas dimensions must be positive".into(),
            ));
        }
        if self.background_prompt.trim().is_empty() {
            return Err(Error::InvalidInput("background prompt is empty".into()));
        }
        Ok(())
    }
}

/// Generate, segment and cut out one object sprite.
pub fn acquire_sprite(
    backend: &dyn Backend,
    category: &Category,
    seed: u64,
    size: u32,
) -> Result<SpriteAsset> {
    let image = generate_object_image(backend, category.as_str(), seed, size, size)?;
    let seg = segment_object(backend, &image, category)?;
    SpriteAsset::cut_out(category.clone(), &image, seg.mask, seed)
}
