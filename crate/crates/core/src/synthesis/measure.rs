//! Re-derive a candidate's label from rendered object masks.

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, CanvasLayout, Point, SpriteAsset};
use crate::semantics::{
    classify_absolute_position, classify_absolute_size, classify_existence,
    classify_relative_position, classify_relative_size, CountLabel, Label, SubsetKind,
};

use super::render::composite;

/// Center of the mask's tight bbox in normalized coordinates.
pub fn mask_center(mask: &BinaryMask) -> Option<Point> {
    let b = mask.bbox()?;
    Some(Point::new(
        (b.x as f64 + b.width as f64 / 2.0) / mask.width() as f64,
        (b.y as f64 + b.height as f64 / 2.0) / mask.height() as f64,
    ))
}

fn expect_objects(subset: SubsetKind, masks: &[BinaryMask], n: usize) -> Result<()> {
    if masks.len() != n {
        return Err(Error::Cardinality {
            what: match subset {
                SubsetKind::RelativeSize | SubsetKind::RelativePosition => {
                    "objects (two-object subset)"
                }
                _ => "objects (single-object subset)",
            },
            expected: n,
            got: masks.len(),
        });
    }
    Ok(())
}

fn center_of(mask: &BinaryMask) -> Result<Point> {
    mask_center(mask).ok_or_else(|| Error::InvalidInput("object mask is empty".into()))
}

/// Measure the subset label from per-object canvas masks (one per placed
/// object, placement order). Fails on Unclassified measurements.
pub fn measure_object_masks(
    subset: SubsetKind,
    masks: &[BinaryMask],
    width: u32,
    height: u32,
) -> Result<Label> {
    if masks
        .iter()
        .any(|m| m.width() != width || m.height() != height)
    {
        return Err(Error::InvalidInput(
            "object mask size differs from the canvas".into(),
        ));
    }
    let canvas = width as f64 * height as f64;
    match subset {
        SubsetKind::AbsoluteSize => {
            expect_objects(subset, masks, 1)?;
            let p = masks[0].count() as f64 / canvas;
            classify_absolute_size(p)?
                .map(Label::Size)
                .ok_or(Error::Unclassified {
                    what: "area fraction P",
                    value: p,
                })
        }
        SubsetKind::RelativeSize => {
            expect_objects(subset, masks, 2)?;
            let (a, b) = (masks[0].count() as f64, masks[1].count() as f64);
            classify_relative_size(a, b)?
                .map(Label::RelSize)
                .ok_or(Error::Unclassified {
                    what: "area ratio R",
                    value: a / b,
                })
        }
        SubsetKind::AbsolutePosition => {
            expect_objects(subset, masks, 1)?;
            Ok(Label::Cell(classify_absolute_position(center_of(
                &masks[0],
            )?)?))
        }
        SubsetKind::RelativePosition => {
            expect_objects(subset, masks, 2)?;
            Ok(Label::Relation(classify_relative_position(
                center_of(&masks[0])?,
                center_of(&masks[1])?,
            )?))
        }
        SubsetKind::Existence => {
            let n = masks.iter().filter(|m| m.count() > 0).count();
            Ok(Label::Existence(classify_existence(n)))
        }
        SubsetKind::Count => {
            let n = masks.iter().filter(|m| m.count() > 0).count();
            Ok(Label::Count(CountLabel::new(n.min(255) as u8)?))
        }
    }
}

/// Render `layout` and measure its label.
pub fn measure_layout(
    layout: &CanvasLayout,
    sprites: &[SpriteAsset],
    subset: SubsetKind,
) -> Result<Label> {
    let c = composite(layout, sprites)?;
    measure_object_masks(subset, &c.object_masks, layout.width, layout.height)
}
