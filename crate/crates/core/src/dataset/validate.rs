use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, RasterImage};
use crate::semantics::{canonical_labels, parse_caption, subset_cardinality};
use crate::synthesis::inpaint::tile_mismatches;
use crate::synthesis::layout::fixed_context_violations;
use crate::synthesis::measure::measure_object_masks;

use super::{read_manifest_unverified, referenced_files, verify_file, TestCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Checksum,
    Unreadable,
    Cardinality,
    /// Caption, stored label and measured label disagree.
    Pairing,
    /// A measurement falls in an unclassified band.
    Ambiguity,
    TileConsistency,
    FixedContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub case_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub cases_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Sink<'a> {
    id: &'a str,
    out: Vec<Violation>,
}

impl Sink<'_> {
    fn add(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.out.push(Violation {
            case_id: self.id.to_string(),
            kind,
            detail: detail.into(),
        });
    }
}

fn check_case(
    dir: &Path,
    case: &TestCase,
    sums: &std::collections::BTreeMap<String, String>,
) -> Vec<Violation> {
    let mut v = Sink {
        id: &case.id,
        out: Vec::new(),
    };
    for rel in referenced_files(case) {
        match verify_file(dir, rel, sums) {
            Ok(()) => {}
            Err(Error::Checksum(_)) => {
                v.add(ViolationKind::Checksum, format!("{rel}: checksum mismatch"))
            }
            Err(e) => v.add(ViolationKind::Unreadable, format!("{rel}: {e}")),
        }
    }

    let k = subset_cardinality(case.subset);
    let lens = [
        case.k,
        case.images.len(),
        case.texts.len(),
        case.labels.len(),
        case.object_masks.len(),
        case.tile.boxes.len(),
        case.layouts.len(),
    ];
    if lens.iter().any(|n| *n != k) {
        v.add(
            ViolationKind::Cardinality,
            format!("expected K = {k}, record lengths {lens:?}"),
        );
        return v.out;
    }
    if case.labels != canonical_labels(case.subset) {
        v.add(
            ViolationKind::Pairing,
            "stored labels are not the canonical enumeration",
        );
    }

    for i in 0..k {
        let masks: Result<Vec<BinaryMask>> = case.object_masks[i]
            .iter()
            .map(|p| BinaryMask::load_png(&dir.join(p)))
            .collect();
        let masks = match masks {
            Ok(m) => m,
            Err(e) => {
                v.add(
                    ViolationKind::Unreadable,
                    format!("candidate {i} masks: {e}"),
                );
                continue;
            }
        };
        let described = parse_caption(case.subset, &case.texts[i], &case.categories);
        match measure_object_masks(case.subset, &masks, case.width, case.height) {
            Ok(measured) => {
                if described != Some(measured) {
                    v.add(
                        ViolationKind::Pairing,
                        format!(
                            "image {i} measures as {} but text {i} is `{}`",
                            measured.key(),
                            case.texts[i]
                        ),
                    );
                } else if measured != case.labels[i] {
                    v.add(
                        ViolationKind::Pairing,
                        format!("candidate {i} stored label disagrees"),
                    );
                }
            }
            Err(e @ Error::Unclassified { .. }) => {
                v.add(ViolationKind::Ambiguity, format!("candidate {i}: {e}"))
            }
            Err(e) => v.add(ViolationKind::Pairing, format!("candidate {i}: {e}")),
        }
    }

    for d in fixed_context_violations(case.subset, &case.layouts) {
        v.add(ViolationKind::FixedContext, d);
    }

    let images: Result<Vec<RasterImage>> = case
        .images
        .iter()
        .map(|p| RasterImage::load_png(&dir.join(p)))
        .collect();
    let hole = BinaryMask::load_png(&dir.join(&case.tile_hole));
    match (images, hole) {
        (Ok(images), Ok(hole)) => {
            if images
                .iter()
                .any(|im| (im.width(), im.height()) != (case.width, case.height))
            {
                v.add(
                    ViolationKind::Unreadable,
                    "image size differs from the recorded canvas",
                );
            } else if (hole.width(), hole.height()) != (case.tile.width, case.tile.height) {
                v.add(
                    ViolationKind::TileConsistency,
                    "tile hole size differs from the tile record",
                );
            } else {
                let bad = tile_mismatches(&images, &case.tile.boxes, &hole);
                if bad > 0 {
                    v.add(
                        ViolationKind::TileConsistency,
                        format!("{bad} shared-tile pixels differ across candidates"),
                    );
                }
            }
        }
        (Err(e), _) | (_, Err(e)) => v.add(ViolationKind::Unreadable, e.to_string()),
    }
    v.out
}

/// Re-check every case of a stored dataset. Only an unreadable manifest is an
/// error; everything else becomes a report entry.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport> {
    let m = read_manifest_unverified(dir)?;
    let violations: Vec<Violation> = m
        .cases
        .par_iter()
        .map(|c| check_case(dir, c, &m.checksums))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(ValidationReport {
        cases_checked: m.cases.len(),
        violations,
    })
}
