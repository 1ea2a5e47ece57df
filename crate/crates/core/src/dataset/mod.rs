//! Test-case assembly, on-disk benchmark layout and integrity validation.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<subset>/<case-id>/image_<i>.png
//! <dir>/<subset>/<case-id>/mask_<i>_<j>.png      object j of candidate i
//! <dir>/<subset>/<case-id>/tile_hole.png
//! <dir>/<subset>/<case-id>/plan.json
//! ```

mod build;
mod validate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, CanvasLayout, RasterImage};
use crate::semantics::{parse_caption, subset_cardinality, Label, SubsetKind, TEMPLATE_VERSION};
use crate::synthesis::inpaint::{CandidateImages, TileRecord};
use crate::synthesis::measure::measure_object_masks;
use crate::synthesis::{AttributeProbe, SynthesizedCase};
use crate::vocab::Category;

pub use build::{build_dataset, BuildConfig};
pub use validate::{validate_dataset, ValidationReport, Violation, ViolationKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Where a case came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub probe_seed: u64,
    /// Probes drawn until one was feasible.
    pub attempts: u32,
    pub background_prompt: String,
    pub sprite_seeds: Vec<u64>,
    pub template_version: u32,
    /// Relative path of the plan trace.
    pub plan_trace: String,
}

/// One K-way candidate set: image `i` is described by text `i` and no other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub subset: SubsetKind,
    pub k: usize,
    pub categories: Vec<Category>,
    pub width: u32,
    pub height: u32,
    /// Relative paths, candidate order.
    pub images: Vec<String>,
    pub texts: Vec<String>,
    pub labels: Vec<Label>,
    pub object_masks: Vec<Vec<String>>,
    pub tile: TileRecord,
    pub tile_hole: String,
    pub layouts: Vec<CanvasLayout>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub template_version: u32,
    pub subset_counts: BTreeMap<String, usize>,
    pub cases: Vec<TestCase>,
    /// Cases that could not be synthesized; absent from `cases`.
    #[serde(default)]
    pub failures: Vec<CaseFailure>,
    /// SHA-256 of every referenced file, keyed by relative path.
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new(
        cases: Vec<TestCase>,
        failures: Vec<CaseFailure>,
        checksums: BTreeMap<String, String>,
    ) -> Self {
        let mut subset_counts = BTreeMap::new();
        for c in &cases {
            *subset_counts
                .entry(c.subset.as_str().to_string())
                .or_insert(0) += 1;
        }
        Self {
            format_version: DATASET_FORMAT_VERSION,
            template_version: TEMPLATE_VERSION,
            subset_counts,
            cases,
            failures,
            checksums,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

pub fn case_dir(subset: SubsetKind, id: &str) -> String {
    format!("{}/{id}", subset.as_str())
}

pub fn image_path(subset: SubsetKind, id: &str, i: usize) -> String {
    format!("{}/image_{i}.png", case_dir(subset, id))
}

pub fn mask_path(subset: SubsetKind, id: &str, i: usize, j: usize) -> String {
    format!("{}/mask_{i}_{j}.png", case_dir(subset, id))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pair candidates with captions, re-measuring every candidate from its
/// object masks and requiring the caption to describe exactly that label.
pub fn assemble_test_case(
    id: &str,
    probe: &AttributeProbe,
    layouts: &[CanvasLayout],
    candidates: &CandidateImages,
    captions: &[String],
) -> Result<TestCase> {
    let subset = probe.subset;
    let k = subset_cardinality(subset);
    for (what, got) in [
        ("candidate images", candidates.images.len()),
        ("captions", captions.len()),
        ("object mask sets", candidates.object_masks.len()),
        ("layouts", layouts.len()),
    ] {
        if got != k {
            return Err(Error::Cardinality {
                what,
                expected: k,
                got,
            });
        }
    }
    let (w, h) = (probe.canvas_width, probe.canvas_height);
    let mut labels = Vec::with_capacity(k);
    for (i, (masks, caption)) in candidates.object_masks.iter().zip(captions).enumerate() {
        let measured = measure_object_masks(subset, masks, w, h)?;
        let described = parse_caption(subset, caption, &probe.categories).ok_or_else(|| {
            Error::InvalidInput(format!(
                "caption {i} `{caption}` matches no {subset} template"
            ))
        })?;
        if measured != described {
            return Err(Error::InvalidInput(format!(
                "candidate {i} measures as {} but caption {i} describes {}",
                measured.key(),
                described.key()
            )));
        }
        labels.push(measured);
    }
    let mut seen = labels.clone();
    seen.sort_by_key(|l| l.key());
    seen.dedup();
    if seen.len() != k {
        return Err(Error::InvalidInput(format!(
            "{id}: candidate labels repeat"
        )));
    }
    let dir = case_dir(subset, id);
    Ok(TestCase {
        id: id.to_string(),
        subset,
        k,
        categories: probe.categories.clone(),
        width: w,
        height: h,
        images: (0..k).map(|i| image_path(subset, id, i)).collect(),
        texts: captions.to_vec(),
        labels,
        object_masks: candidates
            .object_masks
            .iter()
            .enumerate()
            .map(|(i, ms)| (0..ms.len()).map(|j| mask_path(subset, id, i, j)).collect())
            .collect(),
        tile: candidates.tile.clone(),
        tile_hole: format!("{dir}/tile_hole.png"),
        layouts: layouts.to_vec(),
        provenance: Provenance {
            probe_seed: probe.root_seed,
            attempts: 1,
            background_prompt: probe.background_prompt.clone(),
            sprite_seeds: probe.sprites.iter().map(|s| s.source_seed).collect(),
            template_version: TEMPLATE_VERSION,
            plan_trace: format!("{dir}/plan.json"),
        },
    })
}

fn write_file(
    root: &Path,
    rel: &str,
    bytes: &[u8],
    sums: &mut BTreeMap<String, String>,
) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    sums.insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Assemble `case` and write its files under `root`. Returns the record and
/// the checksums of everything written.
pub fn write_case(
    root: &Path,
    case: &SynthesizedCase,
) -> Result<(TestCase, BTreeMap<String, String>)> {
    let mut tc = assemble_test_case(
        &case.id,
        &case.probe,
        &case.layouts,
        &case.candidates,
        &case.captions,
    )?;
    tc.provenance.attempts = case.attempts;
    let mut sums = BTreeMap::new();
    for (i, img) in case.candidates.images.iter().enumerate() {
        write_file(root, &tc.images[i], &img.to_png()?, &mut sums)?;
    }
    for (i, masks) in case.candidates.object_masks.iter().enumerate() {
        for (j, m) in masks.iter().enumerate() {
            write_file(root, &tc.object_masks[i][j], &m.to_png()?, &mut sums)?;
        }
    }
    write_file(
        root,
        &tc.tile_hole,
        &case.candidates.hole.to_png()?,
        &mut sums,
    )?;
    let mut trace = serde_json::to_vec_pretty(&case.trace)?;
    trace.push(b'\n');
    write_file(root, &tc.provenance.plan_trace, &trace, &mut sums)?;
    Ok((tc, sums))
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_bytes()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parse the manifest without touching the referenced files.
pub fn read_manifest_unverified(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&bytes)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "manifest format_version {} is not supported",
            m.format_version
        )));
    }
    Ok(m)
}

/// Every file a case references, relative to the dataset root.
pub fn referenced_files(case: &TestCase) -> Vec<&str> {
    let mut v: Vec<&str> = case.images.iter().map(String::as_str).collect();
    v.extend(case.object_masks.iter().flatten().map(String::as_str));
    v.push(&case.tile_hole);
    v.push(&case.provenance.plan_trace);
    v
}

/// Check one file against the manifest. Returns the failing path on mismatch.
pub(crate) fn verify_file(dir: &Path, rel: &str, sums: &BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match sums.get(rel) {
        Some(want) if *want == sha256_hex(&bytes) => Ok(()),
        _ => Err(Error::Checksum(path)),
    }
}

/// Read the manifest and verify every referenced file's checksum.
pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m = read_manifest_unverified(dir)?;
    for case in &m.cases {
        for rel in referenced_files(case) {
            verify_file(dir, rel, &m.checksums)?;
        }
    }
    Ok(m)
}

/// SHA-256 of the manifest bytes; identifies a dataset in reports.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Read access to one case, whether on disk or in memory.
pub trait CaseData: Sync {
    fn id(&self) -> &str;
    fn subset(&self) -> SubsetKind;
    fn categories(&self) -> &[Category];
    fn texts(&self) -> &[String];
    fn canvas(&self) -> (u32, u32);
    fn image(&self, i: usize) -> Result<RasterImage>;
    fn object_masks(&self, i: usize) -> Result<Vec<BinaryMask>>;

    fn k(&self) -> usize {
        self.texts().len()
    }
}

/// A case stored under a dataset root.
#[derive(Debug, Clone)]
pub struct StoredCase<'a> {
    pub root: &'a Path,
    pub case: &'a TestCase,
}

impl CaseData for StoredCase<'_> {
    fn id(&self) -> &str {
        &self.case.id
    }
    fn subset(&self) -> SubsetKind {
        self.case.subset
    }
    fn categories(&self) -> &[Category] {
        &self.case.categories
    }
    fn texts(&self) -> &[String] {
        &self.case.texts
    }
    fn canvas(&self) -> (u32, u32) {
        (self.case.width, self.case.height)
    }
    fn image(&self, i: usize) -> Result<RasterImage> {
        RasterImage::load_png(&self.root.join(&self.case.images[i]))
    }
    fn object_masks(&self, i: usize) -> Result<Vec<BinaryMask>> {
        self.case.object_masks[i]
            .iter()
            .map(|p| BinaryMask::load_png(&self.root.join(p)))
            .collect()
    }
}

impl CaseData for SynthesizedCase {
    fn id(&self) -> &str {
        &self.id
    }
    fn subset(&self) -> SubsetKind {
        self.probe.subset
    }
    fn categories(&self) -> &[Category] {
        &self.probe.categories
    }
    fn texts(&self) -> &[String] {
        &self.captions
    }
    fn canvas(&self) -> (u32, u32) {
        (self.probe.canvas_width, self.probe.canvas_height)
    }
    fn image(&self, i: usize) -> Result<RasterImage> {
        Ok(self.candidates.images[i].clone())
    }
    fn object_masks(&self, i: usize) -> Result<Vec<BinaryMask>> {
        Ok(self.candidates.object_masks[i].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::procedural::ProceduralBackend;
    use crate::synthesis::synthesize_case;

    fn case(subset: SubsetKind, i: u64) -> SynthesizedCase {
        synthesize_case(&ProceduralBackend::new(), subset, 5, i, 128, 128).unwrap()
    }

    #[test]
    fn assembly_accepts_synthesized_case() {
        let c = case(SubsetKind::Count, 0);
        let tc =
            assemble_test_case(&c.id, &c.probe, &c.layouts, &c.candidates, &c.captions).unwrap();
        assert_eq!(tc.k, 9);
        assert_eq!(tc.images.len(), 9);
        assert_eq!(
            tc.labels,
            crate::semantics::canonical_labels(SubsetKind::Count)
        );
    }

    #[test]
    fn cardinality_mismatch_rejected() {
        let mut c = case(SubsetKind::Count, 1);
        c.candidates.images.pop();
        assert!(matches!(
            assemble_test_case(&c.id, &c.probe, &c.layouts, &c.candidates, &c.captions),
            Err(Error::Cardinality {
                expected: 9,
                got: 8,
                ..
            })
        ));
    }

    #[test]
    fn out_of_order_captions_rejected() {
        let c = case(SubsetKind::AbsoluteSize, 2);
        let mut caps = c.captions.clone();
        caps.swap(0, 2);
        assert!(assemble_test_case(&c.id, &c.probe, &c.layouts, &c.candidates, &caps).is_err());
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let mut cases = Vec::new();
        let mut sums = BTreeMap::new();
        for i in 0..100u64 {
            let subset = SubsetKind::ALL[(i % 6) as usize];
            let c = case(subset, i);
            let (tc, s) = write_case(dir.path(), &c).unwrap();
            cases.push(tc);
            sums.extend(s);
        }
        let m = DatasetManifest::new(cases, vec![], sums);
        write_manifest(dir.path(), &m).unwrap();
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), m.to_bytes().unwrap());

        let victim = dir.path().join(&m.cases[7].images[1]);
        let mut bytes = fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&victim, bytes).unwrap();
        match read_manifest(dir.path()) {
            Err(Error::Checksum(p)) => assert_eq!(p, victim),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(vec![], vec![], BTreeMap::new());
        write_manifest(dir.path(), &m).unwrap();
        let back = read_manifest(dir.path()).unwrap();
        assert!(back.cases.is_empty());
        assert!(validate_dataset(dir.path()).unwrap().violations.is_empty());
    }
}
