use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::semantics::SubsetKind;
use crate::synthesis::{case_id, synthesize_case};

use super::{write_case, write_manifest, CaseFailure, DatasetManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub subsets: Vec<SubsetKind>,
    pub cases_per_subset: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            subsets: SubsetKind::ALL.to_vec(),
            cases_per_subset: 10,
            seed: 0,
            width: 1024,
            height: 1024,
        }
    }
}

enum Outcome {
    Written(Box<super::TestCase>, BTreeMap<String, String>),
    Failed(CaseFailure),
}

/// Synthesize and write every requested case, then the manifest.
///
/// Infeasible probes become manifest failures; any other error (backend,
/// I/O) aborts the build. Case order in the manifest is subset order, then
/// index, independent of scheduling. `jobs = 0` uses all cores.
pub fn build_dataset(
    dir: &Path,
    backend: &dyn Backend,
    cfg: &BuildConfig,
    jobs: usize,
) -> Result<DatasetManifest> {
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::InvalidInput("canvas must be non-empty".into()));
    }
    let work: Vec<(SubsetKind, u64)> = cfg
        .subsets
        .iter()
        .flat_map(|s| (0..cfg.cases_per_subset as u64).map(move |i| (*s, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| {
        work.par_iter()
            .map(|&(subset, idx)| {
                match synthesize_case(backend, subset, cfg.seed, idx, cfg.width, cfg.height) {
                    Ok(case) => {
                        let (tc, sums) = write_case(dir, &case)?;
                        Ok(Outcome::Written(Box::new(tc), sums))
                    }
                    Err(
                        e @ (Error::InfeasibleProbe { .. } | Error::InfeasiblePlacement { .. }),
                    ) => Ok(Outcome::Failed(CaseFailure {
                        id: case_id(subset, idx),
                        error: e.to_string(),
                    })),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    let mut checksums = BTreeMap::new();
    for o in outcomes {
        match o? {
            Outcome::Written(tc, sums) => {
                cases.push(*tc);
                checksums.extend(sums);
            }
            Outcome::Failed(f) => failures.push(f),
        }
    }
    let manifest = DatasetManifest::new(cases, failures, checksums);
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}
