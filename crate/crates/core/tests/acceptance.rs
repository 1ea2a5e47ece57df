//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use attrbench::backend::ProceduralBackend;
use attrbench::dataset::{build_dataset, read_manifest, validate_dataset, BuildConfig, StoredCase};
use attrbench::eval::scorer::{OracleScorer, RandomScorer};
use attrbench::eval::{aggregate, chance_level, class_prompts, evaluate, score_case, Metric};
use attrbench::hardneg::gradcheck::random_batch;
use attrbench::hardneg::{
    gradcheck, loss_clip, loss_hn_i2t, loss_hn_t2i, loss_total, EmbeddingBatch, GradcheckConfig,
    LossConfig, Temperature,
};
use attrbench::scene::BinaryMask;
use attrbench::semantics::{
    canonical_labels, classify_absolute_size, classify_relative_size, SubsetKind,
};
use attrbench::synthesis::measure_layout;
use attrbench::synthesis::measure_object_masks;
use attrbench::synthesis::pipeline::{make_probe, probe_seed};
use attrbench::synthesis::plan_candidate_layouts;
use attrbench::{Error, Result};
use rand::Rng;
use rayon::prelude::*;

const CHANCE_CASES: u64 = 5000;
const CHANCE_CANVAS: u32 = 128;
const MATCH_TOL: f64 = 0.015;
const CLS_TOL: f64 = 0.005;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn chance_reproduction() -> Result<Verdict> {
    let backend = ProceduralBackend::new();
    let scorer = RandomScorer::new(2024);
    let prompts = class_prompts();
    let work: Vec<(SubsetKind, u64)> = SubsetKind::ALL
        .iter()
        .flat_map(|s| (0..CHANCE_CASES).map(move |i| (*s, i)))
        .collect();
    let scores = work
        .par_iter()
        .map(|&(s, i)| {
            let case = attrbench::synthesis::synthesize_case(
                &backend,
                s,
                77,
                i,
                CHANCE_CANVAS,
                CHANCE_CANVAS,
            )?;
            score_case(&case, &scorer, Some(&prompts))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(scores, "random", None);
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &report.subsets {
        let m = chance_level(r.subset, Metric::I2t);
        let c = chance_level(r.subset, Metric::Cls);
        let cls = r.cls.unwrap_or(f64::NAN);
        let good = r.cases as u64 >= CHANCE_CASES
            && (r.i2t - m).abs() <= MATCH_TOL
            && (r.t2i - m).abs() <= MATCH_TOL
            && (cls - c).abs() <= CLS_TOL;
        ok &= good;
        parts.push(format!(
            "{} n={} i2t {:.2} t2i {:.2} (chance {:.2}) cls {:.2} (chance {:.2}){}",
            r.subset.as_str(),
            r.cases,
            100.0 * r.i2t,
            100.0 * r.t2i,
            100.0 * m,
            100.0 * cls,
            100.0 * c,
            if good { "" } else { " <-- out of band" }
        ));
    }
    ok &= report.subsets.len() == 6;
    Ok(verdict(ok, parts.join("; ")))
}

/// One dataset shared by the oracle, consistency and determinism checks.
fn consistency_build(dir: &Path) -> Result<BuildConfig> {
    let cfg = BuildConfig {
        cases_per_subset: 100,
        seed: 4242,
        width: 256,
        height: 256,
        ..BuildConfig::default()
    };
    build_dataset(dir, &ProceduralBackend::new(), &cfg, 0)?;
    Ok(cfg)
}

fn oracle_ceiling(dir: &Path) -> Result<Verdict> {
    let m = read_manifest(dir)?;
    let cases: Vec<StoredCase> = m
        .cases
        .iter()
        .map(|case| StoredCase { root: dir, case })
        .collect();
    let r = evaluate(&cases, &OracleScorer, true)?;
    let ok = r.subsets.len() == 6
        && r.subsets
            .iter()
            .all(|s| s.i2t == 1.0 && s.t2i == 1.0 && s.cls == Some(1.0));
    let worst = r
        .subsets
        .iter()
        .map(|s| s.i2t.min(s.t2i).min(s.cls.unwrap_or(0.0)))
        .fold(1.0_f64, f64::min);
    Ok(verdict(
        ok,
        format!("{} cases, lowest metric {:.1}%", cases.len(), 100.0 * worst),
    ))
}

fn consistency(dir: &Path) -> Result<Verdict> {
    let m = read_manifest(dir)?;
    let r = validate_dataset(dir)?;
    let complete = SubsetKind::ALL
        .iter()
        .all(|s| m.subset_counts.get(s.as_str()) == Some(&100));
    let labels_ok = m
        .cases
        .iter()
        .all(|c| c.labels == canonical_labels(c.subset));
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for v in &r.violations {
        *by_kind.entry(format!("{:?}", v.kind)).or_default() += 1;
    }
    Ok(verdict(
        r.is_clean() && complete && labels_ok && m.failures.is_empty(),
        format!(
            "{} cases checked, {} infeasible, violations {:?}",
            r.cases_checked,
            m.failures.len(),
            by_kind
        ),
    ))
}

fn semantics_round_trip() -> Result<Verdict> {
    let backend = ProceduralBackend::new();
    let per_subset = 500u64;
    let results = SubsetKind::ALL
        .par_iter()
        .map(|&s| {
            let (mut feasible, mut exact) = (0usize, 0usize);
            for i in 0..per_subset {
                let probe = make_probe(&backend, s, probe_seed(9, s, i, 0), 256, 256)?;
                let layouts = match plan_candidate_layouts(&probe) {
                    Ok(l) => l,
                    Err(Error::InfeasibleProbe { .. } | Error::InfeasiblePlacement { .. }) => {
                        continue
                    }
                    Err(e) => return Err(e),
                };
                feasible += 1;
                let measured = layouts
                    .iter()
                    .map(|l| measure_layout(l, &probe.sprites, s))
                    .collect::<Result<Vec<_>>>();
                if measured.ok() == Some(canonical_labels(s)) {
                    exact += 1;
                }
            }
            Ok((feasible, exact))
        })
        .collect::<Result<Vec<_>>>()?;
    let (feasible, exact) = results.iter().fold((0, 0), |(f, e), (a, b)| (f + a, e + b));

    let mut gap_misses = 0;
    let mut gap_total = 0;
    for step in 1..200 {
        let t = step as f64 / 200.0;
        for p in [0.2 + 0.2 * t, 0.6 + 0.2 * t] {
            gap_total += 1;
            gap_misses += usize::from(classify_absolute_size(p)?.is_some());
        }
        for r in [0.5 + 0.4 * t, 1.1 + 0.9 * t] {
            gap_total += 1;
            gap_misses += usize::from(classify_relative_size(r * 1000.0, 1000.0)?.is_some());
        }
    }
    // The same bands through the mask measurement path.
    let (w, h) = (100u32, 100u32);
    let band = |n: usize| {
        BinaryMask::from_bits(w, h, (0..(w * h) as usize).map(|i| i < n).collect()).unwrap()
    };
    for n in [2100usize, 3000, 3900, 6100, 7000, 7900] {
        gap_total += 1;
        let r = measure_object_masks(SubsetKind::AbsoluteSize, &[band(n)], w, h);
        gap_misses += usize::from(!matches!(r, Err(Error::Unclassified { .. })));
    }
    let ok = feasible > 0 && exact == feasible && gap_misses == 0;
    Ok(verdict(
        ok,
        format!(
            "{exact}/{feasible} feasible probes round-trip; {}/{gap_total} gap inputs unclassified",
            gap_total - gap_misses
        ),
    ))
}

fn loss_correctness() -> Result<Verdict> {
    let gc = gradcheck(&GradcheckConfig::default())?;

    let mut uniform_err = 0.0_f64;
    for (n_t, n_hn) in [(2, 1), (6, 3), (8, 4), (64, 24)] {
        let v = vec![0.5, -0.25, 1.0, 2.0];
        let b = EmbeddingBatch::trivial(vec![v.clone(); n_t], vec![v.clone(); n_t])
            .with_hard_negatives(
                vec![v.clone(); n_hn],
                vec![v.clone(); n_hn],
                vec!["g".into(); n_hn],
            );
        let want = ((n_t + n_hn) as f64).ln();
        for tau in [0.07, 1.0, 100.0] {
            let t = Temperature::new(tau)?;
            for got in [loss_hn_i2t(&b, t)?, loss_hn_t2i(&b, t)?] {
                uniform_err = uniform_err.max((got / n_t as f64 - want).abs());
            }
        }
    }

    let cfg = LossConfig::default();
    let mut rng = attrbench::seed::SeedPath::root(31)
        .push("acceptance", 0)
        .rng();
    let mut monotone = true;
    for seed in 0..200 {
        let mut b = random_batch(seed, 6, 0, 8);
        let t = Temperature::new(rng.gen_range(0.5..100.0))?;
        let mut prev = loss_total(&b, t, &cfg)?;
        for _ in 0..4 {
            b.hn_images
                .push((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            b.hn_texts
                .push((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            b.hn_groups.push(format!("g{seed}"));
            let next = loss_total(&b, t, &cfg)?;
            monotone &= next >= prev;
            prev = next;
        }
    }

    let zero = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    let mut bitwise = true;
    for seed in 0..100 {
        let b = random_batch(seed, 8, 4, 16);
        let t = Temperature::new(1.0 + seed as f64)?;
        bitwise &= loss_total(&b, t, &zero)?.to_bits() == loss_clip(&b, t)?.to_bits();
    }

    let ok = gc.passed && uniform_err <= 1e-12 && monotone && bitwise;
    Ok(verdict(
        ok,
        format!(
            "gradcheck {}/{} batches, max rel err {:.2e}; uniform per-query err {:.1e}; hn monotone {monotone}; lambda=0 bitwise {bitwise}",
            gc.batches.len() - gc.failures,
            gc.batches.len(),
            gc.max_rel_error,
            uniform_err
        ),
    ))
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &Path, cfg: &BuildConfig) -> Result<Verdict> {
    let second = tempfile::tempdir().unwrap();
    build_dataset(second.path(), &ProceduralBackend::new(), cfg, 3)?;
    let (a, b) = (tree_bytes(first), tree_bytes(second.path()));
    let differing = a.iter().filter(|(k, v)| b.get(*k) != Some(*v)).count()
        + b.keys().filter(|k| !a.contains_key(*k)).count();
    Ok(verdict(
        differing == 0,
        format!("{} files compared, {differing} differ", a.len()),
    ))
}

fn report(name: &str, started: Instant, v: Result<Verdict>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match v {
        Ok(v) => {
            let tag = if v.passed { "PASS" } else { "FAIL" };
            println!("{tag} {name} [{secs:.1}s]: {}", v.detail);
            v.passed
        }
        Err(e) => {
            println!("FAIL {name} [{secs:.1}s]: error: {e}");
            false
        }
    }
}

fn main() {
    let mut all = true;

    let t = Instant::now();
    all &= report("chance-level reproduction", t, chance_reproduction());

    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let built = consistency_build(dir.path());
    let cfg = match built {
        Ok(c) => Some(c),
        Err(e) => {
            println!("FAIL dataset build: {e}");
            all = false;
            None
        }
    };
    if let Some(cfg) = cfg {
        all &= report("oracle ceiling", t, oracle_ceiling(dir.path()));
        let t = Instant::now();
        all &= report("consistency suite", t, consistency(dir.path()));
        let t = Instant::now();
        all &= report("determinism", t, determinism(dir.path(), &cfg));
    }

    let t = Instant::now();
    all &= report("semantics round-trip", t, semantics_round_trip());

    let t = Instant::now();
    all &= report("loss correctness", t, loss_correctness());

    if !all {
        std::process::exit(1);
    }
}
