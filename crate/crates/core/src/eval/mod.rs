//! Symmetric image-text matching accuracy and the 80-way class probe.
//!
//! A case contributes the mean of its K row (or column) indicators; a subset
//! score is the mean over cases. Ties never count as correct.

pub mod scorer;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CaseData;
use crate::error::{Error, Result};
use crate::semantics::{subset_cardinality, SubsetKind};
use crate::vocab::CATEGORIES;

pub use scorer::{Scorer, ScorerConfig, ScorerRegistry};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// The class-probe prompt for every vocabulary entry, vocabulary order.
pub fn class_prompts() -> Vec<String> {
    CATEGORIES
        .iter()
        .map(|c| format!("a photo of a {c}"))
        .collect()
}

/// K×K scores; rows are images, columns texts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    k: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() != k * k {
            return Err(Error::InvalidInput(format!(
                "score matrix needs {k}x{k} entries, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "score {v} is not a finite positive real"
            )));
        }
        Ok(Self { k, data })
    }

    pub fn from_fn(k: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(k, (0..k * k).map(|n| f(n / k, n % k)).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, image: usize, text: usize) -> f64 {
        self.data[image * self.k + text]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.k, self.data.iter().map(|v| f(*v)).collect())
    }
}

/// Outcome of a strict-argmax decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    Correct,
    Wrong,
    /// The target shares the maximum with another entry.
    Tie,
}

/// Is `target` the unique maximum of `scores`?
pub fn strict_argmax(scores: impl IntoIterator<Item = f64>, target: usize) -> Pick {
    let v: Vec<f64> = scores.into_iter().collect();
    let t = v[target];
    let mut tie = false;
    for (i, s) in v.iter().enumerate() {
        if i == target {
            continue;
        }
        if *s > t {
            return Pick::Wrong;
        }
        if *s == t {
            tie = true;
        }
    }
    if tie {
        Pick::Tie
    } else {
        Pick::Correct
    }
}

/// Any of `targets` as the unique maximum.
fn strict_argmax_any(scores: &[f64], targets: &[usize]) -> Pick {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let at_max: Vec<usize> = (0..scores.len()).filter(|i| scores[*i] == max).collect();
    match at_max.as_slice() {
        [only] if targets.contains(only) => Pick::Correct,
        many if many.iter().any(|i| targets.contains(i)) => Pick::Tie,
        _ => Pick::Wrong,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub ties: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, p: Pick) {
        self.total += 1;
        match p {
            Pick::Correct => self.correct += 1,
            Pick::Tie => self.ties += 1,
            Pick::Wrong => {}
        }
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Image-to-text decisions of one case: row i must peak at column i.
pub fn i2t_case(m: &ScoreMatrix) -> Tally {
    let mut t = Tally::default();
    for i in 0..m.k() {
        t.add(strict_argmax((0..m.k()).map(|j| m.get(i, j)), i));
    }
    t
}

/// Text-to-image decisions of one case: column j must peak at row j.
pub fn t2i_case(m: &ScoreMatrix) -> Tally {
    let mut t = Tally::default();
    for j in 0..m.k() {
        t.add(strict_argmax((0..m.k()).map(|i| m.get(i, j)), j));
    }
    t
}

/// Class-probe decisions of one case. `rows[i]` holds image i's scores over
/// the 80 prompts; an image is correct when the unique top class is any of
/// the case's categories.
pub fn cls_case(rows: &[Vec<f64>], categories: &[usize]) -> Result<Tally> {
    let mut t = Tally::default();
    for r in rows {
        if r.len() != CATEGORIES.len() {
            return Err(Error::InvalidInput(format!(
                "class scores cover {} prompts, need {}",
                r.len(),
                CATEGORIES.len()
            )));
        }
        t.add(strict_argmax_any(r, categories));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    I2t,
    T2i,
    Cls,
}

/// Expected accuracy of an uninformed scorer. For the class probe a two-object
/// image accepts either category, doubling the chance level.
pub fn chance_level(subset: SubsetKind, metric: Metric) -> f64 {
    match metric {
        Metric::I2t | Metric::T2i => 1.0 / subset_cardinality(subset) as f64,
        Metric::Cls => subset.category_count() as f64 / CATEGORIES.len() as f64,
    }
}

/// Per-case results before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub subset: SubsetKind,
    pub i2t: Tally,
    pub t2i: Tally,
    pub cls: Option<Tally>,
}

pub fn score_case(
    case: &dyn CaseData,
    scorer: &dyn Scorer,
    prompts: Option<&[String]>,
) -> Result<CaseScore> {
    let fail = |e: Error| match e {
        e @ Error::Scorer { .. } => e,
        e => Error::Scorer {
            case_id: case.id().to_string(),
            reason: e.to_string(),
        },
    };
    let m = scorer.score_case(case).map_err(fail)?;
    if m.k() != case.k() {
        return Err(fail(Error::Cardinality {
            what: "score matrix",
            expected: case.k(),
            got: m.k(),
        }));
    }
    let cls = match prompts {
        None => None,
        Some(p) => {
            if p.len() != CATEGORIES.len() {
                return Err(Error::InvalidInput(format!(
                    "class probe needs {} prompts, got {}",
                    CATEGORIES.len(),
                    p.len()
                )));
            }
            let rows = scorer.class_scores(case, p).map_err(fail)?;
            if rows.len() != case.k() {
                return Err(fail(Error::Cardinality {
                    what: "class score rows",
                    expected: case.k(),
                    got: rows.len(),
                }));
            }
            let cats: Vec<usize> = case.categories().iter().map(|c| c.index()).collect();
            Some(cls_case(&rows, &cats).map_err(fail)?)
        }
    };
    Ok(CaseScore {
        case_id: case.id().to_string(),
        subset: case.subset(),
        i2t: i2t_case(&m),
        t2i: t2i_case(&m),
        cls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: SubsetKind,
    pub cases: usize,
    pub i2t: f64,
    pub t2i: f64,
    pub cls: Option<f64>,
    pub i2t_ties: usize,
    pub t2i_ties: usize,
    pub cls_ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub scorer: String,
    pub dataset_checksum: Option<String>,
    /// Canonical subset order; subsets without cases are omitted.
    pub subsets: Vec<SubsetResult>,
}

/// Fold case scores into per-subset means. The result does not depend on the
/// order of `scores`.
pub fn aggregate(
    mut scores: Vec<CaseScore>,
    scorer: &str,
    dataset_checksum: Option<String>,
) -> EvalReport {
    scores.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut subsets = Vec::new();
    for subset in SubsetKind::ALL {
        let mine: Vec<&CaseScore> = scores.iter().filter(|s| s.subset == subset).collect();
        if mine.is_empty() {
            continue;
        }
        let n = mine.len() as f64;
        let has_cls = mine.iter().all(|s| s.cls.is_some());
        subsets.push(SubsetResult {
            subset,
            cases: mine.len(),
            i2t: mine.iter().map(|s| s.i2t.mean()).sum::<f64>() / n,
            t2i: mine.iter().map(|s| s.t2i.mean()).sum::<f64>() / n,
            cls: has_cls.then(|| mine.iter().map(|s| s.cls.unwrap().mean()).sum::<f64>() / n),
            i2t_ties: mine.iter().map(|s| s.i2t.ties).sum(),
            t2i_ties: mine.iter().map(|s| s.t2i.ties).sum(),
            cls_ties: mine.iter().filter_map(|s| s.cls.map(|c| c.ties)).sum(),
        });
    }
    EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        scorer: scorer.to_string(),
        dataset_checksum,
        subsets,
    }
}

/// Score every case in parallel and aggregate. The first failing case (in
/// input order) aborts the run.
pub fn evaluate<C: CaseData>(
    cases: &[C],
    scorer: &dyn Scorer,
    with_cls: bool,
) -> Result<EvalReport> {
    let prompts = with_cls.then(class_prompts);
    let scores = cases
        .par_iter()
        .map(|c| score_case(c, scorer, prompts.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(scores, scorer.name(), None))
}

fn nested_mean<C: CaseData>(cases: &[C], f: impl Fn(&C) -> Result<Tally> + Sync) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::InvalidInput("no test cases".into()));
    }
    let means = cases
        .par_iter()
        .map(|c| f(c).map(|t| t.mean()))
        .collect::<Result<Vec<_>>>()?;
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

pub fn i2t_acc<C: CaseData>(cases: &[C], scorer: &dyn Scorer) -> Result<f64> {
    nested_mean(cases, |c| score_case(c, scorer, None).map(|s| s.i2t))
}

pub fn t2i_acc<C: CaseData>(cases: &[C], scorer: &dyn Scorer) -> Result<f64> {
    nested_mean(cases, |c| score_case(c, scorer, None).map(|s| s.t2i))
}

pub fn cls_acc<C: CaseData>(cases: &[C], scorer: &dyn Scorer, prompts: &[String]) -> Result<f64> {
    nested_mean(cases, |c| {
        score_case(c, scorer, Some(prompts)).map(|s| s.cls.expect("class scores requested"))
    })
}

impl EvalReport {
    /// Plain-text table: one row per subset, i2t / t2i / cls columns in percent.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scorer: {}", self.scorer);
        if let Some(c) = &self.dataset_checksum {
            let _ = writeln!(s, "dataset: {c}");
        }
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>7} {:>7} {:>7} {:>6}",
            "subset", "cases", "i2t", "t2i", "cls", "ties"
        );
        for r in &self.subsets {
            let cls = r
                .cls
                .map_or("-".to_string(), |c| format!("{:.1}", c * 100.0));
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>7.1} {:>7.1} {:>7} {:>6}",
                r.subset.as_str(),
                r.cases,
                r.i2t * 100.0,
                r.t2i * 100.0,
                cls,
                r.i2t_ties + r.t2i_ties + r.cls_ties
            );
        }
        s
    }
}
