//! Scorers: anything that assigns s(I, T) > 0 to image-text pairs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend, EmbedItem};
use crate::dataset::CaseData;
use crate::error::{Error, Result};
use crate::hardneg::similarity;
use crate::seed::{hash_str, mix64, unit_open_closed};
use crate::semantics::parse_caption;
use crate::synthesis::measure::measure_object_masks;
use crate::vocab::Category;

use super::ScoreMatrix;

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    /// K×K matrix for one case.
    fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix>;

    /// One row per candidate image, one column per class prompt.
    fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Uniform scores in (1, 2], a pure function of (seed, case, image, text).
#[derive(Debug, Clone)]
pub struct RandomScorer {
    seed: u64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn draw(&self, case_id: &str, a: usize, b: usize, salt: u64) -> f64 {
        let h = mix64(self.seed ^ hash_str(case_id) ^ mix64(salt ^ ((a as u64) << 32 | b as u64)));
        1.0 + unit_open_closed(h)
    }
}

impl Scorer for RandomScorer {
    fn name(&self) -> &str {
        "random"
    }

    fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix> {
        ScoreMatrix::from_fn(case.k(), |i, j| self.draw(case.id(), i, j, 0))
    }

    fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok((0..case.k())
            .map(|i| {
                (0..prompts.len())
                    .map(|c| self.draw(case.id(), i, c, 0xc1a5))
                    .collect()
            })
            .collect())
    }
}

/// Ground truth: 2 where the caption describes the image's measured label,
/// 1 elsewhere. The class probe gives 2 to the case's first category.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix> {
        let (w, h) = case.canvas();
        let measured = (0..case.k())
            .map(|i| measure_object_masks(case.subset(), &case.object_masks(i)?, w, h))
            .collect::<Result<Vec<_>>>()?;
        let described: Vec<_> = case
            .texts()
            .iter()
            .map(|t| parse_caption(case.subset(), t, case.categories()))
            .collect();
        ScoreMatrix::from_fn(case.k(), |i, j| {
            if described[j] == Some(measured[i]) {
                2.0
            } else {
                1.0
            }
        })
    }

    fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>> {
        let truth = case
            .categories()
            .first()
            .ok_or_else(|| Error::InvalidInput("case has no category".into()))?
            .index();
        let row: Vec<f64> = (0..prompts.len())
            .map(|c| if c == truth { 2.0 } else { 1.0 })
            .collect();
        Ok(vec![row; case.k()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub case_id: String,
    pub image: usize,
    pub text: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub case_id: String,
    pub image: usize,
    pub class: Category,
    pub score: f64,
}

/// On-disk precomputed scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTableFile {
    pub format_version: u32,
    pub entries: Vec<TableEntry>,
    #[serde(default)]
    pub class_entries: Vec<ClassEntry>,
}

/// Scores looked up from a [`ScoreTableFile`].
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    pairs: HashMap<(String, usize, usize), f64>,
    classes: HashMap<(String, usize, usize), f64>,
}

impl TableScorer {
    pub fn from_file(file: ScoreTableFile) -> Self {
        let pairs = file
            .entries
            .into_iter()
            .map(|e| ((e.case_id, e.image, e.text), e.score))
            .collect();
        let classes = file
            .class_entries
            .into_iter()
            .map(|e| ((e.case_id, e.image, e.class.index()), e.score))
            .collect();
        Self { pairs, classes }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_file(serde_json::from_slice(&bytes)?))
    }

    fn lookup(
        map: &HashMap<(String, usize, usize), f64>,
        case: &str,
        a: usize,
        b: usize,
        what: &str,
    ) -> Result<f64> {
        map.get(&(case.to_string(), a, b))
            .copied()
            .ok_or_else(|| Error::Scorer {
                case_id: case.to_string(),
                reason: format!("score table has no {what} entry ({a}, {b})"),
            })
    }
}

impl Scorer for TableScorer {
    fn name(&self) -> &str {
        "table"
    }

    fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix> {
        let k = case.k();
        let mut v = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                v.push(Self::lookup(&self.pairs, case.id(), i, j, "image/text")?);
            }
        }
        ScoreMatrix::new(k, v)
    }

    fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>> {
        (0..case.k())
            .map(|i| {
                (0..prompts.len())
                    .map(|c| Self::lookup(&self.classes, case.id(), i, c, "class"))
                    .collect()
            })
            .collect()
    }
}

/// Cosine similarity of backend embeddings through the temperature-scaled
/// exponential used by the loss.
pub struct EmbeddingScorer {
    backend: Arc<dyn Backend>,
    tau: f64,
    prompt_cache: OnceLock<(Vec<String>, Vec<Vec<f64>>)>,
}

impl EmbeddingScorer {
    pub fn new(backend: Arc<dyn Backend>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature {tau} must be positive"
            )));
        }
        Ok(Self {
            backend,
            tau,
            prompt_cache: OnceLock::new(),
        })
    }

    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>> {
        Ok(backend::embed(self.backend.as_ref(), items)?
            .into_iter()
            .map(|v| v.into_iter().map(f64::from).collect())
            .collect())
    }

    fn images(&self, case: &dyn CaseData) -> Result<Vec<Vec<f64>>> {
        let items = (0..case.k())
            .map(|i| case.image(i).map(EmbedItem::Image))
            .collect::<Result<Vec<_>>>()?;
        self.embed(&items)
    }
}

impl Scorer for EmbeddingScorer {
    fn name(&self) -> &str {
        "embedding"
    }

    fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix> {
        let imgs = self.images(case)?;
        let texts: Vec<EmbedItem> = case.texts().iter().cloned().map(EmbedItem::Text).collect();
        let txts = self.embed(&texts)?;
        let mut v = Vec::with_capacity(imgs.len() * txts.len());
        for a in &imgs {
            for b in &txts {
                v.push(similarity(a, b, self.tau)?);
            }
        }
        ScoreMatrix::new(case.k(), v)
    }

    fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>> {
        let cached = match self.prompt_cache.get() {
            Some(c) => c,
            None => {
                let items: Vec<EmbedItem> = prompts.iter().cloned().map(EmbedItem::Text).collect();
                let e = self.embed(&items)?;
                self.prompt_cache.get_or_init(|| (prompts.to_vec(), e))
            }
        };
        if cached.0 != prompts {
            return Err(Error::InvalidInput(
                "class prompts changed between cases".into(),
            ));
        }
        self.images(case)?
            .iter()
            .map(|a| {
                cached
                    .1
                    .iter()
                    .map(|b| similarity(a, b, self.tau))
                    .collect()
            })
            .collect()
    }
}

/// Settings scorer factories may consult.
#[derive(Clone, Default)]
pub struct ScorerConfig {
    pub seed: u64,
    pub table: Option<PathBuf>,
    pub backend: Option<Arc<dyn Backend>>,
    pub tau: Option<f64>,
}

type Factory = Box<dyn Fn(&ScorerConfig) -> Result<Box<dyn Scorer>> + Send + Sync>;

/// Scorers by name.
pub struct ScorerRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("random", |c| Ok(Box::new(RandomScorer::new(c.seed))));
        r.register("oracle", |_| Ok(Box::new(OracleScorer)));
        r.register("table", |c| {
            let path = c.table.as_ref().ok_or_else(|| {
                Error::InvalidInput("the table scorer needs a score table path".into())
            })?;
            Ok(Box::new(TableScorer::load(path)?))
        });
        r.register("embedding", |c| {
            let b = c.backend.clone().ok_or_else(|| {
                Error::InvalidInput("the embedding scorer needs a backend".into())
            })?;
            Ok(Box::new(EmbeddingScorer::new(b, c.tau.unwrap_or(1.0))?))
        });
        r
    }
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ScorerConfig) -> Result<Box<dyn Scorer>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str, config: &ScorerConfig) -> Result<Box<dyn Scorer>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown scorer `{name}` (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        f(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::procedural::ProceduralBackend;
    use crate::eval::{class_prompts, cls_acc, evaluate, i2t_acc, t2i_acc};
    use crate::semantics::SubsetKind;
    use crate::synthesis::{synthesize_case, SynthesizedCase};

    fn cases(n: u64) -> Vec<SynthesizedCase> {
        let b = ProceduralBackend::new();
        SubsetKind::ALL
            .iter()
            .flat_map(|s| {
                (0..n)
                    .map(|i| synthesize_case(&b, *s, 3, i, 128, 128).unwrap())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn oracle_is_perfect() {
        let cs = cases(2);
        let r = evaluate(&cs, &OracleScorer, true).unwrap();
        for s in &r.subsets {
            assert_eq!(
                (s.i2t, s.t2i, s.cls),
                (1.0, 1.0, Some(1.0)),
                "{:?}",
                s.subset
            );
        }
    }

    /// True class lowest.
    struct Adversary;
    impl Scorer for Adversary {
        fn name(&self) -> &str {
            "adversary"
        }
        fn score_case(&self, case: &dyn CaseData) -> Result<ScoreMatrix> {
            ScoreMatrix::from_fn(case.k(), |i, j| if i == j { 1.0 } else { 2.0 })
        }
        fn class_scores(&self, case: &dyn CaseData, prompts: &[String]) -> Result<Vec<Vec<f64>>> {
            let cats: Vec<usize> = case.categories().iter().map(|c| c.index()).collect();
            let row: Vec<f64> = (0..prompts.len())
                .map(|c| if cats.contains(&c) { 1.0 } else { 2.0 })
                .collect();
            Ok(vec![row; case.k()])
        }
    }

    #[test]
    fn adversary_scores_zero() {
        let cs = cases(1);
        assert_eq!(cls_acc(&cs, &Adversary, &class_prompts()).unwrap(), 0.0);
        assert_eq!(i2t_acc(&cs, &Adversary).unwrap(), 0.0);
    }

    #[test]
    fn random_scorer_is_deterministic_and_seeded() {
        let cs = cases(1);
        let a = RandomScorer::new(1).score_case(&cs[0]).unwrap();
        assert_eq!(a, RandomScorer::new(1).score_case(&cs[0]).unwrap());
        assert_ne!(a, RandomScorer::new(2).score_case(&cs[0]).unwrap());
    }

    #[test]
    fn table_scorer_and_missing_case() {
        let cs = cases(1);
        let mut file = ScoreTableFile {
            format_version: 1,
            entries: vec![],
            class_entries: vec![],
        };
        for c in &cs[1..] {
            for i in 0..c.k() {
                for j in 0..c.k() {
                    file.entries.push(TableEntry {
                        case_id: c.id.clone(),
                        image: i,
                        text: j,
                        score: if i == j { 0.9 } else { 0.1 },
                    });
                }
            }
        }
        let t = TableScorer::from_file(file.clone());
        assert_eq!(i2t_acc(&cs[1..], &t).unwrap(), 1.0);
        assert_eq!(t2i_acc(&cs[1..], &t).unwrap(), 1.0);
        match i2t_acc(&cs, &t) {
            Err(Error::Scorer { case_id, .. }) => assert_eq!(case_id, cs[0].id),
            other => panic!("{other:?}"),
        }
        let json = serde_json::to_string(&file).unwrap();
        assert_eq!(serde_json::from_str::<ScoreTableFile>(&json).unwrap(), file);
    }

    #[test]
    fn embedding_scorer_runs() {
        let cs = cases(1);
        let s = EmbeddingScorer::new(Arc::new(ProceduralBackend::new()), 10.0).unwrap();
        let r = evaluate(&cs, &s, true).unwrap();
        assert_eq!(r.subsets.len(), 6);
        for x in &r.subsets {
            assert!((0.0..=1.0).contains(&x.i2t));
        }
    }

    #[test]
    fn registry_knows_builtin_scorers() {
        let r = ScorerRegistry::default();
        assert_eq!(
            r.names().collect::<Vec<_>>(),
            ["embedding", "oracle", "random", "table"]
        );
        assert!(r.create("random", &ScorerConfig::default()).is_ok());
        assert!(r.create("table", &ScorerConfig::default()).is_err());
        assert!(r.create("nope", &ScorerConfig::default()).is_err());
    }
}
