//! Hard-negative-aware contrastive loss.
//!
//! With s(I, T) = exp(τ·cos(I, T)), every trivial image query contributes
//!
//! ```text
//! -log( s(I_i, T_i) / (Σ_j s(I_i, T_j) + Σ_k s(I_i, T_k^hn)) )
//! ```
//!
//! to the image-to-text hard-negative loss, and symmetrically for text
//! queries. Hard negatives only ever appear in denominators. The total loss
//! is the plain symmetric contrastive loss over the trivial batch plus λ times
//! both hard-negative sums.

pub mod gradcheck;
pub mod matrix;
pub mod sampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use sampler::{build_hn_batch, BatchSpec, HnItem, HnSource};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; rejects zero or non-finite vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(Error::InvalidInput(
            "zero-norm or non-finite embedding".into(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

/// s = exp(τ · cos(a, b)).
pub fn similarity(image: &[f64], text: &[f64], tau: f64) -> Result<f64> {
    Ok((tau * cosine(image, text)?).exp())
}

/// Positive temperature stored as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    log_tau: f64,
}

impl Temperature {
    pub const INITIAL: f64 = 100.0;

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature {tau} must be positive and finite"
            )));
        }
        Ok(Self { log_tau: tau.ln() })
    }

    pub fn from_log(log_tau: f64) -> Self {
        Self { log_tau }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::from_log(Self::INITIAL.ln())
    }
}

/// Which hard negatives enter a query's denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HnScope {
    /// Every hard negative in the batch.
    #[default]
    WholeBatch,
    /// Only hard negatives tagged with the query's own group.
    OwnGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub n_trivial: usize,
    pub n_hard_negative: usize,
    #[serde(default)]
    pub scope: HnScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            n_trivial: 2048,
            n_hard_negative: 768,
            scope: HnScope::WholeBatch,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Trivial pairs plus tagged hard negatives.
///
/// Hard-negative image k and text k come from the same candidate set and
/// carry the tag `hn_groups[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub trivial_images: Vec<Vec<f64>>,
    pub trivial_texts: Vec<Vec<f64>>,
    /// Trivial image i is paired with trivial text `pairing[i]`.
    pub pairing: Vec<usize>,
    pub hn_images: Vec<Vec<f64>>,
    pub hn_texts: Vec<Vec<f64>>,
    pub hn_groups: Vec<String>,
    /// Group of trivial pair i (by image index), consulted by [`HnScope::OwnGroup`].
    #[serde(default)]
    pub trivial_groups: Vec<Option<String>>,
}

impl EmbeddingBatch {
    /// Trivial pairs i ↔ i, no hard negatives.
    pub fn trivial(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> Self {
        let n = images.len();
        Self {
            trivial_images: images,
            trivial_texts: texts,
            pairing: (0..n).collect(),
            hn_images: vec![],
            hn_texts: vec![],
            hn_groups: vec![],
            trivial_groups: vec![None; n],
        }
    }

    pub fn with_hard_negatives(
        mut self,
        images: Vec<Vec<f64>>,
        texts: Vec<Vec<f64>>,
        groups: Vec<String>,
    ) -> Self {
        self.hn_images = images;
        self.hn_texts = texts;
        self.hn_groups = groups;
        self
    }

    pub fn n_trivial(&self) -> usize {
        self.trivial_images.len()
    }

    pub fn n_hard_negative(&self) -> usize {
        self.hn_images.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_trivial();
        if n == 0 {
            return Err(Error::InvalidInput("trivial set is empty".into()));
        }
        let m = self.n_hard_negative();
        for (what, got, want) in [
            ("trivial texts", self.trivial_texts.len(), n),
            ("pairing map", self.pairing.len(), n),
            ("trivial groups", self.trivial_groups.len(), n),
            ("hard-negative texts", self.hn_texts.len(), m),
            ("hard-negative groups", self.hn_groups.len(), m),
        ] {
            if got != want {
                return Err(Error::Cardinality {
                    what,
                    expected: want,
                    got,
                });
            }
        }
        let mut seen = vec![false; n];
        for &p in &self.pairing {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidInput("pairing map is not a bijection".into()));
            }
        }
        let d = self.trivial_images[0].len();
        let all = self
            .trivial_images
            .iter()
            .chain(&self.trivial_texts)
            .chain(&self.hn_images)
            .chain(&self.hn_texts);
        for v in all {
            if v.len() != d {
                return Err(Error::InvalidInput(
                    "embeddings have mixed dimensionality".into(),
                ));
            }
            let nv = norm(v);
            if !(nv > 0.0 && nv.is_finite()) {
                return Err(Error::InvalidInput(
                    "zero-norm or non-finite embedding".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Loss components. `hn_i2t` and `hn_t2i` are unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub clip: f64,
    pub hn_i2t: f64,
    pub hn_t2i: f64,
    pub total: f64,
}

/// Gradients of the total loss, shaped like the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trivial_images: Vec<Vec<f64>>,
    pub trivial_texts: Vec<Vec<f64>>,
    pub hn_images: Vec<Vec<f64>>,
    pub hn_texts: Vec<Vec<f64>>,
    pub log_tau: f64,
}

impl Gradients {
    /// All entries flattened in a fixed order (trivial images, trivial texts,
    /// hard-negative images, hard-negative texts, log-τ).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .trivial_images
            .iter()
            .chain(&self.trivial_texts)
            .chain(&self.hn_images)
            .chain(&self.hn_texts)
            .flatten()
            .copied()
            .collect();
        v.push(self.log_tau);
        v
    }

    pub fn norm(&self) -> f64 {
        norm(&self.flatten())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Trivial,
    Hn,
}

/// Unit vectors and norms of every embedding.
struct Prepared {
    img: [Vec<Vec<f64>>; 2],
    txt: [Vec<Vec<f64>>; 2],
    img_norm: [Vec<f64>; 2],
    txt_norm: [Vec<f64>; 2],
}

fn prepare(vs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    vs.iter()
        .map(|v| {
            let n = norm(v);
            (v.iter().map(|x| x / n).collect(), n)
        })
        .unzip()
}

fn ix(s: Side) -> usize {
    match s {
        Side::Trivial => 0,
        Side::Hn => 1,
    }
}

/// (image, text) slot of one candidate in a query's softmax.
type Pair = ((Side, usize), (Side, usize));

struct Engine<'a> {
    batch: &'a EmbeddingBatch,
    p: Prepared,
    tau: f64,
    grads: Option<Gradients>,
}

impl<'a> Engine<'a> {
    fn new(batch: &'a EmbeddingBatch, temp: Temperature, with_grad: bool) -> Result<Self> {
        batch.validate()?;
        let (ti, tin) = prepare(&batch.trivial_images);
        let (tt, ttn) = prepare(&batch.trivial_texts);
        let (hi, hin) = prepare(&batch.hn_images);
        let (ht, htn) = prepare(&batch.hn_texts);
        let zeros = |vs: &[Vec<f64>]| vs.iter().map(|v| vec![0.0; v.len()]).collect::<Vec<_>>();
        let grads = with_grad.then(|| Gradients {
            trivial_images: zeros(&batch.trivial_images),
            trivial_texts: zeros(&batch.trivial_texts),
            hn_images: zeros(&batch.hn_images),
            hn_texts: zeros(&batch.hn_texts),
            log_tau: 0.0,
        });
        Ok(Self {
            batch,
            p: Prepared {
                img: [ti, hi],
                txt: [tt, ht],
                img_norm: [tin, hin],
                txt_norm: [ttn, htn],
            },
            tau: temp.tau(),
            grads,
        })
    }

    fn cos(&self, img: (Side, usize), txt: (Side, usize)) -> f64 {
        dot(&self.p.img[ix(img.0)][img.1], &self.p.txt[ix(txt.0)][txt.1])
    }

    /// Cross-entropy of one query over `pairs` (image, text) with the positive
    /// at position 0. Accumulates `weight` × gradient when enabled.
    fn row(&mut self, pairs: &[Pair], weight: f64) -> f64 {
        let cos: Vec<f64> = pairs.iter().map(|(a, b)| self.cos(*a, *b)).collect();
        let z: Vec<f64> = cos.iter().map(|c| self.tau * c).collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        let loss = lse - z[0];
        if self.grads.is_none() || weight == 0.0 {
            return loss;
        }
        let tau = self.tau;
        for (c, ((ia, ib), cab)) in pairs.iter().zip(&cos).enumerate() {
            let mut g = (z[c] - lse).exp();
            if c == 0 {
                g -= 1.0;
            }
            g *= weight;
            if g == 0.0 {
                continue;
            }
            let u = &self.p.img[ix(ia.0)][ia.1];
            let v = &self.p.txt[ix(ib.0)][ib.1];
            let nu = self.p.img_norm[ix(ia.0)][ia.1];
            let nv = self.p.txt_norm[ix(ib.0)][ib.1];
            let gr = self.grads.as_mut().unwrap();
            gr.log_tau += g * tau * cab;
            let gi = match ia.0 {
                Side::Trivial => &mut gr.trivial_images[ia.1],
                Side::Hn => &mut gr.hn_images[ia.1],
            };
            for ((o, uu), vv) in gi.iter_mut().zip(u).zip(v) {
                *o += g * tau * (vv - cab * uu) / nu;
            }
            let gt = match ib.0 {
                Side::Trivial => &mut gr.trivial_texts[ib.1],
                Side::Hn => &mut gr.hn_texts[ib.1],
            };
            for ((o, uu), vv) in gt.iter_mut().zip(u).zip(v) {
                *o += g * tau * (uu - cab * vv) / nv;
            }
        }
        loss
    }

    fn hn_visible(&self, scope: HnScope, query_image: usize, k: usize) -> bool {
        match scope {
            HnScope::WholeBatch => true,
            HnScope::OwnGroup => self.batch.trivial_groups[query_image]
                .as_deref()
                .is_some_and(|g| g == self.batch.hn_groups[k]),
        }
    }

    /// Sum over trivial image queries of the cross-entropy against all trivial
    /// texts, plus hard-negative texts when `hn` is set.
    fn i2t(&mut self, hn: Option<HnScope>, weight: f64) -> f64 {
        let n = self.batch.n_trivial();
        let m = self.batch.n_hard_negative();
        let mut total = 0.0;
        for i in 0..n {
            let q = (Side::Trivial, i);
            let pos = self.batch.pairing[i];
            let mut pairs = vec![(q, (Side::Trivial, pos))];
            pairs.extend(
                (0..n)
                    .filter(|j| *j != pos)
                    .map(|j| (q, (Side::Trivial, j))),
            );
            if let Some(scope) = hn {
                pairs.extend(
                    (0..m)
                        .filter(|k| self.hn_visible(scope, i, *k))
                        .map(|k| (q, (Side::Hn, k))),
                );
            }
            total += self.row(&pairs, weight);
        }
        total
    }

    fn t2i(&mut self, hn: Option<HnScope>, weight: f64) -> f64 {
        let n = self.batch.n_trivial();
        let m = self.batch.n_hard_negative();
        let mut inverse = vec![0; n];
        for (i, p) in self.batch.pairing.iter().enumerate() {
            inverse[*p] = i;
        }
        let mut total = 0.0;
        for (t, &pos) in inverse.iter().enumerate() {
            let q = (Side::Trivial, t);
            let mut pairs = vec![((Side::Trivial, pos), q)];
            pairs.extend(
                (0..n)
                    .filter(|j| *j != pos)
                    .map(|j| ((Side::Trivial, j), q)),
            );
            if let Some(scope) = hn {
                pairs.extend(
                    (0..m)
                        .filter(|k| self.hn_visible(scope, pos, *k))
                        .map(|k| ((Side::Hn, k), q)),
                );
            }
            total += self.row(&pairs, weight);
        }
        total
    }

    fn run(&mut self, cfg: &LossConfig) -> LossParts {
        let n = self.batch.n_trivial() as f64;
        let w = 1.0 / (2.0 * n);
        let clip = 0.5 * (self.i2t(None, w) / n + self.t2i(None, w) / n);
        if cfg.lambda == 0.0 {
            return LossParts {
                clip,
                hn_i2t: 0.0,
                hn_t2i: 0.0,
                total: clip,
            };
        }
        let hn_i2t = self.i2t(Some(cfg.scope), cfg.lambda);
        let hn_t2i = self.t2i(Some(cfg.scope), cfg.lambda);
        LossParts {
            clip,
            hn_i2t,
            hn_t2i,
            total: clip + cfg.lambda * (hn_i2t + hn_t2i),
        }
    }
}

/// Image-to-text hard-negative loss over the whole batch.
pub fn loss_hn_i2t(batch: &EmbeddingBatch, temp: Temperature) -> Result<f64> {
    Ok(Engine::new(batch, temp, false)?.i2t(Some(HnScope::WholeBatch), 1.0))
}

/// Text-to-image hard-negative loss over the whole batch.
pub fn loss_hn_t2i(batch: &EmbeddingBatch, temp: Temperature) -> Result<f64> {
    Ok(Engine::new(batch, temp, false)?.t2i(Some(HnScope::WholeBatch), 1.0))
}

/// Symmetric contrastive loss over the trivial pairs only.
pub fn loss_clip(batch: &EmbeddingBatch, temp: Temperature) -> Result<f64> {
    let cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    Ok(Engine::new(batch, temp, false)?.run(&cfg).clip)
}

pub fn loss_parts(
    batch: &EmbeddingBatch,
    temp: Temperature,
    cfg: &LossConfig,
) -> Result<LossParts> {
    cfg.validate()?;
    Ok(Engine::new(batch, temp, false)?.run(cfg))
}

pub fn loss_total(batch: &EmbeddingBatch, temp: Temperature, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_parts(batch, temp, cfg)?.total)
}

/// Total loss and its analytic gradient with respect to every embedding and
/// log-τ.
pub fn grad_loss(
    batch: &EmbeddingBatch,
    temp: Temperature,
    cfg: &LossConfig,
) -> Result<(LossParts, Gradients)> {
    cfg.validate()?;
    let mut e = Engine::new(batch, temp, true)?;
    let parts = e.run(cfg);
    Ok((parts, e.grads.take().expect("gradients enabled")))
}

#[cfg(test)]
mod tests;
