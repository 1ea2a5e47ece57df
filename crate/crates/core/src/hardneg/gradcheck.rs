//! Analytic gradient versus central finite differences on random batches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{grad_loss, loss_total, EmbeddingBatch, LossConfig, Temperature};
use crate::error::Result;
use crate::seed::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub batches: usize,
    pub n_trivial: usize,
    pub n_hard_negative: usize,
    pub dim: usize,
    pub step: f64,
    pub tolerance: f64,
    pub lambda: f64,
    /// τ is drawn log-uniformly from this range.
    pub tau_range: (f64, f64),
    pub seed: u64,
    /// Negate the largest analytic coordinate before comparing.
    #[serde(default)]
    pub inject_sign_flip: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            batches: 100,
            n_trivial: 6,
            n_hard_negative: 3,
            dim: 8,
            step: 1e-4,
            tolerance: 1e-5,
            lambda: 0.2,
            tau_range: (0.5, 10.0),
            seed: 0,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchCheck {
    pub batch: usize,
    pub tau: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub max_rel_error: f64,
    pub failures: usize,
    pub passed: bool,
    pub batches: Vec<BatchCheck>,
}

fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// A random batch with a shuffled pairing; hard negatives form one group.
pub fn random_batch(seed: u64, n_t: usize, n_hn: usize, d: usize) -> EmbeddingBatch {
    let mut rng = SeedPath::root(seed).push("gradcheck-batch", 0).rng();
    let mut b =
        EmbeddingBatch::trivial(random_rows(&mut rng, n_t, d), random_rows(&mut rng, n_t, d));
    b.pairing.shuffle(&mut rng);
    let hi = random_rows(&mut rng, n_hn, d);
    let ht = random_rows(&mut rng, n_hn, d);
    b.with_hard_negatives(hi, ht, vec!["set".into(); n_hn])
}

fn params_mut(b: &mut EmbeddingBatch) -> Vec<&mut f64> {
    b.trivial_images
        .iter_mut()
        .chain(b.trivial_texts.iter_mut())
        .chain(b.hn_images.iter_mut())
        .chain(b.hn_texts.iter_mut())
        .flatten()
        .collect()
}

/// Central-difference gradient in the order of [`super::Gradients::flatten`].
pub fn numeric_gradient(
    batch: &EmbeddingBatch,
    temp: Temperature,
    cfg: &LossConfig,
    h: f64,
) -> Result<Vec<f64>> {
    let mut work = batch.clone();
    let n = params_mut(&mut work).len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let orig = *params_mut(&mut work)[i];
        *params_mut(&mut work)[i] = orig + h;
        let plus = loss_total(&work, temp, cfg)?;
        *params_mut(&mut work)[i] = orig - h;
        let minus = loss_total(&work, temp, cfg)?;
        *params_mut(&mut work)[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    let lt = temp.log_tau();
    let plus = loss_total(batch, Temperature::from_log(lt + h), cfg)?;
    let minus = loss_total(batch, Temperature::from_log(lt - h), cfg)?;
    out.push((plus - minus) / (2.0 * h));
    Ok(out)
}

/// ‖a − n‖∞ / max(‖a‖∞, ‖n‖∞); zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn flip_largest(v: &mut [f64]) {
    if let Some(i) = (0..v.len()).max_by(|a, b| v[*a].abs().total_cmp(&v[*b].abs())) {
        v[i] = -v[i];
    }
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let loss_cfg = LossConfig {
        lambda: cfg.lambda,
        n_trivial: cfg.n_trivial,
        n_hard_negative: cfg.n_hard_negative,
        ..LossConfig::default()
    };
    let (lo, hi) = cfg.tau_range;
    let mut batches = Vec::with_capacity(cfg.batches);
    for i in 0..cfg.batches {
        let bseed = SeedPath::root(cfg.seed).push("gradcheck", i as u64).seed();
        let batch = random_batch(bseed, cfg.n_trivial, cfg.n_hard_negative, cfg.dim);
        let u: f64 = SeedPath::root(bseed)
            .push("tau", 0)
            .rng()
            .gen_range(0.0..1.0);
        let temp = Temperature::from_log(lo.ln() + u * (hi.ln() - lo.ln()));
        let (_, g) = grad_loss(&batch, temp, &loss_cfg)?;
        let mut analytic = g.flatten();
        if cfg.inject_sign_flip {
            flip_largest(&mut analytic);
        }
        let numeric = numeric_gradient(&batch, temp, &loss_cfg, cfg.step)?;
        let rel_error = relative_error(&analytic, &numeric);
        batches.push(BatchCheck {
            batch: i,
            tau: temp.tau(),
            rel_error,
            passed: rel_error <= cfg.tolerance,
        });
    }
    let failures = batches.iter().filter(|b| !b.passed).count();
    Ok(GradcheckReport {
        config: cfg.clone(),
        max_rel_error: batches.iter().fold(0.0, |m, b| m.max(b.rel_error)),
        failures,
        passed: failures == 0,
        batches,
    })
}
