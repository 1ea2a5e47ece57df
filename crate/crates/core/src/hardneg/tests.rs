use super::gradcheck::{random_batch, relative_error};
use super::*;
use rand::Rng;

fn cos_naive(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Direct transcription: exponentiate, sum, divide, log.
fn oracle(b: &EmbeddingBatch, tau: f64, lambda: f64) -> (f64, f64, f64) {
    let s = |a: &[f64], t: &[f64]| (tau * cos_naive(a, t)).exp();
    let n = b.n_trivial();
    let inv: Vec<usize> = (0..n)
        .map(|t| b.pairing.iter().position(|p| *p == t).unwrap())
        .collect();
    let (mut ci, mut ct, mut hi, mut ht) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let pos = s(&b.trivial_images[i], &b.trivial_texts[b.pairing[i]]);
        let triv: f64 = b
            .trivial_texts
            .iter()
            .map(|t| s(&b.trivial_images[i], t))
            .sum();
        let hn: f64 = b.hn_texts.iter().map(|t| s(&b.trivial_images[i], t)).sum();
        ci += -(pos / triv).ln();
        hi += -(pos / (triv + hn)).ln();
    }
    for (t, &img) in inv.iter().enumerate() {
        let pos = s(&b.trivial_images[img], &b.trivial_texts[t]);
        let triv: f64 = b
            .trivial_images
            .iter()
            .map(|i| s(i, &b.trivial_texts[t]))
            .sum();
        let hn: f64 = b.hn_images.iter().map(|i| s(i, &b.trivial_texts[t])).sum();
        ct += -(pos / triv).ln();
        ht += -(pos / (triv + hn)).ln();
    }
    let clip = 0.5 * (ci / n as f64 + ct / n as f64);
    (clip, hi, clip + lambda * (hi + ht))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn matches_direct_transcription() {
    for seed in 0..50 {
        let b = if seed % 2 == 0 {
            random_batch(seed, 8, 4, 16)
        } else {
            random_batch(seed, 7, 5, 6)
        };
        let tau = 0.5 + seed as f64 * 0.3;
        let t = Temperature::new(tau).unwrap();
        let (clip, hi, total) = oracle(&b, tau, 0.2);
        assert!(close(loss_clip(&b, t).unwrap(), clip, 1e-11));
        assert!(close(loss_hn_i2t(&b, t).unwrap(), hi, 1e-11));
        let cfg = LossConfig::default();
        assert!(close(loss_total(&b, t, &cfg).unwrap(), total, 1e-11));
    }
}

#[test]
fn uniform_similarity_gives_log_of_candidates() {
    for (n_t, n_hn) in [(1, 0), (4, 2), (6, 3), (32, 12)] {
        let v = vec![0.3, -1.2, 0.7];
        let b = EmbeddingBatch::trivial(vec![v.clone(); n_t], vec![v.clone(); n_t])
            .with_hard_negatives(
                vec![v.clone(); n_hn],
                vec![v.clone(); n_hn],
                vec!["g".into(); n_hn],
            );
        for tau in [0.01, 1.0, 100.0] {
            let t = Temperature::new(tau).unwrap();
            let want = ((n_t + n_hn) as f64).ln();
            let per_i = loss_hn_i2t(&b, t).unwrap() / n_t as f64;
            let per_t = loss_hn_t2i(&b, t).unwrap() / n_t as f64;
            assert!((per_i - want).abs() <= 1e-12, "{per_i} vs {want}");
            assert!((per_t - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_lambda_is_plain_contrastive_bitwise() {
    let cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    for seed in 0..20 {
        let b = random_batch(seed, 8, 4, 5);
        let t = Temperature::new(3.0 + seed as f64).unwrap();
        assert_eq!(
            loss_total(&b, t, &cfg).unwrap().to_bits(),
            loss_clip(&b, t).unwrap().to_bits()
        );
    }
}

#[test]
fn adding_a_hard_negative_never_lowers_loss() {
    let mut rng = crate::seed::SeedPath::root(5).push("grow", 0).rng();
    let cfg = LossConfig::default();
    for seed in 0..40 {
        let mut b = random_batch(seed, 5, 0, 4);
        let t = Temperature::new(rng.gen_range(0.5..50.0)).unwrap();
        let mut prev = loss_total(&b, t, &cfg).unwrap();
        for _ in 0..6 {
            let img: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let txt: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.hn_images.push(img);
            b.hn_texts.push(txt);
            b.hn_groups.push("g".into());
            let next = loss_total(&b, t, &cfg).unwrap();
            assert!(next >= prev, "{next} < {prev}");
            prev = next;
        }
    }
}

#[test]
fn invariant_to_pair_order_and_vector_scale() {
    let cfg = LossConfig::default();
    let b = random_batch(11, 6, 3, 5);
    let t = Temperature::new(7.0).unwrap();
    let base = loss_total(&b, t, &cfg).unwrap();

    let order = [3, 0, 5, 1, 4, 2];
    let mut p = b.clone();
    p.trivial_images = order.iter().map(|i| b.trivial_images[*i].clone()).collect();
    p.pairing = order.iter().map(|i| b.pairing[*i]).collect();
    p.hn_images.reverse();
    p.hn_texts.reverse();
    assert!(close(loss_total(&p, t, &cfg).unwrap(), base, 1e-12));

    let mut s = b.clone();
    for (k, v) in s.trivial_texts.iter_mut().enumerate() {
        v.iter_mut().for_each(|x| *x *= 0.1 + k as f64);
    }
    assert!(close(loss_total(&s, t, &cfg).unwrap(), base, 1e-12));
}

#[test]
fn own_group_scope_filters_hard_negatives() {
    let b = random_batch(3, 4, 4, 5);
    let t = Temperature::new(5.0).unwrap();
    let whole = LossConfig::default();
    let own = LossConfig {
        scope: HnScope::OwnGroup,
        ..whole
    };
    let p_whole = loss_parts(&b, t, &whole).unwrap();
    let p_none = loss_parts(&b, t, &own).unwrap();
    // Untagged queries see no hard negatives.
    let n = b.n_trivial() as f64;
    assert!(close(
        p_none.hn_i2t + p_none.hn_t2i,
        2.0 * n * p_none.clip,
        1e-12
    ));
    assert!(p_whole.total > p_none.total);

    let mut tagged = b.clone();
    tagged.trivial_groups = vec![Some("set".into()); 4];
    let p_all = loss_parts(&tagged, t, &own).unwrap();
    assert!(close(p_all.total, p_whole.total, 1e-12));
}

#[test]
fn gradient_matches_finite_differences() {
    let r = gradcheck(&GradcheckConfig::default()).unwrap();
    assert!(r.passed, "max rel err {}", r.max_rel_error);
    assert_eq!(r.batches.len(), 100);
}

#[test]
fn sign_flip_is_caught() {
    let r = gradcheck(&GradcheckConfig {
        batches: 5,
        inject_sign_flip: true,
        ..GradcheckConfig::default()
    })
    .unwrap();
    assert!(!r.passed);
    assert_eq!(r.failures, 5);
}

#[test]
fn relative_error_definition() {
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert_eq!(relative_error(&[1.0, -2.0], &[1.0, 2.0]), 2.0);
    let n = 4.0 + 4e-6;
    assert_eq!(relative_error(&[4.0], &[n]), (n - 4.0) / n);
}

/// Images on basis vectors; text i leans toward its image as `t` grows while
/// staying orthogonal to every other candidate.
fn margin_batch(t: f64) -> EmbeddingBatch {
    let n = 4;
    let d = n + 3;
    let e = |i: usize, w: f64| {
        let mut v = vec![0.0; d];
        v[i] = w;
        v
    };
    let images = (0..n).map(|i| e(i, 1.0)).collect();
    let texts = (0..n)
        .map(|i| {
            let mut v = e(i, t);
            v[n] = 1.0 - t;
            v
        })
        .collect();
    EmbeddingBatch::trivial(images, texts).with_hard_negatives(
        vec![e(n + 1, 1.0)],
        vec![e(n + 2, 1.0)],
        vec!["g".into()],
    )
}

#[test]
fn gradients_shrink_as_margins_grow() {
    let temp = Temperature::new(10.0).unwrap();
    let cfg = LossConfig::default();
    let mut prev = f64::INFINITY;
    for step in 0..=14 {
        let t = 0.3 + 0.05 * step as f64;
        let b = margin_batch(t);
        let (_, g) = grad_loss(&b, temp, &cfg).unwrap();
        let norm = g.norm();
        assert!(norm < prev, "t = {t}: {norm} >= {prev}");
        prev = norm;
    }
}

#[test]
fn log_tau_gradient_vanishes_when_flat() {
    let v = vec![1.0, 2.0, -0.5];
    let b = EmbeddingBatch::trivial(vec![v.clone(); 5], vec![v; 5]);
    let cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    let (_, g) = grad_loss(&b, Temperature::default(), &cfg).unwrap();
    assert!(g.log_tau.abs() < 1e-12);
}

#[test]
fn rejects_malformed_batches() {
    let t = Temperature::default();
    let mut b = random_batch(0, 3, 1, 4);
    b.pairing = vec![0, 0, 1];
    assert!(loss_clip(&b, t).is_err());
    let mut b = random_batch(0, 3, 1, 4);
    b.trivial_texts[1] = vec![0.0; 4];
    assert!(loss_clip(&b, t).is_err());
    let mut b = random_batch(0, 3, 1, 4);
    b.hn_groups.clear();
    assert!(loss_clip(&b, t).is_err());
    assert!(Temperature::new(0.0).is_err());
    assert!(similarity(&[0.0, 0.0], &[1.0, 0.0], 1.0).is_err());
}

#[test]
fn similarity_reference_values() {
    let e = std::f64::consts::E;
    assert!((similarity(&[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap() - e).abs() < 1e-15);
    assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0], 7.5).unwrap(), 1.0);
    let anti = similarity(&[0.0, 1.0], &[0.0, -1.0], 2.0).unwrap();
    assert!((anti - (-2.0f64).exp()).abs() < 1e-15);
}

#[test]
fn single_pair_without_hard_negatives_is_free() {
    let b = EmbeddingBatch::trivial(vec![vec![1.0, 2.0]], vec![vec![-3.0, 0.5]]);
    let t = Temperature::new(4.0).unwrap();
    assert_eq!(loss_hn_i2t(&b, t).unwrap(), 0.0);
    assert_eq!(loss_hn_t2i(&b, t).unwrap(), 0.0);
    let cfg = LossConfig::default();
    assert_eq!(loss_total(&b, t, &cfg).unwrap(), loss_clip(&b, t).unwrap());
}

#[test]
fn hard_negative_term_is_linear_in_lambda() {
    let b = random_batch(21, 6, 3, 8);
    let t = Temperature::new(12.0).unwrap();
    let at = |lambda: f64| {
        loss_total(
            &b,
            t,
            &LossConfig {
                lambda,
                ..LossConfig::default()
            },
        )
        .unwrap()
    };
    let base = at(0.0);
    assert!(close(at(0.4) - base, 2.0 * (at(0.2) - base), 1e-12));
}
