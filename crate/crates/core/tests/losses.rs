use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgeface_core::losses::{margin_loss, MarginKind, MarginLossConfig, Matrix};
use edgeface_core::train::{toy_train, ToyTrainConfig};

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Straight-line recomputation: normalize, cosine, margin on the target
// logit, log-sum-exp cross-entropy, mean over the batch.
fn reference_loss(e: &Matrix, w: &Matrix, labels: &[usize], kind: MarginKind, s: f64, m: f64) -> f64 {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut total = 0.0;
    for i in 0..e.rows {
        let ei = unit(&e.data[i * e.cols..(i + 1) * e.cols]);
        let mut logits = Vec::new();
        for j in 0..w.rows {
            let wj = unit(&w.data[j * w.cols..(j + 1) * w.cols]);
            let c: f64 = ei.iter().zip(&wj).map(|(a, b)| a * b).sum();
            let t = if j != labels[i] {
                c
            } else {
                match kind {
                    MarginKind::CosFace => c - m,
                    MarginKind::ArcFace => {
                        let theta = c.clamp(-1.0, 1.0).acos();
                        if theta + m < std::f64::consts::PI {
                            (theta + m).cos()
                        } else {
                            c - m * m.sin()
                        }
                    }
                }
            };
            logits.push(s * t);
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        total += lse - logits[labels[i]];
    }
    total / e.rows as f64
}

#[test]
fn fixed_instance_matches_straight_line_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let e = random(4, 8, &mut rng);
    let w = random(5, 8, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    for cfg in [MarginLossConfig::cosface(5), MarginLossConfig::arcface(5)] {
        assert_eq!(cfg.scale, 64.0);
        let got = margin_loss(&e, &w, &labels, &cfg).unwrap().loss;
        let want = reference_loss(&e, &w, &labels, cfg.kind, cfg.scale, cfg.margin);
        assert!((got - want).abs() < 1e-6, "{:?}: {got} vs {want}", cfg.kind);
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss_constant() {
    let cfg = ToyTrainConfig { steps: 15, learning_rate: 0.0, ..Default::default() };
    let loss = MarginLossConfig { scale: 16.0, margin: 0.2, ..MarginLossConfig::cosface(10) };
    let (_, h) = toy_train(&cfg, &loss).unwrap();
    assert!(h.windows(2).all(|w| w[0].loss == w[1].loss && w[0].accuracy == w[1].accuracy));
}

fn instance() -> impl Strategy<Value = (Matrix, Matrix, Vec<usize>)> {
    (1usize..5, 2usize..6, 2usize..6, any::<u64>()).prop_map(|(b, k, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random(b, d, &mut rng);
        let w = random(k, d, &mut rng);
        let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
        (e, w, labels)
    })
}

proptest! {
    #[test]
    fn cosface_loss_is_non_decreasing_in_margin((e, w, labels) in instance(), s in 1.0f64..32.0) {
        let k = w.rows;
        let mut prev = f64::NEG_INFINITY;
        for step in 0..10 {
            let m = step as f64 * 0.09;
            let cfg = MarginLossConfig { kind: MarginKind::CosFace, scale: s, margin: m, class_count: k };
            let l = margin_loss(&e, &w, &labels, &cfg).unwrap().loss;
            prop_assert!(l >= prev - 1e-12, "m={m}: {l} < {prev}");
            prev = l;
        }
    }

    #[test]
    fn scale_acts_only_as_softmax_temperature((e, w, labels) in instance(), s in 0.5f64..40.0, c in 0.25f64..4.0) {
        let k = w.rows;
        for kind in [MarginKind::CosFace, MarginKind::ArcFace] {
            let cfg = MarginLossConfig { kind, scale: s * c, margin: 0.0, class_count: k };
            let got = margin_loss(&e, &w, &labels, &cfg).unwrap().loss;
            prop_assert!((got - reference_loss(&e, &w, &labels, kind, s * c, 0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn class_permutation_leaves_the_loss_unchanged((e, w, labels) in instance(), seed in any::<u64>(), arc in any::<bool>()) {
        let k = w.rows;
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // class j moves to row perm[j]
        let mut pw = Matrix::zeros(k, w.cols);
        for j in 0..k {
            pw.data[perm[j] * w.cols..(perm[j] + 1) * w.cols].copy_from_slice(&w.data[j * w.cols..(j + 1) * w.cols]);
        }
        let pl: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let cfg = if arc { MarginLossConfig::arcface(k) } else { MarginLossConfig::cosface(k) };
        let a = margin_loss(&e, &w, &labels, &cfg).unwrap().loss;
        let b = margin_loss(&e, &pw, &pl, &cfg).unwrap().loss;
        prop_assert!((a - b).abs() < 1e-6);
    }
}
