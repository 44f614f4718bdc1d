use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgeface_core::loralin::{layer_cost, rank_for, LinearDescriptor, LoRaLinLayer};
use edgeface_core::{Linear, Tensor};

fn random_weight(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Tensor {
    Tensor::from_fn(&[n, m], |_| rng.random_range(-1.0f32..1.0))
}

fn frobenius_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

// Singular values from an independent library SVD, descending.
fn oracle_singular_values(w: &Tensor) -> Vec<f64> {
    let (n, m) = (w.shape()[0], w.shape()[1]);
    let mat = DMatrix::from_row_iterator(n, m, w.data().iter().map(|&v| v as f64));
    let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn truncated_factorization_attains_the_tail_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let n = rng.random_range(3..40);
        let m = rng.random_range(3..40);
        let gamma = rng.random_range(0.05..1.0);
        let w = random_weight(&mut rng, n, m);
        let layer = LoRaLinLayer::from_full(&w, None, gamma, "trial").unwrap();
        let r = layer.rank();
        assert_eq!(r, rank_for(m, n, gamma).unwrap());
        let s = oracle_singular_values(&w);
        let tail = s[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = frobenius_gap(&w, &layer.reconstruct());
        if r < s.len() {
            assert!((err - tail).abs() <= 1e-4 * tail, "trial {trial}: {err} vs {tail}");
        } else {
            assert!(err <= 1e-4, "trial {trial}: full rank error {err}");
        }
    }
}

#[test]
fn full_ratio_reconstructs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let (n, m) = (rng.random_range(2..30), rng.random_range(2..30));
        let w = random_weight(&mut rng, n, m);
        let layer = LoRaLinLayer::from_full(&w, None, 1.0, "full").unwrap();
        assert!(frobenius_gap(&w, &layer.reconstruct()) <= 1e-4);
    }
}

#[test]
fn factorized_forward_approximates_dense_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random_weight(&mut rng, 12, 20);
    let bias: Vec<f32> = (0..12).map(|i| i as f32 * 0.1).collect();
    let x = Tensor::from_fn(&[5, 20], |_| rng.random_range(-1.0f32..1.0));
    let dense = edgeface_core::tensor::linear(&x, &w, Some(&bias)).unwrap();
    let low = LoRaLinLayer::from_full(&w, Some(&bias), 1.0, "fc").unwrap();
    let y = low.forward(&x).unwrap();
    assert!(frobenius_gap(&dense, &y) < 1e-4);
}

#[test]
fn rank_examples() {
    // rank = max(2, floor(gamma * min(M, N)))
    assert_eq!(rank_for(512, 512, 0.5).unwrap(), 256);
    assert_eq!(rank_for(192, 768, 0.6).unwrap(), 115);
    assert_eq!(rank_for(64, 256, 0.01).unwrap(), 2);
    assert_eq!(rank_for(100, 400, 0.2).unwrap(), 20);
    assert!(rank_for(10, 10, 0.0).is_err());
    assert!(rank_for(10, 10, 1.5).is_err());
}

proptest! {
    #[test]
    fn rank_is_monotone_and_bounded(m in 1usize..600, n in 1usize..600, a in 0.001f64..1.0, b in 0.001f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (rank_for(m, n, lo).unwrap(), rank_for(m, n, hi).unwrap());
        prop_assert!(rl <= rh);
        prop_assert!(rh <= m.min(n));
        prop_assert!(rl >= 2.min(m.min(n)));
    }

    #[test]
    fn cost_formulas(m in 1usize..800, n in 1usize..800, gamma in 0.01f64..1.0, bias in any::<bool>()) {
        let r = rank_for(m, n, gamma).unwrap() as u64;
        let (m64, n64) = (m as u64, n as u64);
        let low = layer_cost(&LinearDescriptor::LowRank { in_features: m, out_features: n, gamma, bias }).unwrap();
        prop_assert_eq!(low.params, r * (m64 + n64) + if bias { n64 } else { 0 });
        prop_assert_eq!(low.macs_per_row, r * (m64 + n64));
        let full = layer_cost(&LinearDescriptor::Full { in_features: m, out_features: n, bias }).unwrap();
        prop_assert_eq!(full.params, m64 * n64 + if bias { n64 } else { 0 });
        prop_assert_eq!(full.macs_per_row, m64 * n64);
        let layer = Linear::zeros(m, n, Some(gamma), bias).unwrap();
        prop_assert_eq!(layer.param_count() as u64, low.params);
    }

    #[test]
    fn low_rank_forward_is_two_stage(seed in any::<u64>(), m in 2usize..24, n in 2usize..24, gamma in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rank_for(m, n, gamma).unwrap();
        let w1 = Tensor::from_fn(&[r, m], |_| rng.random_range(-1.0f32..1.0));
        let w2 = Tensor::from_fn(&[n, r], |_| rng.random_range(-1.0f32..1.0));
        let bias: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let layer = LoRaLinLayer::from_parts(gamma, w1.clone(), w2.clone(), Some(bias.clone())).unwrap();
        let x = Tensor::from_fn(&[3, m], |_| rng.random_range(-1.0f32..1.0));
        let y = layer.forward(&x).unwrap();
        for row in 0..3 {
            for o in 0..n {
                let mut acc = bias[o] as f64;
                for k in 0..r {
                    let h: f64 = (0..m).map(|j| w1.data()[k * m + j] as f64 * x.data()[row * m + j] as f64).sum();
                    acc += w2.data()[o * r + k] as f64 * h;
                }
                prop_assert!((y.data()[row * n + o] as f64 - acc).abs() < 1e-4);
            }
        }
    }
}
