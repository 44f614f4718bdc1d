//! Central finite-difference verification of the hand-derived gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::losses::{margin_loss, normalize, normalize_backward, MarginKind, MarginLossConfig, Matrix};
use crate::train::LowRankDense;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const PASS_THRESHOLD: f64 = 1e-4;

/// Largest per-coordinate relative error `|a - f| / max(1e-8, |a| + |f|)`
/// between the analytic gradient `a` returned by `f` and the central
/// difference `f` taken with step `eps`.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x).0;
        x[i] = orig - eps;
        let down = f(&x).0;
        x[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let a = analytic[i];
        worst = worst.max((a - fd).abs() / (1e-8f64).max(a.abs() + fd.abs()));
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `0.5 * |LoRaLin(x) - t|^2` as a function of the flattened `(W1, W2, b)`.
pub fn loralin_squared_error<'a>(
    x: &'a Matrix,
    target: &'a Matrix,
    shape: (usize, usize, usize),
) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + 'a {
    let (m, n, r) = shape;
    move |p: &[f64]| {
        let layer = LowRankDense {
            w1: Matrix::new(r, m, p[..r * m].to_vec()).unwrap(),
            w2: Matrix::new(n, r, p[r * m..r * m + n * r].to_vec()).unwrap(),
            bias: p[r * m + n * r..].to_vec(),
        };
        let (y, hidden) = layer.forward(x);
        let diff = Matrix {
            rows: y.rows,
            cols: y.cols,
            data: y.data.iter().zip(&target.data).map(|(a, b)| a - b).collect(),
        };
        let loss = 0.5 * diff.data.iter().map(|d| d * d).sum::<f64>();
        let g = layer.backward(x, &hidden, &diff);
        let mut grad = g.w1.data;
        grad.extend(g.w2.data);
        grad.extend(g.bias);
        (loss, grad)
    }
}

/// Step used by [`run_gradient_suite`]. The losses are evaluated in `f64`,
/// where a step this small keeps truncation error well below the pass
/// threshold even at `s = 64`.
pub const SUITE_EPS: f64 = 1e-5;

/// Scale used when checking the margin losses. At the training default
/// (`s = 64`) the softmax saturates, non-target gradient entries fall below
/// `1e-15` and the relative error measures only finite-difference round-off.
pub const CHECK_SCALE: f64 = 8.0;

/// Checks every analytic gradient at `points` random points each, margin
/// losses at their default margins and [`CHECK_SCALE`].
pub fn run_gradient_suite(points: usize, seed: u64, eps: f64) -> Vec<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut record = |name: &str, errors: Vec<f64>| {
        let max = errors.iter().cloned().fold(0.0, f64::max);
        results.push(GradCheckResult {
            name: name.to_string(),
            points: errors.len(),
            max_rel_error: max,
            passed: max < PASS_THRESHOLD && max.is_finite(),
        });
    };

    let (m, n) = (6, 5);
    let r = crate::loralin::rank_for(m, n, 0.6).expect("valid rank");
    let errs = (0..points)
        .map(|_| {
            let x = Matrix::new(4, m, uniform(4 * m, &mut rng)).unwrap();
            let t = Matrix::new(4, n, uniform(4 * n, &mut rng)).unwrap();
            let p = uniform(r * m + n * r + n, &mut rng);
            grad_check(loralin_squared_error(&x, &t, (m, n, r)), &p, eps)
        })
        .collect();
    record("loralin", errs);

    let errs = (0..points)
        .map(|_| {
            let w = uniform(7, &mut rng);
            let p = uniform(7, &mut rng);
            let f = |v: &[f64]| {
                let y = normalize(v).0;
                let loss: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
                (loss, normalize_backward(v, &w))
            };
            grad_check(f, &p, eps)
        })
        .collect();
    record("normalize", errs);

    for kind in [MarginKind::CosFace, MarginKind::ArcFace] {
        let cfg = match kind {
            MarginKind::CosFace => MarginLossConfig::cosface(5),
            MarginKind::ArcFace => MarginLossConfig::arcface(5),
        };
        let cfg = MarginLossConfig { scale: CHECK_SCALE, ..cfg };
        let (b, d, k) = (4, 8, 5);
        let (mut emb_errs, mut w_errs) = (Vec::new(), Vec::new());
        for _ in 0..points {
            let e = uniform(b * d, &mut rng);
            let w = uniform(k * d, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let wm = Matrix::new(k, d, w.clone()).unwrap();
            let f = |v: &[f64]| {
                let out = margin_loss(&Matrix::new(b, d, v.to_vec()).unwrap(), &wm, &labels, &cfg).unwrap();
                (out.loss, out.grad_embeddings.data)
            };
            emb_errs.push(grad_check(f, &e, eps));
            let em = Matrix::new(b, d, e).unwrap();
            let g = |v: &[f64]| {
                let out = margin_loss(&em, &Matrix::new(k, d, v.to_vec()).unwrap(), &labels, &cfg).unwrap();
                (out.loss, out.grad_weights.data)
            };
            w_errs.push(grad_check(g, &w, eps));
        }
        let tag = match kind {
            MarginKind::CosFace => "cosface",
            MarginKind::ArcFace => "arcface",
        };
        record(&format!("{tag}.embeddings"), emb_errs);
        record(&format!("{tag}.weights"), w_errs);
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = uniform(6, &mut rng);
        let f = |v: &[f64]| (v.iter().map(|x| x * x).sum(), v.iter().map(|x| 2.0 * x).collect());
        assert!(grad_check(f, &p, DEFAULT_EPS) < 1e-6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let f = |v: &[f64]| (v[0] * v[0], vec![3.0 * v[0]]);
        assert!(grad_check(f, &[0.7], DEFAULT_EPS) > 0.1);
    }

    #[test]
    fn zero_gradient_coordinates_are_not_flagged() {
        let f = |v: &[f64]| (v[0], vec![1.0, 0.0]);
        assert!(grad_check(f, &[0.2, 0.4], DEFAULT_EPS) < 1e-9);
    }
}
