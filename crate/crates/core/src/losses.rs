//! CosFace and ArcFace margin-softmax losses with hand-derived gradients.
//!
//! Both embeddings and class weights are L2-normalized before the cosine
//! logits are formed. With `c_j = cos(theta_j)` the logits are
//!
//! * CosFace: `s * (c_y - m)` for the target, `s * c_j` otherwise;
//! * ArcFace: `s * cos(theta_y + m)` for the target while `theta_y + m < pi`,
//!   else the linear fallback `s * (c_y - m * sin(m))`;
//!
//! and the loss is the batch-mean cross-entropy. Computation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `f64` matrix used by the training-side code.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "matrix",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_tensor(t: &crate::tensor::Tensor) -> Result<Self> {
        let (r, c) = t.dims2()?;
        Self::new(r, c, t.data().iter().map(|&v| v as f64).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginKind {
    CosFace,
    ArcFace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginLossConfig {
    pub kind: MarginKind,
    pub scale: f64,
    pub margin: f64,
    pub class_count: usize,
}

impl MarginLossConfig {
    /// `s = 64`, `m = 0.35`
    pub fn cosface(class_count: usize) -> Self {
        Self {
            kind: MarginKind::CosFace,
            scale: 64.0,
            margin: 0.35,
            class_count,
        }
    }

    /// `s = 64`, `m = 0.5`
    pub fn arcface(class_count: usize) -> Self {
        Self {
            kind: MarginKind::ArcFace,
            scale: 64.0,
            margin: 0.5,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {}", self.scale)));
        }
        let limit = match self.kind {
            MarginKind::CosFace => 1.0,
            MarginKind::ArcFace => std::f64::consts::FRAC_PI_2,
        };
        if !(self.margin >= 0.0 && self.margin < limit) {
            return Err(Error::InvalidArgument(format!(
                "{:?} margin must lie in [0, {limit}), got {}",
                self.kind, self.margin
            )));
        }
        if self.class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        Ok(())
    }

    /// Target-class logit before scaling and its derivative w.r.t. the cosine.
    pub fn target_transform(&self, cos: f64) -> (f64, f64) {
        let m = self.margin;
        match self.kind {
            MarginKind::CosFace => (cos - m, 1.0),
            MarginKind::ArcFace => {
                let c = cos.clamp(-1.0, 1.0);
                // theta + m < pi  <=>  cos(theta) > cos(pi - m)
                if c > (std::f64::consts::PI - m).cos() {
                    let sin = (1.0 - c * c).max(1e-12).sqrt();
                    (c * m.cos() - sin * m.sin(), m.cos() + m.sin() * c / sin)
                } else {
                    (c - m * m.sin(), 1.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginLossOutput {
    pub loss: f64,
    /// Gradient w.r.t. the raw (un-normalized) embeddings, `B x d`.
    pub grad_embeddings: Matrix,
    /// Gradient w.r.t. the raw class weights, `K x d`.
    pub grad_weights: Matrix,
    /// Plain cosine similarities `B x K` (no margin).
    pub cosines: Matrix,
}

/// `y = x / |x|`; returns `(y, |x|)`.
pub fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return (vec![0.0; x.len()], 0.0);
    }
    (x.iter().map(|v| v / n).collect(), n)
}

/// Gradient through `y = x / |x|`: `(g - y (y . g)) / |x|`.
pub fn normalize_backward(x: &[f64], grad_y: &[f64]) -> Vec<f64> {
    let (y, n) = normalize(x);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    let dot: f64 = y.iter().zip(grad_y).map(|(a, b)| a * b).sum();
    grad_y.iter().zip(&y).map(|(g, yi)| (g - yi * dot) / n).collect()
}

/// Batch-mean margin cross-entropy and its gradients.
pub fn margin_loss(
    embeddings: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    cfg: &MarginLossConfig,
) -> Result<MarginLossOutput> {
    cfg.validate()?;
    let (b, d, k) = (embeddings.rows, embeddings.cols, weights.rows);
    if weights.cols != d {
        return Err(Error::Shape {
            op: "margin_loss",
            detail: format!("embedding width {d} != weight width {}", weights.cols),
        });
    }
    if k != cfg.class_count {
        return Err(Error::Shape {
            op: "margin_loss",
            detail: format!("{k} weight rows but class_count = {}", cfg.class_count),
        });
    }
    if labels.len() != b || b == 0 {
        return Err(Error::InvalidArgument(format!("{} labels for {b} embeddings", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
    }

    let e_hat: Vec<Vec<f64>> = (0..b).map(|i| normalize(embeddings.row(i)).0).collect();
    let w_hat: Vec<Vec<f64>> = (0..k).map(|j| normalize(weights.row(j)).0).collect();

    let mut cosines = Matrix::zeros(b, k);
    // d loss / d cosine
    let mut g_cos = Matrix::zeros(b, k);
    let mut loss = 0.0;
    let s = cfg.scale;
    for i in 0..b {
        let y = labels[i];
        let mut logits = vec![0.0; k];
        let mut target_slope = 1.0;
        for j in 0..k {
            let c: f64 = e_hat[i].iter().zip(&w_hat[j]).map(|(p, q)| p * q).sum();
            cosines.data[i * k + j] = c;
            logits[j] = if j == y {
                let (t, slope) = cfg.target_transform(c);
                target_slope = slope;
                s * t
            } else {
                s * c
            };
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        loss += max + z.ln() - logits[y];
        for j in 0..k {
            let p = (logits[j] - max).exp() / z;
            let dz = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
            g_cos.data[i * k + j] = dz * s * if j == y { target_slope } else { 1.0 };
        }
    }
    loss /= b as f64;

    let mut grad_embeddings = Matrix::zeros(b, d);
    for i in 0..b {
        let mut g_hat = vec![0.0; d];
        for j in 0..k {
            let g = g_cos.data[i * k + j];
            g_hat.iter_mut().zip(&w_hat[j]).for_each(|(a, w)| *a += g * w);
        }
        grad_embeddings
            .row_mut(i)
            .copy_from_slice(&normalize_backward(embeddings.row(i), &g_hat));
    }
    let mut grad_weights = Matrix::zeros(k, d);
    for j in 0..k {
        let mut g_hat = vec![0.0; d];
        for i in 0..b {
            let g = g_cos.data[i * k + j];
            g_hat.iter_mut().zip(&e_hat[i]).for_each(|(a, e)| *a += g * e);
        }
        grad_weights
            .row_mut(j)
            .copy_from_slice(&normalize_backward(weights.row(j), &g_hat));
    }

    Ok(MarginLossOutput {
        loss,
        grad_embeddings,
        grad_weights,
        cosines,
    })
}
