//! Desk-scale training of a two-layer LoRaLin MLP with a margin head on
//! seeded Gaussian blobs on the unit sphere.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loralin::rank_for;
use crate::losses::{margin_loss, normalize, MarginLossConfig, Matrix};

/// `f64` LoRaLin layer with a hand-derived backward pass:
/// `y = (x W1^T) W2^T + b`, `W1: [r, M]`, `W2: [N, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankDense {
    pub w1: Matrix,
    pub w2: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of a [`LowRankDense`] layer plus the gradient w.r.t. its input.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    // a: [p, q], b: [r, q] -> [p, r]
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    // a: [p, q], b: [q, r] -> [p, r]
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.data[k * b.cols + j];
            }
        }
    }
    out
}

fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    // a: [p, q], b: [p, r] -> [q, r]
    let mut out = Matrix::zeros(a.cols, b.cols);
    for p in 0..a.rows {
        for i in 0..a.cols {
            let av = a.data[p * a.cols + i];
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.data[p * b.cols + j];
            }
        }
    }
    out
}

impl LowRankDense {
    /// Scaled-normal init of both factors, zero bias.
    pub fn init(in_features: usize, out_features: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let r = rank_for(in_features, out_features, gamma)?;
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let sd = 1.0 / (fan_in as f64).sqrt();
            Matrix {
                rows,
                cols,
                data: (0..rows * cols)
                    .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect(),
            }
        };
        Ok(Self {
            w1: draw(r, in_features, in_features),
            w2: draw(out_features, r, r),
            bias: vec![0.0; out_features],
        })
    }

    pub fn rank(&self) -> usize {
        self.w1.rows
    }

    /// Returns the output and the rank-`r` intermediate.
    pub fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let hidden = matmul_nt(x, &self.w1);
        let mut y = matmul_nt(&hidden, &self.w2);
        for i in 0..y.rows {
            y.row_mut(i).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        (y, hidden)
    }

    pub fn backward(&self, x: &Matrix, hidden: &Matrix, grad_y: &Matrix) -> LowRankGrads {
        let w2 = matmul_tn(grad_y, hidden);
        let grad_hidden = matmul_nn(grad_y, &self.w2);
        let w1 = matmul_tn(&grad_hidden, x);
        let input = matmul_nn(&grad_hidden, &self.w1);
        let mut bias = vec![0.0; self.bias.len()];
        for i in 0..grad_y.rows {
            bias.iter_mut().zip(grad_y.row(i)).for_each(|(b, g)| *b += g);
        }
        LowRankGrads { w1, w2, bias, input }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    pub seed: u64,
    pub classes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub samples_per_class: usize,
    pub sigma: f64,
    /// Rank-ratio of both LoRaLin layers.
    pub gamma: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            classes: 10,
            input_dim: 16,
            hidden_dim: 32,
            embed_dim: 16,
            samples_per_class: 50,
            sigma: 0.05,
            gamma: 0.5,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be >= 0 and momentum {} in [0, 1)",
                self.learning_rate, self.momentum
            )));
        }
        if self.classes < 2 || self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument("toy problem dimensions must be positive (>= 2 classes)".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// `classes` blob centers drawn uniformly on the unit sphere; each sample is
/// its center plus isotropic noise of standard deviation `sigma`, projected
/// back onto the sphere. Samples are grouped by class.
pub fn synthetic_blobs(cfg: &ToyTrainConfig) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b10b);
    let d = cfg.input_dim;
    let mut gauss = move || <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| normalize(&(0..d).map(|_| gauss()).collect::<Vec<_>>()).0)
        .collect();
    let n = cfg.classes * cfg.samples_per_class;
    let mut x = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for s in 0..cfg.samples_per_class {
            let p: Vec<f64> = center.iter().map(|v| v + cfg.sigma * gauss()).collect();
            x.row_mut(c * cfg.samples_per_class + s).copy_from_slice(&normalize(&p).0);
            labels.push(c);
        }
    }
    (x, labels)
}

/// The trainable network: LoRaLin -> GELU -> LoRaLin, plus margin-head class weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    pub layer1: LowRankDense,
    pub layer2: LowRankDense,
    pub head: Matrix,
}

struct Activations {
    h1: Matrix,
    pre: Matrix,
    act: Matrix,
    h2: Matrix,
    emb: Matrix,
}

impl ToyNet {
    pub fn init(cfg: &ToyTrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layer1 = LowRankDense::init(cfg.input_dim, cfg.hidden_dim, cfg.gamma, &mut rng)?;
        let layer2 = LowRankDense::init(cfg.hidden_dim, cfg.embed_dim, cfg.gamma, &mut rng)?;
        let head = Matrix {
            rows: cfg.classes,
            cols: cfg.embed_dim,
            data: (0..cfg.classes * cfg.embed_dim)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        };
        Ok(Self { layer1, layer2, head })
    }

    fn forward(&self, x: &Matrix) -> Activations {
        let (pre, h1) = self.layer1.forward(x);
        let act = Matrix {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let (emb, h2) = self.layer2.forward(&act);
        Activations { h1, pre, act, h2, emb }
    }

    pub fn embed(&self, x: &Matrix) -> Matrix {
        self.forward(x).emb
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.layer1.w1.data,
            &mut self.layer1.w2.data,
            &mut self.layer1.bias,
            &mut self.layer2.w1.data,
            &mut self.layer2.w2.data,
            &mut self.layer2.bias,
            &mut self.head.data,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    /// Full training-set loss before this step's update.
    pub loss: f64,
    /// Full training-set accuracy (nearest class weight by cosine) after the update.
    pub accuracy: f64,
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("step,loss,accuracy\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.step, crate::io::round_sig(r.loss), crate::io::round_sig(r.accuracy)));
    }
    s
}

fn gather(x: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), x.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

fn accuracy(cosines: &Matrix, labels: &[usize]) -> f64 {
    let hits = (0..cosines.rows)
        .filter(|&i| {
            let row = cosines.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[i]
        })
        .count();
    hits as f64 / cosines.rows as f64
}

/// Trains on the seeded blob task. Single-threaded and deterministic given the
/// configuration; halts with [`Error::Diverged`] on a non-finite loss.
pub fn toy_train(cfg: &ToyTrainConfig, loss_cfg: &MarginLossConfig) -> Result<(ToyNet, Vec<HistoryRow>)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if loss_cfg.class_count != cfg.classes {
        return Err(Error::InvalidArgument(format!(
            "loss expects {} classes but the task has {}",
            loss_cfg.class_count, cfg.classes
        )));
    }
    let (x, labels) = synthetic_blobs(cfg);
    let mut net = ToyNet::init(cfg)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut cursor = order.len();
    let mut velocity: Vec<Vec<f64>> = net.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let full = margin_loss(&net.embed(&x), &net.head, &labels, loss_cfg)?;
        if !full.loss.is_finite() {
            return Err(Error::Diverged { step, loss: full.loss });
        }

        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch.min(x.rows) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let xb = gather(&x, &idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

        let acts = net.forward(&xb);
        let out = margin_loss(&acts.emb, &net.head, &yb, loss_cfg)?;
        let g2 = net.layer2.backward(&acts.act, &acts.h2, &out.grad_embeddings);
        let grad_pre = Matrix {
            rows: acts.pre.rows,
            cols: acts.pre.cols,
            data: g2.input.data.iter().zip(&acts.pre.data).map(|(g, p)| g * gelu_grad(*p)).collect(),
        };
        let g1 = net.layer1.backward(&xb, &acts.h1, &grad_pre);
        let grads = [g1.w1.data, g1.w2.data, g1.bias, g2.w1.data, g2.w2.data, g2.bias, out.grad_weights.data];

        for ((param, vel), grad) in net.params_mut().into_iter().zip(&mut velocity).zip(&grads) {
            for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
        }

        let cos = margin_loss(&net.embed(&x), &net.head, &labels, loss_cfg)?.cosines;
        history.push(HistoryRow {
            step,
            loss: full.loss,
            accuracy: accuracy(&cos, &labels),
        });
    }
    Ok((net, history))
}
