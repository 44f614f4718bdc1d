//! LoRaLin: a dense `M -> N` map replaced by `M -> r` and `r -> N` maps.
//!
//! The first factor carries no bias; the second carries the layer's bias.
//! The retained rank is `r = max(2, floor(gamma * min(M, N)))`.

use crate::error::{shape_err, Error, Result};
use crate::svd::{jacobi_svd, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use crate::tensor::{linear, Tensor};

/// Smallest rank a LoRaLin layer is ever given.
pub const MIN_RANK: usize = 2;

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma as f32))
    }
}

/// Rank retained for an `in_features x out_features` layer at rank-ratio `gamma`.
///
/// The product is truncated toward zero before clamping from below at 2. The
/// clamp is additionally capped at `min(M, N)` so the factorization never
/// exceeds full rank for layers narrower than 2.
pub fn rank_for(in_features: usize, out_features: usize, gamma: f64) -> Result<usize> {
    check_gamma(gamma)?;
    if in_features == 0 || out_features == 0 {
        return Err(Error::InvalidArgument("layer extents must be positive".into()));
    }
    let full = in_features.min(out_features);
    let scaled = (gamma * full as f64).floor() as usize;
    Ok(scaled.max(MIN_RANK).min(full))
}

/// Stored parameters and per-row multiply-accumulates of one linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub params: u64,
    pub macs_per_row: u64,
}

/// Shape-only description of a linear layer, enough to cost it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearDescriptor {
    Full {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    LowRank {
        in_features: usize,
        out_features: usize,
        gamma: f64,
        bias: bool,
    },
}

pub fn layer_cost(desc: &LinearDescriptor) -> Result<LayerCost> {
    Ok(match *desc {
        LinearDescriptor::Full {
            in_features: m,
            out_features: n,
            bias,
        } => LayerCost {
            params: (m * n + if bias { n } else { 0 }) as u64,
            macs_per_row: (m * n) as u64,
        },
        LinearDescriptor::LowRank {
            in_features: m,
            out_features: n,
            gamma,
            bias,
        } => {
            let r = rank_for(m, n, gamma)?;
            LayerCost {
                params: (r * m + r * n + if bias { n } else { 0 }) as u64,
                macs_per_row: (r * m + r * n) as u64,
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoRaLinLayer {
    in_features: usize,
    out_features: usize,
    gamma: f64,
    rank: usize,
    /// `[rank, in_features]`
    pub w1: Tensor,
    /// `[out_features, rank]`
    pub w2: Tensor,
    pub bias: Option<Vec<f32>>,
}

impl LoRaLinLayer {
    /// Zero-initialized layer.
    pub fn zeros(in_features: usize, out_features: usize, gamma: f64, bias: bool) -> Result<Self> {
        let rank = rank_for(in_features, out_features, gamma)?;
        Ok(Self {
            in_features,
            out_features,
            gamma,
            rank,
            w1: Tensor::zeros(&[rank, in_features]),
            w2: Tensor::zeros(&[out_features, rank]),
            bias: bias.then(|| vec![0.0; out_features]),
        })
    }

    pub fn from_parts(gamma: f64, w1: Tensor, w2: Tensor, bias: Option<Vec<f32>>) -> Result<Self> {
        let (rank, m) = w1.dims2()?;
        let (n, r2) = w2.dims2()?;
        if r2 != rank {
            return Err(shape_err("loralin", format!("factor ranks differ: {rank} vs {r2}")));
        }
        let expected = rank_for(m, n, gamma)?;
        if expected != rank {
            return Err(shape_err(
                "loralin",
                format!("rank {rank} does not match rank_for({m}, {n}, {gamma}) = {expected}"),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != n {
                return Err(shape_err("loralin", format!("bias length {} != {n}", b.len())));
            }
        }
        Ok(Self {
            in_features: m,
            out_features: n,
            gamma,
            rank,
            w1,
            w2,
            bias,
        })
    }

    /// Best rank-`r` factorization of a dense `[N, M]` weight (truncated SVD):
    /// `w2 = U_r diag(s_r)`, `w1 = V_r^T`. `name` identifies the layer in errors.
    pub fn from_full(weight: &Tensor, bias: Option<&[f32]>, gamma: f64, name: &str) -> Result<Self> {
        let (n, m) = weight.dims2()?;
        let rank = rank_for(m, n, gamma)?;
        if !weight.is_finite() {
            return Err(Error::Numeric(format!("layer `{name}` has non-finite weights")));
        }
        let a: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
        let svd = jacobi_svd(&a, n, m, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).ok_or_else(|| {
            Error::SvdNonConvergence {
                layer: name.to_string(),
                sweeps: JACOBI_MAX_SWEEPS,
            }
        })?;
        let k = svd.s.len();
        let w2 = Tensor::from_fn(&[n, rank], |idx| {
            let (row, j) = (idx / rank, idx % rank);
            (svd.u[row * k + j] * svd.s[j]) as f32
        });
        let w1 = Tensor::from_fn(&[rank, m], |idx| svd.vt[idx] as f32);
        Self::from_parts(gamma, w1, w2, bias.map(<[f32]>::to_vec))
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `y = (x W1^T) W2^T + b` for `x: [B, M]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, m) = x.dims2()?;
        if m != self.in_features {
            return Err(shape_err(
                "loralin",
                format!("input has {m} columns, layer expects {}", self.in_features),
            ));
        }
        let hidden = linear(x, &self.w1, None)?;
        linear(&hidden, &self.w2, self.bias.as_deref())
    }

    /// Dense equivalent `W2 W1`, shape `[N, M]`.
    pub fn reconstruct(&self) -> Tensor {
        let (n, m, r) = (self.out_features, self.in_features, self.rank);
        let (w1, w2) = (self.w1.data(), self.w2.data());
        Tensor::from_fn(&[n, m], |idx| {
            let (i, j) = (idx / m, idx % m);
            (0..r).map(|k| w2[i * r + k] * w1[k * m + j]).sum()
        })
    }

    pub fn descriptor(&self) -> LinearDescriptor {
        LinearDescriptor::LowRank {
            in_features: self.in_features,
            out_features: self.out_features,
            gamma: self.gamma,
            bias: self.bias.is_some(),
        }
    }

    /// Number of stored floats.
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.w2.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Ordinary dense layer, `weight: [N, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLinear {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

impl DenseLinear {
    pub fn zeros(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: bias.then(|| vec![0.0; out_features]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, self.bias.as_deref())
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// A linear layer that is either dense or low-rank factorized.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    Dense(DenseLinear),
    LowRank(LoRaLinLayer),
}

impl Linear {
    /// Zero-initialized; low-rank when `gamma` is given.
    pub fn zeros(in_features: usize, out_features: usize, gamma: Option<f64>, bias: bool) -> Result<Self> {
        Ok(match gamma {
            None => Linear::Dense(DenseLinear::zeros(in_features, out_features, bias)),
            Some(g) => Linear::LowRank(LoRaLinLayer::zeros(in_features, out_features, g, bias)?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Linear::Dense(d) => d.forward(x),
            Linear::LowRank(l) => l.forward(x),
        }
    }

    pub fn in_features(&self) -> usize {
        match self {
            Linear::Dense(d) => d.in_features(),
            Linear::LowRank(l) => l.in_features(),
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            Linear::Dense(d) => d.out_features(),
            Linear::LowRank(l) => l.out_features(),
        }
    }

    pub fn bias(&self) -> Option<&[f32]> {
        match self {
            Linear::Dense(d) => d.bias.as_deref(),
            Linear::LowRank(l) => l.bias.as_deref(),
        }
    }

    pub fn descriptor(&self) -> LinearDescriptor {
        match self {
            Linear::Dense(d) => LinearDescriptor::Full {
                in_features: d.in_features(),
                out_features: d.out_features(),
                bias: d.bias.is_some(),
            },
            Linear::LowRank(l) => l.descriptor(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Linear::Dense(d) => d.param_count(),
            Linear::LowRank(l) => l.param_count(),
        }
    }

    /// Dense `[N, M]` weight this layer applies.
    pub fn dense_weight(&self) -> Tensor {
        match self {
            Linear::Dense(d) => d.weight.clone(),
            Linear::LowRank(l) => l.reconstruct(),
        }
    }

    /// Named parameter tensors in storage order, names relative to the layer.
    pub fn params(&self) -> Vec<(&'static str, ParamRef<'_>)> {
        match self {
            Linear::Dense(d) => {
                let mut v = vec![("weight", ParamRef::Tensor(&d.weight))];
                if let Some(b) = &d.bias {
                    v.push(("bias", ParamRef::Vector(b)));
                }
                v
            }
            Linear::LowRank(l) => {
                let mut v = vec![
                    ("lin1.weight", ParamRef::Tensor(&l.w1)),
                    ("lin2.weight", ParamRef::Tensor(&l.w2)),
                ];
                if let Some(b) = &l.bias {
                    v.push(("lin2.bias", ParamRef::Vector(b)));
                }
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, ParamMut<'_>)> {
        match self {
            Linear::Dense(d) => {
                let mut v = vec![("weight", ParamMut::Tensor(&mut d.weight))];
                if let Some(b) = &mut d.bias {
                    v.push(("bias", ParamMut::Vector(b)));
                }
                v
            }
            Linear::LowRank(l) => {
                let mut v = vec![
                    ("lin1.weight", ParamMut::Tensor(&mut l.w1)),
                    ("lin2.weight", ParamMut::Tensor(&mut l.w2)),
                ];
                if let Some(b) = &mut l.bias {
                    v.push(("lin2.bias", ParamMut::Vector(b)));
                }
                v
            }
        }
    }
}

/// Borrowed view of a stored parameter, either a shaped tensor or a bare vector.
#[derive(Clone, Copy, Debug)]
pub enum ParamRef<'a> {
    Tensor(&'a Tensor),
    Vector(&'a [f32]),
}

impl ParamRef<'_> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ParamRef::Tensor(t) => t.shape().to_vec(),
            ParamRef::Vector(v) => vec![v.len()],
        }
    }

    pub fn data(&self) -> &[f32] {
        match self {
            ParamRef::Tensor(t) => t.data(),
            ParamRef::Vector(v) => v,
        }
    }
}

#[derive(Debug)]
pub enum ParamMut<'a> {
    Tensor(&'a mut Tensor),
    Vector(&'a mut Vec<f32>),
}

impl ParamMut<'_> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ParamMut::Tensor(t) => t.shape().to_vec(),
            ParamMut::Vector(v) => vec![v.len()],
        }
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        match self {
            ParamMut::Tensor(t) => t.data_mut(),
            ParamMut::Vector(v) => v,
        }
    }
}
