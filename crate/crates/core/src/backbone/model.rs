use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{Block, ConvBlock, Downsample, Head, LayerNormParams, Stage, StdaBlock, Stem};
use super::variant::VariantSpec;
use crate::error::{shape_err, Error, Result};
use crate::loralin::{check_gamma, LoRaLinLayer, Linear, ParamMut, ParamRef};
use crate::runtime::{counting, deterministic, pool};
use crate::tensor::{adaptive_avg_pool_1, conv2d, ConvParams, NormAxis, Tensor};

pub const INIT_STD: f32 = 0.02;

/// One row of a forward-pass shape trace; `shape` excludes the batch axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub layer: String,
    pub shape: Vec<usize>,
}

/// Per-layer outcome of converting dense linears to LoRaLin factors.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedLayer {
    pub name: String,
    pub rank: usize,
    pub frobenius_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFaceModel {
    pub spec: VariantSpec,
    /// Rank-ratio applied to every linear layer; `None` keeps them dense.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub head: Head,
}

impl EdgeFaceModel {
    /// Builds and initializes a model: truncated normal (std 0.02, cut at two
    /// standard deviations) for weights, zeros for biases, ones for norm
    /// gains, layer scales and attention temperatures. Parameters are drawn
    /// in canonical order from a ChaCha8 stream seeded with `seed`.
    pub fn build(spec: &VariantSpec, gamma: Option<f64>, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(spec, gamma)?;
        model.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid normal");
        for (name, mut p) in model.params_mut() {
            match param_role(&name) {
                Role::One => p.data_mut().fill(1.0),
                Role::Zero => p.data_mut().fill(0.0),
                Role::Weight => p.data_mut().iter_mut().for_each(|v| {
                    *v = loop {
                        let s = normal.sample(&mut rng);
                        if s.abs() <= 2.0 * INIT_STD {
                            break s;
                        }
                    }
                }),
            }
        }
        Ok(model)
    }

    /// Model with the right layout and placeholder values (zero weights).
    pub fn skeleton(spec: &VariantSpec, gamma: Option<f64>) -> Result<Self> {
        spec.validate()?;
        if let Some(g) = gamma {
            check_gamma(g)?;
        }
        let eps = spec.norm_eps;
        let c0 = spec.stage_channels[0];
        let p = spec.stem_patch;
        let stem = Stem {
            conv: ConvParams::new(Tensor::zeros(&[c0, 3, p, p]), Some(vec![0.0; c0]), p, 0, 1)?,
            norm: LayerNormParams::new(c0, eps),
        };
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let c = spec.stage_channels[i];
            let downsample = if i == 0 {
                None
            } else {
                let prev = spec.stage_channels[i - 1];
                Some(Downsample {
                    norm: LayerNormParams::new(prev, eps),
                    conv: ConvParams::new(Tensor::zeros(&[c, prev, 2, 2]), Some(vec![0.0; c]), 2, 0, 1)?,
                })
            };
            let depth = spec.stage_depths[i];
            let n_conv = depth - spec.stda_blocks[i];
            let mut blocks = Vec::with_capacity(depth);
            for j in 0..depth {
                blocks.push(if j < n_conv {
                    Block::Conv(ConvBlock::zeros(c, spec.stage_kernel_sizes[i], spec.mlp_expansion, eps, gamma)?)
                } else {
                    Block::Stda(StdaBlock::zeros(
                        c,
                        spec.stda_groups[i],
                        spec.stda_kernel_size,
                        spec.attn_heads,
                        spec.mlp_expansion,
                        eps,
                        gamma,
                    )?)
                });
            }
            stages.push(Stage { downsample, blocks });
        }
        let c3 = spec.stage_channels[3];
        let head = Head {
            norm: LayerNormParams::new(c3, eps),
            drop_rate: spec.drop_rate,
            fc: Linear::zeros(c3, spec.head_dim, gamma, true)?,
        };
        Ok(Self {
            spec: spec.clone(),
            gamma,
            seed: 0,
            stem,
            stages,
            head,
        })
    }

    /// Every stored tensor with its dotted name, in canonical (layer) order.
    pub fn params(&self) -> Vec<(String, ParamRef<'_>)> {
        let mut out = Vec::new();
        self.stem.collect(&mut out);
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(d) = &stage.downsample {
                d.collect(&format!("stage{i}.downsample"), &mut out);
            }
            for (j, b) in stage.blocks.iter().enumerate() {
                b.collect(&format!("stage{i}.block{j}"), &mut out);
            }
        }
        self.head.collect(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, ParamMut<'_>)> {
        let mut out = Vec::new();
        self.stem.collect_mut(&mut out);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            if let Some(d) = &mut stage.downsample {
                d.collect_mut(&format!("stage{i}.downsample"), &mut out);
            }
            for (j, b) in stage.blocks.iter_mut().enumerate() {
                b.collect_mut(&format!("stage{i}.block{j}"), &mut out);
            }
        }
        self.head.collect_mut(&mut out);
        out
    }

    /// Total stored floats.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.data().len()).sum()
    }

    /// Every linear layer with its dotted name.
    pub fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, b) in stage.blocks.iter().enumerate() {
                let p = format!("stage{i}.block{j}");
                if let Block::Stda(s) = b {
                    out.push((format!("{p}.xca.qkv"), &s.xca.qkv));
                    out.push((format!("{p}.xca.proj"), &s.xca.proj));
                }
                out.push((format!("{p}.mlp.fc1"), &b.mlp().fc1));
                out.push((format!("{p}.mlp.fc2"), &b.mlp().fc2));
            }
        }
        out.push(("head.fc".to_string(), &self.head.fc));
        out
    }

    fn linears_mut(&mut self) -> Vec<(String, &mut Linear)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, b) in stage.blocks.iter_mut().enumerate() {
                let p = format!("stage{i}.block{j}");
                match b {
                    Block::Stda(s) => {
                        out.push((format!("{p}.xca.qkv"), &mut s.xca.qkv));
                        out.push((format!("{p}.xca.proj"), &mut s.xca.proj));
                        out.push((format!("{p}.mlp.fc1"), &mut s.mlp.fc1));
                        out.push((format!("{p}.mlp.fc2"), &mut s.mlp.fc2));
                    }
                    Block::Conv(c) => {
                        out.push((format!("{p}.mlp.fc1"), &mut c.mlp.fc1));
                        out.push((format!("{p}.mlp.fc2"), &mut c.mlp.fc2));
                    }
                }
            }
        }
        out.push(("head.fc".to_string(), &mut self.head.fc));
        out
    }

    /// Replaces every linear layer by its best rank-`rank_for(.., gamma)`
    /// factorization. Low-rank sources are first expanded to their dense product.
    pub fn factorize(&self, gamma: f64) -> Result<(Self, Vec<FactorizedLayer>)> {
        check_gamma(gamma)?;
        let mut out = self.clone();
        out.gamma = Some(gamma);
        let mut report = Vec::new();
        for (name, lin) in out.linears_mut() {
            let dense = lin.dense_weight();
            let low = LoRaLinLayer::from_full(&dense, lin.bias(), gamma, &name)?;
            let approx = low.reconstruct();
            let err = dense
                .data()
                .iter()
                .zip(approx.data())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            report.push(FactorizedLayer {
                name,
                rank: low.rank(),
                frobenius_error: err,
            });
            *lin = Linear::LowRank(low);
        }
        Ok((out, report))
    }

    fn check_input(&self, images: &Tensor) -> Result<usize> {
        let (n, c, h, w) = images.dims4()?;
        let side = self.spec.input_side;
        if c != 3 {
            return Err(shape_err("embed", format!("expected 3 input channels, got {c}")));
        }
        if h != side || w != side {
            return Err(shape_err(
                "embed",
                format!("expected {side}x{side} input, got {h}x{w} (no implicit resize)"),
            ));
        }
        Ok(n)
    }

    /// Raw (un-normalized) embeddings `[N, head_dim]` for `images: [N, 3, 112, 112]`.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let n = self.check_input(images)?;
        let per = images.len() / n;
        let one = |i: usize| -> Result<Vec<f32>> {
            let x = Tensor::new(vec![1, 3, self.spec.input_side, self.spec.input_side], images.data()[i * per..(i + 1) * per].to_vec())?;
            self.forward_one(&x, None)
        };
        let rows: Vec<Vec<f32>> = if n > 1 && !deterministic() && !counting() {
            pool().install(|| (0..n).into_par_iter().map(one).collect::<Result<Vec<_>>>())?
        } else {
            (0..n).map(one).collect::<Result<Vec<_>>>()?
        };
        Tensor::new(vec![n, self.spec.head_dim], rows.concat())
    }

    /// Output shape of every row of the layer table for one image.
    pub fn shape_trace(&self, image: &Tensor) -> Result<Vec<TraceEntry>> {
        let n = self.check_input(image)?;
        if n != 1 {
            return Err(shape_err("shape_trace", format!("expected a single image, got {n}")));
        }
        let mut trace = Vec::new();
        self.forward_one(image, Some(&mut trace))?;
        Ok(trace)
    }

    fn forward_one(&self, x: &Tensor, mut trace: Option<&mut Vec<TraceEntry>>) -> Result<Vec<f32>> {
        let mut record = |layer: &str, shape: &[usize]| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceEntry {
                    layer: layer.to_string(),
                    shape: shape.to_vec(),
                });
            }
        };
        let y = conv2d(x, &self.stem.conv)?;
        let conv_shape = y.shape()[1..].to_vec();
        let mut y = self.stem.norm.forward(&y, NormAxis::Channel)?;
        record("stem", &y.shape()[1..]);
        record("stem.conv", &conv_shape);
        record("stem.norm", &y.shape()[1..]);
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(d) = &stage.downsample {
                y = d.forward(&y)?;
            }
            for b in &stage.blocks {
                y = b.forward(&y)?;
            }
            record(&format!("stage{i}"), &y.shape()[1..]);
        }
        let pooled = adaptive_avg_pool_1(&y)?;
        record("head.pool", &pooled.shape()[1..]);
        let normed = self.head.norm.forward(&pooled, NormAxis::Channel)?;
        record("head.norm", &normed.shape()[1..]);
        let c = normed.shape()[1];
        let flat = normed.reshape(&[1, c])?;
        record("head.flatten", &flat.shape()[1..]);
        // dropout is the identity at inference
        record("head.dropout", &flat.shape()[1..]);
        let emb = self.head.fc.forward(&flat)?;
        record("head.fc", &emb.shape()[1..]);
        if !emb.is_finite() {
            return Err(Error::Numeric("embedding contains non-finite values".into()));
        }
        Ok(emb.into_data())
    }
}

enum Role {
    One,
    Zero,
    Weight,
}

fn param_role(name: &str) -> Role {
    let mut parts = name.rsplit('.');
    let last = parts.next().unwrap_or("");
    let owner = parts.next().unwrap_or("");
    match last {
        "gamma" | "gamma_xca" | "temperature" => Role::One,
        "bias" => Role::Zero,
        "weight" if owner.starts_with("norm") => Role::One,
        _ => Role::Weight,
    }
}
