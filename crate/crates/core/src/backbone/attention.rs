//! Cross-covariance (channel-transposed) attention.
//!
//! Queries and keys are laid out as `(d_head x tokens)` per head and
//! L2-normalized along the token axis, so the attention map is
//! `d_head x d_head` and the cost grows linearly with the token count.

use crate::error::{shape_err, Result};
use crate::loralin::{Linear, ParamMut, ParamRef};
use crate::runtime::record_macs;
use crate::tensor::{l2_normalize, softmax_in_place, Tensor};

pub const QK_NORM_EPS: f32 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Xca {
    pub heads: usize,
    /// `C -> 3C`, output columns ordered `[q | k | v]`, each split by head.
    pub qkv: Linear,
    /// Learned per-head scale applied to the channel-similarity logits.
    pub temperature: Vec<f32>,
    pub proj: Linear,
}

impl Xca {
    pub fn zeros(channels: usize, heads: usize, gamma: Option<f64>) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(shape_err(
                "xca",
                format!("{heads} heads do not divide {channels} channels"),
            ));
        }
        Ok(Self {
            heads,
            qkv: Linear::zeros(channels, 3 * channels, gamma, true)?,
            temperature: vec![1.0; heads],
            proj: Linear::zeros(channels, channels, gamma, true)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.proj.out_features()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        xca_attention(x, self)
    }

    pub(crate) fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ParamRef<'a>)>) {
        out.push((format!("{prefix}.temperature"), ParamRef::Vector(&self.temperature)));
        for (n, p) in self.qkv.params() {
            out.push((format!("{prefix}.qkv.{n}"), p));
        }
        for (n, p) in self.proj.params() {
            out.push((format!("{prefix}.proj.{n}"), p));
        }
    }

    pub(crate) fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ParamMut<'a>)>) {
        out.push((format!("{prefix}.temperature"), ParamMut::Vector(&mut self.temperature)));
        for (n, p) in self.qkv.params_mut() {
            out.push((format!("{prefix}.qkv.{n}"), p));
        }
        for (n, p) in self.proj.params_mut() {
            out.push((format!("{prefix}.proj.{n}"), p));
        }
    }
}

/// Attention over `x: [tokens, C]`, returning `[tokens, C]`.
pub fn xca_attention(x: &Tensor, xca: &Xca) -> Result<Tensor> {
    Ok(xca_attention_with_maps(x, xca)?.0)
}

/// As [`xca_attention`], also returning the per-head `d_head x d_head`
/// attention maps (row-major, post-softmax).
pub fn xca_attention_with_maps(x: &Tensor, xca: &Xca) -> Result<(Tensor, Vec<Vec<f32>>)> {
    let (tokens, c) = x.dims2()?;
    if c != xca.channels() || xca.qkv.in_features() != c {
        return Err(shape_err(
            "xca",
            format!("input has {c} channels, attention expects {}", xca.channels()),
        ));
    }
    if c % xca.heads != 0 {
        return Err(shape_err("xca", format!("{} heads do not divide {c} channels", xca.heads)));
    }
    let dh = c / xca.heads;
    let qkv = xca.qkv.forward(x)?;
    let qkv = qkv.data();
    let width = 3 * c;

    // gather one head's channel rows across tokens: [dh][tokens]
    let gather = |offset: usize| -> Vec<Vec<f32>> {
        (0..dh)
            .map(|i| (0..tokens).map(|t| qkv[t * width + offset + i]).collect())
            .collect()
    };

    let mut mixed = vec![0.0f32; tokens * c];
    let mut maps = Vec::with_capacity(xca.heads);
    for h in 0..xca.heads {
        let q: Vec<Vec<f32>> = gather(h * dh).iter().map(|r| l2_normalize(r, QK_NORM_EPS)).collect();
        let k: Vec<Vec<f32>> = gather(c + h * dh).iter().map(|r| l2_normalize(r, QK_NORM_EPS)).collect();
        let v = gather(2 * c + h * dh);

        let temp = xca.temperature[h];
        let mut attn = vec![0.0f32; dh * dh];
        for i in 0..dh {
            for j in 0..dh {
                record_macs(tokens as u64);
                let dot: f32 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum();
                attn[i * dh + j] = dot * temp;
            }
            softmax_in_place(&mut attn[i * dh..(i + 1) * dh]);
        }
        for i in 0..dh {
            let col = h * dh + i;
            for j in 0..dh {
                let a = attn[i * dh + j];
                record_macs(tokens as u64);
                for (t, vv) in v[j].iter().enumerate() {
                    mixed[t * c + col] += a * vv;
                }
            }
        }
        maps.push(attn);
    }
    let mixed = Tensor::new(vec![tokens, c], mixed)?;
    Ok((xca.proj.forward(&mixed)?, maps))
}

/// Multiply-accumulates of the two channel-attention products (excluding projections).
pub fn attention_product_macs(tokens: usize, channels: usize, heads: usize) -> u64 {
    let dh = channels / heads;
    2 * (heads * dh * dh * tokens) as u64
}
