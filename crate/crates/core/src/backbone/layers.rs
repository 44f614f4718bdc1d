//! Building blocks of the backbone. Activations inside blocks are carried as
//! NCHW tensors with a batch of one; pointwise layers run on the
//! `[tokens, channels]` view.

use super::attention::Xca;
use super::variant::split_widths;
use crate::error::{shape_err, Result};
use crate::loralin::{Linear, ParamMut, ParamRef};
use crate::tensor::{conv2d, gelu, layer_norm, ConvParams, NormAxis, Tensor};

pub(crate) type Params<'a> = Vec<(String, ParamRef<'a>)>;
pub(crate) type ParamsMut<'a> = Vec<(String, ParamMut<'a>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub eps: f32,
}

impl LayerNormParams {
    pub fn new(dim: usize, eps: f32) -> Self {
        Self {
            weight: vec![1.0; dim],
            bias: vec![0.0; dim],
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor, axis: NormAxis) -> Result<Tensor> {
        layer_norm(x, axis, self.eps, &self.weight, &self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        out.push((format!("{prefix}.weight"), ParamRef::Vector(&self.weight)));
        out.push((format!("{prefix}.bias"), ParamRef::Vector(&self.bias)));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        out.push((format!("{prefix}.weight"), ParamMut::Vector(&mut self.weight)));
        out.push((format!("{prefix}.bias"), ParamMut::Vector(&mut self.bias)));
    }
}

fn conv_collect<'a>(c: &'a ConvParams, prefix: &str, out: &mut Params<'a>) {
    out.push((format!("{prefix}.weight"), ParamRef::Tensor(&c.weight)));
    if let Some(b) = &c.bias {
        out.push((format!("{prefix}.bias"), ParamRef::Vector(b)));
    }
}

fn conv_collect_mut<'a>(c: &'a mut ConvParams, prefix: &str, out: &mut ParamsMut<'a>) {
    out.push((format!("{prefix}.weight"), ParamMut::Tensor(&mut c.weight)));
    if let Some(b) = &mut c.bias {
        out.push((format!("{prefix}.bias"), ParamMut::Vector(b)));
    }
}

fn linear_collect<'a>(l: &'a Linear, prefix: &str, out: &mut Params<'a>) {
    for (n, p) in l.params() {
        out.push((format!("{prefix}.{n}"), p));
    }
}

fn linear_collect_mut<'a>(l: &'a mut Linear, prefix: &str, out: &mut ParamsMut<'a>) {
    for (n, p) in l.params_mut() {
        out.push((format!("{prefix}.{n}"), p));
    }
}

pub(crate) fn depthwise(channels: usize, kernel: usize) -> Result<ConvParams> {
    ConvParams::new(
        Tensor::zeros(&[channels, 1, kernel, kernel]),
        Some(vec![0.0; channels]),
        1,
        kernel / 2,
        channels,
    )
}

/// `[1, C, H, W]` -> `[H*W, C]`
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(shape_err("to_tokens", format!("expected batch of 1, got {n}")));
    }
    let hw = h * w;
    let src = x.data();
    Ok(Tensor::from_fn(&[hw, c], |i| src[(i % c) * hw + i / c]))
}

/// `[H*W, C]` -> `[1, C, H, W]`
pub fn from_tokens(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (hw, c) = t.dims2()?;
    if hw != h * w {
        return Err(shape_err("from_tokens", format!("{hw} tokens cannot form {h}x{w}")));
    }
    let src = t.data();
    Ok(Tensor::from_fn(&[1, c, h, w], |i| src[(i % hw) * c + i / hw]))
}

fn scale_channels(t: &mut Tensor, scale: &[f32]) {
    let c = scale.len();
    for row in t.data_mut().chunks_mut(c) {
        row.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
    }
}

/// Inverted-bottleneck MLP: expand, GELU, project back.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn zeros(dim: usize, expansion: usize, gamma: Option<f64>) -> Result<Self> {
        Ok(Self {
            fc1: Linear::zeros(dim, expansion * dim, gamma, true)?,
            fc2: Linear::zeros(expansion * dim, dim, gamma, true)?,
        })
    }

    pub fn forward(&self, t: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(t)?))
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        linear_collect(&self.fc1, &format!("{prefix}.fc1"), out);
        linear_collect(&self.fc2, &format!("{prefix}.fc2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        linear_collect_mut(&mut self.fc1, &format!("{prefix}.fc1"), out);
        linear_collect_mut(&mut self.fc2, &format!("{prefix}.fc2"), out);
    }
}

/// Convolutional encoder block: depthwise conv, norm, MLP, layer scale, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub dwconv: ConvParams,
    pub norm: LayerNormParams,
    pub mlp: Mlp,
    /// Per-channel layer scale on the residual branch.
    pub gamma: Vec<f32>,
}

impl ConvBlock {
    pub fn zeros(dim: usize, kernel: usize, expansion: usize, eps: f32, gamma: Option<f64>) -> Result<Self> {
        Ok(Self {
            dwconv: depthwise(dim, kernel)?,
            norm: LayerNormParams::new(dim, eps),
            mlp: Mlp::zeros(dim, expansion, gamma)?,
            gamma: vec![1.0; dim],
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let y = conv2d(x, &self.dwconv)?;
        let t = self.norm.forward(&to_tokens(&y)?, NormAxis::Last)?;
        let mut t = self.mlp.forward(&t)?;
        scale_channels(&mut t, &self.gamma);
        let branch = from_tokens(&t, h, w)?;
        add(x, &branch)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        conv_collect(&self.dwconv, &format!("{prefix}.dwconv"), out);
        self.norm.collect(&format!("{prefix}.norm"), out);
        self.mlp.collect(&format!("{prefix}.mlp"), out);
        out.push((format!("{prefix}.gamma"), ParamRef::Vector(&self.gamma)));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        conv_collect_mut(&mut self.dwconv, &format!("{prefix}.dwconv"), out);
        self.norm.collect_mut(&format!("{prefix}.norm"), out);
        self.mlp.collect_mut(&format!("{prefix}.mlp"), out);
        out.push((format!("{prefix}.gamma"), ParamMut::Vector(&mut self.gamma)));
    }
}

/// Split depth-wise transpose attention block.
///
/// The channel axis is cut into groups; the first groups pass through a
/// cascade of depthwise convolutions where each group's output is added to
/// the next group's input, and the last group passes through unchanged (with
/// a single group the one convolution covers every channel). The recombined
/// map is flattened to tokens, mixed by channel attention with a residual,
/// then normalized and sent through the MLP, whose scaled output is added to
/// the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct StdaBlock {
    pub split_widths: Vec<usize>,
    pub convs: Vec<ConvParams>,
    pub norm_xca: LayerNormParams,
    pub gamma_xca: Vec<f32>,
    pub xca: Xca,
    pub norm: LayerNormParams,
    pub mlp: Mlp,
    pub gamma: Vec<f32>,
}

impl StdaBlock {
    pub fn zeros(
        dim: usize,
        groups: usize,
        kernel: usize,
        heads: usize,
        expansion: usize,
        eps: f32,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let split_widths = split_widths(dim, groups)?;
        let n_convs = groups.saturating_sub(1).max(1);
        let conv_width = split_widths[0];
        let convs = (0..n_convs)
            .map(|_| depthwise(conv_width, kernel))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            split_widths,
            convs,
            norm_xca: LayerNormParams::new(dim, eps),
            gamma_xca: vec![1.0; dim],
            xca: Xca::zeros(dim, heads, gamma)?,
            norm: LayerNormParams::new(dim, eps),
            mlp: Mlp::zeros(dim, expansion, gamma)?,
            gamma: vec![1.0; dim],
        })
    }

    pub fn channels(&self) -> usize {
        self.split_widths.iter().sum()
    }

    /// The cascaded depthwise-convolution stage, `[1, C, H, W]` in and out.
    pub fn split_convs(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(shape_err(
                "stda",
                format!("input has {c} channels, block splits {}", self.channels()),
            ));
        }
        if n != 1 {
            return Err(shape_err("stda", format!("expected batch of 1, got {n}")));
        }
        let hw = h * w;
        let mut chunks = Vec::with_capacity(self.split_widths.len());
        let mut start = 0;
        for &width in &self.split_widths {
            let data = x.data()[start * hw..(start + width) * hw].to_vec();
            chunks.push(Tensor::new(vec![1, width, h, w], data)?);
            start += width;
        }
        let mut outs: Vec<Tensor> = Vec::with_capacity(chunks.len());
        if chunks.len() == 1 {
            outs.push(conv2d(&chunks[0], &self.convs[0])?);
        } else {
            let mut carry = chunks[0].clone();
            for (i, conv) in self.convs.iter().enumerate() {
                if i > 0 {
                    carry = add(&carry, &chunks[i])?;
                }
                carry = conv2d(&carry, conv)?;
                outs.push(carry.clone());
            }
            outs.push(chunks.last().unwrap().clone());
        }
        let mut data = Vec::with_capacity(x.len());
        for o in outs {
            data.extend_from_slice(o.data());
        }
        Tensor::new(vec![1, c, h, w], data)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let mixed = self.split_convs(x)?;
        let tokens = to_tokens(&mixed)?;
        let mut attn = self.xca.forward(&self.norm_xca.forward(&tokens, NormAxis::Last)?)?;
        scale_channels(&mut attn, &self.gamma_xca);
        let tokens = add(&tokens, &attn)?;
        let mut t = self.mlp.forward(&self.norm.forward(&tokens, NormAxis::Last)?)?;
        scale_channels(&mut t, &self.gamma);
        add(x, &from_tokens(&t, h, w)?)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        for (i, c) in self.convs.iter().enumerate() {
            conv_collect(c, &format!("{prefix}.convs.{i}"), out);
        }
        self.norm_xca.collect(&format!("{prefix}.norm_xca"), out);
        out.push((format!("{prefix}.gamma_xca"), ParamRef::Vector(&self.gamma_xca)));
        self.xca.collect_params(&format!("{prefix}.xca"), out);
        self.norm.collect(&format!("{prefix}.norm"), out);
        self.mlp.collect(&format!("{prefix}.mlp"), out);
        out.push((format!("{prefix}.gamma"), ParamRef::Vector(&self.gamma)));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            conv_collect_mut(c, &format!("{prefix}.convs.{i}"), out);
        }
        self.norm_xca.collect_mut(&format!("{prefix}.norm_xca"), out);
        out.push((format!("{prefix}.gamma_xca"), ParamMut::Vector(&mut self.gamma_xca)));
        self.xca.collect_params_mut(&format!("{prefix}.xca"), out);
        self.norm.collect_mut(&format!("{prefix}.norm"), out);
        self.mlp.collect_mut(&format!("{prefix}.mlp"), out);
        out.push((format!("{prefix}.gamma"), ParamMut::Vector(&mut self.gamma)));
    }
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Conv(ConvBlock),
    Stda(StdaBlock),
}

impl Block {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.forward(x),
            Block::Stda(b) => b.forward(x),
        }
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        match self {
            Block::Conv(b) => b.collect(prefix, out),
            Block::Stda(b) => b.collect(prefix, out),
        }
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        match self {
            Block::Conv(b) => b.collect_mut(prefix, out),
            Block::Stda(b) => b.collect_mut(prefix, out),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        match self {
            Block::Conv(b) => &b.mlp,
            Block::Stda(b) => &b.mlp,
        }
    }
}

/// Patchify stem: `k x k` convolution with stride `k`, then channel norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub conv: ConvParams,
    pub norm: LayerNormParams,
}

impl Stem {
    pub(crate) fn collect<'a>(&'a self, out: &mut Params<'a>) {
        conv_collect(&self.conv, "stem.conv", out);
        self.norm.collect("stem.norm", out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut ParamsMut<'a>) {
        conv_collect_mut(&mut self.conv, "stem.conv", out);
        self.norm.collect_mut("stem.norm", out);
    }
}

/// Channel norm followed by a 2x2 stride-2 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Downsample {
    pub norm: LayerNormParams,
    pub conv: ConvParams,
}

impl Downsample {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(&self.norm.forward(x, NormAxis::Channel)?, &self.conv)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        self.norm.collect(&format!("{prefix}.norm"), out);
        conv_collect(&self.conv, &format!("{prefix}.conv"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a>) {
        self.norm.collect_mut(&format!("{prefix}.norm"), out);
        conv_collect_mut(&mut self.conv, &format!("{prefix}.conv"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub downsample: Option<Downsample>,
    pub blocks: Vec<Block>,
}

/// Pool, channel norm, flatten, dropout (inactive at inference), linear to the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub norm: LayerNormParams,
    pub drop_rate: f32,
    pub fc: Linear,
}

impl Head {
    pub(crate) fn collect<'a>(&'a self, out: &mut Params<'a>) {
        self.norm.collect("head.norm", out);
        linear_collect(&self.fc, "head.fc", out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut ParamsMut<'a>) {
        self.norm.collect_mut("head.norm", out);
        linear_collect_mut(&mut self.fc, "head.fc", out);
    }
}
