//! The EdgeFace backbone family: patchify stem, four encoder stages mixing
//! depthwise-convolution blocks with split depth-wise transpose attention
//! blocks, and a pooled 512-d embedding head.
//!
//! Parameters use dotted names such as `stage2.block8.xca.qkv.lin1.weight`;
//! stage and block indices start at zero.

mod attention;
mod layers;
mod model;
mod variant;

pub use attention::{attention_product_macs, xca_attention, xca_attention_with_maps, Xca, QK_NORM_EPS};
pub use layers::{
    from_tokens, to_tokens, Block, ConvBlock, Downsample, Head, LayerNormParams, Mlp, Stage, StdaBlock, Stem,
};
pub use model::{EdgeFaceModel, FactorizedLayer, TraceEntry, INIT_STD};
pub use variant::{split_widths, Variant, VariantSpec};

/// Forward pass of one split-attention block on `[1, C, H, W]`.
pub fn stda_forward(x: &crate::tensor::Tensor, block: &StdaBlock) -> crate::error::Result<crate::tensor::Tensor> {
    block.forward(x)
}

/// Embeddings `[N, 512]` for `[N, 3, 112, 112]` images.
pub fn embed(model: &EdgeFaceModel, images: &crate::tensor::Tensor) -> crate::error::Result<crate::tensor::Tensor> {
    model.embed(images)
}
