use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three model sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SMALL")]
    Small,
    #[serde(rename = "X-SMALL")]
    XSmall,
    #[serde(rename = "XX-SMALL")]
    XxSmall,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Small, Variant::XSmall, Variant::XxSmall];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Small => "SMALL",
            Variant::XSmall => "X-SMALL",
            Variant::XxSmall => "XX-SMALL",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Variant::Small => "s",
            Variant::XSmall => "xs",
            Variant::XxSmall => "xxs",
        }
    }

    pub fn spec(self) -> VariantSpec {
        VariantSpec::for_variant(self)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "small" => Ok(Variant::Small),
            "xs" | "x-small" | "xsmall" => Ok(Variant::XSmall),
            "xxs" | "xx-small" | "xxsmall" => Ok(Variant::XxSmall),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variant `{s}` (expected s, xs or xxs)"
            ))),
        }
    }
}

/// Architecture configuration of one backbone.
///
/// Stage widths differ per variant; all variants share the
/// 112 -> 28 -> 28 -> 14 -> 7 -> 3 spatial trajectory. Depths, kernel sizes,
/// split counts, head count and MLP expansion follow EdgeNeXt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    /// Depthwise kernel of the convolutional encoder blocks per stage.
    pub stage_kernel_sizes: [usize; 4],
    /// Channel groups the split-attention block divides its input into.
    pub stda_groups: [usize; 4],
    /// Split-attention blocks at the end of each stage.
    pub stda_blocks: [usize; 4],
    /// Depthwise kernel of the cascaded convolutions inside split-attention blocks.
    pub stda_kernel_size: usize,
    pub attn_heads: usize,
    pub mlp_expansion: usize,
    pub head_dim: usize,
    pub input_side: usize,
    /// Stem patch size (kernel and stride).
    pub stem_patch: usize,
    pub drop_rate: f32,
    pub norm_eps: f32,
}

impl VariantSpec {
    pub fn for_variant(variant: Variant) -> Self {
        let (stage_channels, stage_depths) = match variant {
            Variant::Small => ([48, 96, 160, 304], [3, 3, 9, 3]),
            Variant::XSmall => ([32, 64, 100, 192], [3, 3, 9, 3]),
            Variant::XxSmall => ([24, 48, 88, 168], [2, 2, 6, 2]),
        };
        Self {
            variant,
            stage_channels,
            stage_depths,
            stage_kernel_sizes: [3, 5, 7, 9],
            stda_groups: [2, 2, 3, 4],
            stda_blocks: [0, 1, 1, 1],
            stda_kernel_size: 3,
            attn_heads: 4,
            mlp_expansion: 4,
            head_dim: 512,
            input_side: 112,
            stem_patch: 4,
            drop_rate: 0.0,
            norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stage_channels.iter().chain(&self.stage_depths).any(|&v| v == 0) {
            return bad("stage channels and depths must be positive".into());
        }
        if self.stage_kernel_sizes.iter().any(|k| k % 2 == 0) || self.stda_kernel_size.is_multiple_of(2) {
            return bad("kernel sizes must be odd".into());
        }
        if self.stage_kernel_sizes.windows(2).any(|w| w[0] > w[1]) {
            return bad("stage kernel sizes must be non-decreasing".into());
        }
        for i in 0..4 {
            let c = self.stage_channels[i];
            if self.stda_blocks[i] > self.stage_depths[i] {
                return bad(format!("stage {i}: more split-attention blocks than depth"));
            }
            if self.stda_blocks[i] > 0 {
                if !c.is_multiple_of(self.attn_heads) {
                    return bad(format!("stage {i}: {} heads do not divide {c} channels", self.attn_heads));
                }
                split_widths(c, self.stda_groups[i])?;
            }
        }
        if self.attn_heads == 0 || self.mlp_expansion == 0 || self.head_dim == 0 || self.stem_patch == 0 {
            return bad("heads, expansion, head width and stem patch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop rate {} outside [0, 1)", self.drop_rate));
        }
        Ok(())
    }

    /// Spatial side after the stem and after each stage.
    pub fn spatial_trajectory(&self) -> [usize; 5] {
        let stem = self.input_side / self.stem_patch;
        let s1 = stem;
        let s2 = s1 / 2;
        let s3 = s2 / 2;
        let s4 = s3 / 2;
        [stem, s1, s2, s3, s4]
    }
}

/// Channel widths of the split groups: `ceil(C / groups)` for all but the last,
/// which takes the remainder.
pub fn split_widths(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || groups > channels {
        return Err(Error::InvalidArgument(format!(
            "cannot split {channels} channels into {groups} groups"
        )));
    }
    let chunk = channels.div_ceil(groups);
    let used = chunk * (groups - 1);
    if used >= channels {
        return Err(Error::InvalidArgument(format!(
            "{groups} groups of width {chunk} leave nothing for the last split of {channels} channels"
        )));
    }
    let mut widths = vec![chunk; groups - 1];
    widths.push(channels - used);
    Ok(widths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_widths_and_trajectory() {
        assert_eq!(Variant::Small.spec().stage_channels, [48, 96, 160, 304]);
        assert_eq!(Variant::XSmall.spec().stage_channels, [32, 64, 100, 192]);
        assert_eq!(Variant::XxSmall.spec().stage_channels, [24, 48, 88, 168]);
        for v in Variant::ALL {
            let s = v.spec();
            s.validate().unwrap();
            assert_eq!(s.spatial_trajectory(), [28, 28, 14, 7, 3]);
        }
    }

    #[test]
    fn parse_variant_names() {
        assert_eq!("xs".parse::<Variant>().unwrap(), Variant::XSmall);
        assert_eq!("XX-SMALL".parse::<Variant>().unwrap(), Variant::XxSmall);
        assert!("m".parse::<Variant>().is_err());
    }

    #[test]
    fn splits_partition_channels() {
        assert_eq!(split_widths(100, 3).unwrap(), vec![34, 34, 32]);
        assert_eq!(split_widths(192, 4).unwrap(), vec![48; 4]);
        assert_eq!(split_widths(88, 3).unwrap(), vec![30, 30, 28]);
        assert_eq!(split_widths(7, 1).unwrap(), vec![7]);
        assert!(split_widths(4, 5).is_err());
        // 10 channels in 4 groups of 3 would leave 1, fine; 9 in 4 groups of 3 leaves 0
        assert!(split_widths(9, 4).is_err());
        for c in 1..64 {
            for g in 1..=c.min(6) {
                if let Ok(w) = split_widths(c, g) {
                    assert_eq!(w.iter().sum::<usize>(), c);
                }
            }
        }
    }

    #[test]
    fn rejects_decreasing_kernels() {
        let mut s = Variant::XSmall.spec();
        s.stage_kernel_sizes = [5, 3, 7, 9];
        assert!(s.validate().is_err());
        let mut s = Variant::XSmall.spec();
        s.attn_heads = 3;
        assert!(s.validate().is_err());
    }
}
