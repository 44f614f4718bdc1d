//! Parameter and multiply-accumulate census of a built model.
//!
//! Conventions: a convolution costs `OC * OH * OW * (in_ch_per_group * kh * kw)`
//! MACs (padded taps included), a linear layer `M * N` per token and a LoRaLin
//! layer `r * (M + N)` per token. Channel attention adds its two
//! `d_head x d_head x tokens` products per head. Norms, activations, softmax,
//! pooling, layer scales and residual additions count zero.
//!
//! `mflops` counts two operations per MAC, the usual FLOP reporting
//! convention; `mmacs` is the raw MAC count in millions.

use serde::{Deserialize, Serialize};

use crate::backbone::{attention_product_macs, Block, EdgeFaceModel, VariantSpec};
use crate::error::{shape_err, Result};
use crate::io::round_sig;
use crate::loralin::{layer_cost, Linear};
use crate::tensor::ConvParams;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub layer: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    /// `total_params / 1e6`
    pub mparams: f64,
    /// `2 * total_macs / 1e6`
    pub mflops: f64,
    /// `total_macs / 1e6`
    pub mmacs: f64,
    pub variant: String,
    pub gamma: Option<f64>,
}

impl CostReport {
    fn from_rows(rows: Vec<CostRow>, variant: String, gamma: Option<f64>) -> Self {
        let total_params: u64 = rows.iter().map(|r| r.params).sum();
        let total_macs: u64 = rows.iter().map(|r| r.macs).sum();
        Self {
            rows,
            total_params,
            total_macs,
            mparams: round_sig(total_params as f64 / 1e6),
            mflops: round_sig(2.0 * total_macs as f64 / 1e6),
            mmacs: round_sig(total_macs as f64 / 1e6),
            variant,
            gamma,
        }
    }

    /// `layer,params,macs` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,macs\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.layer, r.params, r.macs));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }
}

fn conv_row(name: &str, conv: &ConvParams, h: usize, w: usize) -> Result<(CostRow, usize, usize)> {
    let (oh, ow) = conv.output_hw(h, w)?;
    let (kh, kw) = conv.kernel();
    let icpg = conv.weight.shape()[1];
    let macs = (conv.out_channels() * oh * ow * icpg * kh * kw) as u64;
    Ok((
        CostRow {
            layer: name.to_string(),
            params: conv.param_count() as u64,
            macs,
        },
        oh,
        ow,
    ))
}

fn linear_row(name: &str, lin: &Linear, tokens: usize) -> Result<CostRow> {
    let cost = layer_cost(&lin.descriptor())?;
    Ok(CostRow {
        layer: name.to_string(),
        params: lin.param_count() as u64,
        macs: cost.macs_per_row * tokens as u64,
    })
}

fn free_row(name: &str, params: usize) -> CostRow {
    CostRow {
        layer: name.to_string(),
        params: params as u64,
        macs: 0,
    }
}

/// Analytic census for one `input_hw` image.
pub fn count(model: &EdgeFaceModel, input_hw: (usize, usize)) -> Result<CostReport> {
    let side = model.spec.input_side;
    if input_hw != (side, side) {
        return Err(shape_err(
            "count",
            format!("model expects {side}x{side} input, got {}x{}", input_hw.0, input_hw.1),
        ));
    }
    let mut rows = Vec::new();
    let (mut h, mut w) = input_hw;

    let (row, oh, ow) = conv_row("stem.conv", &model.stem.conv, h, w)?;
    rows.push(row);
    (h, w) = (oh, ow);
    rows.push(free_row("stem.norm", model.stem.norm.param_count()));

    for (i, stage) in model.stages.iter().enumerate() {
        if let Some(d) = &stage.downsample {
            let p = format!("stage{i}.downsample");
            rows.push(free_row(&format!("{p}.norm"), d.norm.param_count()));
            let (row, oh, ow) = conv_row(&format!("{p}.conv"), &d.conv, h, w)?;
            rows.push(row);
            (h, w) = (oh, ow);
        }
        let tokens = h * w;
        for (j, block) in stage.blocks.iter().enumerate() {
            let p = format!("stage{i}.block{j}");
            match block {
                Block::Conv(b) => {
                    rows.push(conv_row(&format!("{p}.dwconv"), &b.dwconv, h, w)?.0);
                    rows.push(free_row(&format!("{p}.norm"), b.norm.param_count()));
                    rows.push(linear_row(&format!("{p}.mlp.fc1"), &b.mlp.fc1, tokens)?);
                    rows.push(linear_row(&format!("{p}.mlp.fc2"), &b.mlp.fc2, tokens)?);
                    rows.push(free_row(&format!("{p}.gamma"), b.gamma.len()));
                }
                Block::Stda(b) => {
                    for (k, conv) in b.convs.iter().enumerate() {
                        rows.push(conv_row(&format!("{p}.convs.{k}"), conv, h, w)?.0);
                    }
                    rows.push(free_row(&format!("{p}.norm_xca"), b.norm_xca.param_count()));
                    rows.push(free_row(&format!("{p}.gamma_xca"), b.gamma_xca.len()));
                    rows.push(linear_row(&format!("{p}.xca.qkv"), &b.xca.qkv, tokens)?);
                    rows.push(CostRow {
                        layer: format!("{p}.xca.temperature"),
                        params: b.xca.temperature.len() as u64,
                        macs: attention_product_macs(tokens, b.xca.channels(), b.xca.heads),
                    });
                    rows.push(linear_row(&format!("{p}.xca.proj"), &b.xca.proj, tokens)?);
                    rows.push(free_row(&format!("{p}.norm"), b.norm.param_count()));
                    rows.push(linear_row(&format!("{p}.mlp.fc1"), &b.mlp.fc1, tokens)?);
                    rows.push(linear_row(&format!("{p}.mlp.fc2"), &b.mlp.fc2, tokens)?);
                    rows.push(free_row(&format!("{p}.gamma"), b.gamma.len()));
                }
            }
        }
    }
    rows.push(free_row("head.norm", model.head.norm.param_count()));
    rows.push(linear_row("head.fc", &model.head.fc, 1)?);

    Ok(CostReport::from_rows(rows, model.spec.variant.name().to_string(), model.gamma))
}

/// Cost of a model built from `spec` at rank-ratio `gamma` (`None` = dense).
pub fn count_spec(spec: &VariantSpec, gamma: Option<f64>) -> Result<CostReport> {
    let model = EdgeFaceModel::skeleton(spec, gamma)?;
    count(&model, (spec.input_side, spec.input_side))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` marks the reference row (dense linears).
    pub gamma: Option<f64>,
    pub mparams: f64,
    pub mflops: f64,
    /// Signed change relative to the reference, in percent.
    pub delta_params_pct: f64,
    pub delta_flops_pct: f64,
}

/// Reference row followed by one row per rank-ratio.
pub fn gamma_sweep(spec: &VariantSpec, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    let base = count_spec(spec, None)?;
    let pct = |v: u64, b: u64| round_sig((v as f64 / b as f64 - 1.0) * 100.0);
    let mut rows = vec![SweepRow {
        gamma: None,
        mparams: base.mparams,
        mflops: base.mflops,
        delta_params_pct: 0.0,
        delta_flops_pct: 0.0,
    }];
    for &g in gammas {
        let r = count_spec(spec, Some(g))?;
        rows.push(SweepRow {
            gamma: Some(g),
            mparams: r.mparams,
            mflops: r.mflops,
            delta_params_pct: pct(r.total_params, base.total_params),
            delta_flops_pct: pct(r.total_macs, base.total_macs),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("gamma,mparams,mflops,delta_params_pct,delta_flops_pct\n");
    for r in rows {
        let g = r.gamma.map_or_else(|| "default".to_string(), |g| g.to_string());
        s.push_str(&format!(
            "{g},{},{},{},{}\n",
            r.mparams, r.mflops, r.delta_params_pct, r.delta_flops_pct
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Variant;
    use crate::loralin::LinearDescriptor;

    #[test]
    fn totals_are_row_sums_and_match_census() {
        let spec = Variant::XxSmall.spec();
        for gamma in [None, Some(0.3)] {
            let model = EdgeFaceModel::skeleton(&spec, gamma).unwrap();
            let r = count(&model, (112, 112)).unwrap();
            assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
            assert_eq!(r.total_macs, r.rows.iter().map(|x| x.macs).sum::<u64>());
            assert_eq!(r.total_params as usize, model.param_count());
        }
    }

    #[test]
    fn every_param_belongs_to_exactly_one_row() {
        let model = EdgeFaceModel::skeleton(&Variant::XxSmall.spec(), Some(0.5)).unwrap();
        let r = count(&model, (112, 112)).unwrap();
        for (name, p) in model.params() {
            let owners: Vec<_> = r
                .rows
                .iter()
                .filter(|row| name == row.layer || name.starts_with(&format!("{}.", row.layer)))
                .collect();
            assert_eq!(owners.len(), 1, "{name} owned by {owners:?}");
            assert!(owners[0].params as usize >= p.data().len());
        }
    }

    #[test]
    fn single_linear_fragment() {
        let lin = Linear::zeros(192, 512, None, true).unwrap();
        let row = linear_row("fc", &lin, 1).unwrap();
        assert_eq!(row.macs, 98_304);
        assert_eq!(row.params, 98_816);
    }

    #[test]
    fn low_rank_rows_agree_with_layer_cost() {
        let model = EdgeFaceModel::skeleton(&Variant::XSmall.spec(), Some(0.6)).unwrap();
        for (_, lin) in model.linears() {
            let c = layer_cost(&lin.descriptor()).unwrap();
            assert_eq!(c.params, lin.param_count() as u64);
            assert!(matches!(lin.descriptor(), LinearDescriptor::LowRank { .. }));
        }
    }

    #[test]
    fn wrong_input_size_rejected() {
        let model = EdgeFaceModel::skeleton(&Variant::XxSmall.spec(), None).unwrap();
        assert!(count(&model, (128, 128)).is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = gamma_sweep(&Variant::XxSmall.spec(), &[0.5]).unwrap();
        let csv = sweep_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "gamma,mparams,mflops,delta_params_pct,delta_flops_pct");
        assert!(lines[1].starts_with("default,"));
        assert!(lines[2].starts_with("0.5,"));
    }
}
