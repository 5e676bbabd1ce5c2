//! Parameter accounting and the low→high separable-replacement sweep.

use serde::Serialize;

use crate::decoder::config::{default_kernel, ConvKind, DecoderConfig};
use crate::decoder::graph::weight_spec;
use crate::error::{Error, Result};

/// Per-block and total parameter counts, derived from the shapes of the
/// weights the config actually allocates.
#[derive(Debug, Clone, Serialize)]
pub struct ParamReport {
    pub per_block: Vec<(String, u64)>,
    pub total: u64,
}

pub fn count_params(cfg: &DecoderConfig) -> Result<ParamReport> {
    let mut per_block: Vec<(String, u64)> = cfg
        .blocks
        .iter()
        .map(|b| (b.name.clone(), 0u64))
        .chain(std::iter::once(("head".to_string(), 0u64)))
        .collect();
    for (name, dims) in weight_spec(cfg)? {
        let group = name.split('/').next().unwrap_or_default();
        let count: u64 = dims.iter().map(|&d| d as u64).product();
        let slot = per_block
            .iter_mut()
            .find(|(g, _)| g == group)
            .expect("weight name outside block groups");
        slot.1 += count;
    }
    let total = per_block.iter().map(|(_, c)| c).sum();
    Ok(ParamReport { per_block, total })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// "none" for the all-standard baseline, else the last replaced block.
    pub replace_upto: String,
    pub params: u64,
    #[serde(skip)]
    pub config: DecoderConfig,
}

/// All-standard variant of a config (kernel reset to the standard default).
pub fn all_standard(cfg: &DecoderConfig) -> DecoderConfig {
    let mut out = cfg.clone();
    for b in &mut out.blocks {
        b.conv_kind = ConvKind::Standard;
        b.kernel_size = default_kernel(ConvKind::Standard);
    }
    out
}

/// Emit the replacement family: the all-standard baseline, then configs with
/// separable convolutions in every block up to and including `mid`, `up_0`,
/// …, `replace_upto` (separable blocks use the separable default kernel).
pub fn redundancy_sweep(cfg: &DecoderConfig, replace_upto: &str) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let names = cfg.block_names();
    let upto = names
        .iter()
        .position(|n| n == replace_upto)
        .ok_or_else(|| Error::Config(format!("unknown block name {replace_upto:?}")))?;
    let baseline = all_standard(cfg);
    let mut rows = vec![SweepRow {
        replace_upto: "none".into(),
        params: count_params(&baseline)?.total,
        config: baseline.clone(),
    }];
    for i in 0..=upto {
        let mut variant = baseline.clone();
        for b in &mut variant.blocks[..=i] {
            b.conv_kind = ConvKind::Dwsep;
            b.kernel_size = default_kernel(ConvKind::Dwsep);
        }
        rows.push(SweepRow {
            replace_upto: names[i].clone(),
            params: count_params(&variant)?.total,
            config: variant,
        });
    }
    Ok(rows)
}
