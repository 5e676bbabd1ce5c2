//! Declarative decoder configuration.
//!
//! A decoder is an ordered chain `[mid, up_0, …, up_k]` plus a head. Every
//! block holds one channel-change convolution (feeding the upsampler when
//! the block upsamples), then `num_resblocks` residual blocks at the block
//! width. The head is GroupNorm → SiLU → standard conv to 3 channels.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Standard,
    Dwsep,
}

/// Default kernel size per convolution kind.
pub fn default_kernel(kind: ConvKind) -> usize {
    match kind {
        ConvKind::Standard => 3,
        ConvKind::Dwsep => 5,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub name: String,
    pub num_resblocks: usize,
    /// `(r_t, r_s)`.
    pub upsample: (usize, usize),
    pub conv_kind: ConvKind,
    pub kernel_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kernel_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { kernel_size: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub latent_channels: usize,
    /// Width of `up_0` (equals `channel_schedule[1]`).
    pub base_channels: usize,
    /// Output width of every block, parallel to `blocks`.
    pub channel_schedule: Vec<usize>,
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub head: HeadConfig,
    /// Overall `(d_t, d_h, d_w)`; must equal the product of per-block factors.
    pub factors: (usize, usize, usize),
    #[serde(default = "default_norm_groups")]
    pub norm_groups: usize,
    /// Causal replicate temporal padding when true, symmetric zero otherwise.
    #[serde(default = "default_true")]
    pub temporal_causal: bool,
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
}

fn default_norm_groups() -> usize {
    32
}

fn default_true() -> bool {
    true
}

fn default_out_channels() -> usize {
    3
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("decoder needs at least one block".into()));
        }
        if self.channel_schedule.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "channel_schedule has {} entries for {} blocks",
                self.channel_schedule.len(),
                self.blocks.len()
            )));
        }
        if self.blocks[0].name != "mid" {
            return Err(Error::Config("first block must be named \"mid\"".into()));
        }
        if self.blocks[0].upsample != (1, 1) {
            return Err(Error::Config("mid block must not upsample".into()));
        }
        for (i, b) in self.blocks.iter().enumerate().skip(1) {
            let expected = format!("up_{}", i - 1);
            if b.name != expected {
                return Err(Error::Config(format!(
                    "block {i} must be named {expected:?}, got {:?}",
                    b.name
                )));
            }
        }
        for (b, &w) in self.blocks.iter().zip(&self.channel_schedule) {
            if w == 0 {
                return Err(Error::Config(format!("block {} has zero width", b.name)));
            }
            if b.kernel_size % 2 == 0 {
                return Err(Error::Config(format!(
                    "block {} kernel size {} is even",
                    b.name, b.kernel_size
                )));
            }
            if b.upsample.0 == 0 || b.upsample.1 == 0 {
                return Err(Error::Config(format!(
                    "block {} upsample factors must be >= 1",
                    b.name
                )));
            }
            if w % self.norm_groups != 0 {
                return Err(Error::Config(format!(
                    "block {} width {w} not divisible by {} norm groups",
                    b.name, self.norm_groups
                )));
            }
        }
        if self.head.kernel_size % 2 == 0 {
            return Err(Error::Config("head kernel size is even".into()));
        }
        if self.channel_schedule.len() > 1 && self.base_channels != self.channel_schedule[1] {
            return Err(Error::Config(format!(
                "base_channels {} != up_0 width {}",
                self.base_channels, self.channel_schedule[1]
            )));
        }
        let d_t: usize = self.blocks.iter().map(|b| b.upsample.0).product();
        let d_s: usize = self.blocks.iter().map(|b| b.upsample.1).product();
        if (d_t, d_s, d_s) != self.factors {
            return Err(Error::Config(format!(
                "per-block factors multiply to ({d_t}, {d_s}, {d_s}), config declares {:?}",
                self.factors
            )));
        }
        if self.latent_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn block_width(&self, index: usize) -> usize {
        self.channel_schedule[index]
    }

    /// Input width of block `index`'s convolution.
    pub fn block_input_width(&self, index: usize) -> usize {
        if index == 0 {
            self.latent_channels
        } else {
            self.channel_schedule[index - 1]
        }
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    pub fn last_width(&self) -> usize {
        *self.channel_schedule.last().unwrap()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Expected video shape for a latent of shape `(N, C, T_l, H_l, W_l)`:
    /// `(N, 3, d_t·(T_l − 1) + 1, d_h·H_l, d_w·W_l)`.
    pub fn video_shape_for(&self, latent: crate::Shape5) -> Result<crate::Shape5> {
        let [n, c, t, h, w] = latent;
        if c != self.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {c} channels, config expects {}",
                self.latent_channels
            )));
        }
        if t == 0 {
            return Err(Error::Shape("latent needs at least one frame".into()));
        }
        let (d_t, d_h, d_w) = self.factors;
        Ok([n, self.out_channels, d_t * (t - 1) + 1, d_h * h, d_w * w])
    }
}

/// Latent grid implied by a video of `(frames, height, width)` under the
/// configured compression: `(C, T/d_t + 1, H/d_h, W/d_w)` for `frames = T + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LatentSpec {
    pub channels: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl LatentSpec {
    pub fn for_video(
        cfg: &DecoderConfig,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let (d_t, d_h, d_w) = cfg.factors;
        if frames == 0 || (frames - 1) % d_t != 0 {
            return Err(Error::Shape(format!(
                "video frame count {frames} is not 1 + a multiple of d_t = {d_t}"
            )));
        }
        if height % d_h != 0 || width % d_w != 0 {
            return Err(Error::Shape(format!(
                "video extents {height}x{width} not divisible by ({d_h}, {d_w})"
            )));
        }
        Ok(Self {
            channels: cfg.latent_channels,
            t: (frames - 1) / d_t + 1,
            h: height / d_h,
            w: width / d_w,
        })
    }

    pub fn shape(&self, batch: usize) -> crate::Shape5 {
        [batch, self.channels, self.t, self.h, self.w]
    }
}

fn block(name: &str, num_resblocks: usize, upsample: (usize, usize), kind: ConvKind) -> BlockConfig {
    BlockConfig {
        name: name.into(),
        num_resblocks,
        upsample,
        conv_kind: kind,
        kernel_size: default_kernel(kind),
    }
}

/// Default decoder for the 1:192 compression `(8, 32, 32)`: separable
/// convolutions in the low-resolution blocks (mid, up_0), standard elsewhere.
pub fn preset_8_32_32() -> DecoderConfig {
    DecoderConfig {
        latent_channels: 128,
        base_channels: 512,
        channel_schedule: vec![512, 512, 256, 128, 128],
        blocks: vec![
            block("mid", 1, (1, 1), ConvKind::Dwsep),
            block("up_0", 2, (2, 1), ConvKind::Dwsep),
            block("up_1", 2, (2, 2), ConvKind::Standard),
            block("up_2", 2, (2, 4), ConvKind::Standard),
            block("up_3", 2, (1, 4), ConvKind::Standard),
        ],
        head: HeadConfig::default(),
        factors: (8, 32, 32),
        norm_groups: 32,
        temporal_causal: true,
        out_channels: 3,
    }
}

/// Default decoder for `(4, 32, 32)`.
pub fn preset_4_32_32() -> DecoderConfig {
    DecoderConfig {
        latent_channels: 128,
        base_channels: 512,
        channel_schedule: vec![512, 512, 256, 128, 128],
        blocks: vec![
            block("mid", 1, (1, 1), ConvKind::Dwsep),
            block("up_0", 2, (2, 1), ConvKind::Dwsep),
            block("up_1", 2, (2, 2), ConvKind::Standard),
            block("up_2", 2, (1, 4), ConvKind::Standard),
            block("up_3", 2, (1, 4), ConvKind::Standard),
        ],
        head: HeadConfig::default(),
        factors: (4, 32, 32),
        norm_groups: 32,
        temporal_causal: true,
        out_channels: 3,
    }
}

/// Default decoder for `(4, 8, 8)` with a 16-channel latent.
pub fn preset_4_8_8() -> DecoderConfig {
    DecoderConfig {
        latent_channels: 16,
        base_channels: 512,
        channel_schedule: vec![512, 512, 256, 128],
        blocks: vec![
            block("mid", 1, (1, 1), ConvKind::Dwsep),
            block("up_0", 2, (2, 2), ConvKind::Dwsep),
            block("up_1", 2, (2, 2), ConvKind::Standard),
            block("up_2", 2, (1, 2), ConvKind::Standard),
        ],
        head: HeadConfig::default(),
        factors: (4, 8, 8),
        norm_groups: 32,
        temporal_causal: true,
        out_channels: 3,
    }
}

/// Look up a named preset.
pub fn preset(name: &str) -> Result<DecoderConfig> {
    match name {
        "8x32" | "ltx" | "default" => Ok(preset_8_32_32()),
        "4x32" | "dc" => Ok(preset_4_32_32()),
        "4x8" | "hunyuan" => Ok(preset_4_8_8()),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; expected 8x32, 4x32 or 4x8"
        ))),
    }
}

/// A deliberately thin decoder with the same block structure, for tests and
/// toy training. `widths` are per block (mid first); `factors_per_up` pairs
/// `(r_t, r_s)` per up block.
pub fn tiny_config(
    latent_channels: usize,
    widths: &[usize],
    factors_per_up: &[(usize, usize)],
    norm_groups: usize,
) -> DecoderConfig {
    assert_eq!(widths.len(), factors_per_up.len() + 1);
    let mut blocks = vec![block("mid", 1, (1, 1), ConvKind::Dwsep)];
    for (i, &f) in factors_per_up.iter().enumerate() {
        let kind = if i == 0 { ConvKind::Dwsep } else { ConvKind::Standard };
        blocks.push(block(&format!("up_{i}"), 1, f, kind));
    }
    let d_t = factors_per_up.iter().map(|f| f.0).product();
    let d_s: usize = factors_per_up.iter().map(|f| f.1).product();
    DecoderConfig {
        latent_channels,
        base_channels: widths[1],
        channel_schedule: widths.to_vec(),
        blocks,
        head: HeadConfig::default(),
        factors: (d_t, d_s, d_s),
        norm_groups,
        temporal_causal: true,
        out_channels: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn presets_validate() {
        for cfg in [preset_8_32_32(), preset_4_32_32(), preset_4_8_8()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn shape_laws() {
        assert_eq!(
            preset_8_32_32().video_shape_for([1, 128, 3, 8, 8]).unwrap(),
            [1, 3, 17, 256, 256]
        );
        assert_eq!(
            preset_4_8_8().video_shape_for([1, 16, 5, 32, 32]).unwrap(),
            [1, 3, 17, 256, 256]
        );
        assert_eq!(
            preset_4_32_32().video_shape_for([1, 128, 5, 8, 8]).unwrap(),
            [1, 3, 17, 256, 256]
        );
    }

    #[test]
    fn latent_spec_round_trip() {
        let cfg = preset_8_32_32();
        let spec = LatentSpec::for_video(&cfg, 17, 256, 256).unwrap();
        assert_eq!(spec.shape(1), [1, 128, 3, 8, 8]);
        assert!(LatentSpec::for_video(&cfg, 16, 256, 256).is_err());
        assert!(LatentSpec::for_video(&cfg, 17, 250, 256).is_err());
    }

    #[test]
    fn factor_mismatch_rejected() {
        let mut cfg = preset_8_32_32();
        cfg.factors = (8, 16, 16);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let cfg = preset_8_32_32();
        let back = DecoderConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
