//! Decoder graph: weight naming, initialization, forward passes (plain,
//! timed, taped) and the reverse-mode backward used for training.
//!
//! Block structure (upsample-first): one channel-change convolution whose
//! output feeds the decoupled upsampler (`r_t·r_s²·width` channels), the
//! temporal rearrangement dropping the leading `r_t − 1` frames so a
//! `T_l`-frame latent yields `d_t·(T_l − 1) + 1` output frames, the
//! framewise 2D pixel shuffle, then the block's residual stack.
//!
//! Weight names are '/'-separated: `up_0/res1/conv1/weight`,
//! `mid/conv/dw_weight`, `head/norm/gamma`, …

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::time::{Duration, Instant};

use crate::decoder::config::{ConvKind, DecoderConfig};
use crate::error::{Error, Result};
use crate::ops::{
    conv3d, conv3d_backward, dwsep_conv3d, dwsep_conv3d_backward, group_norm, group_norm_backward,
    silu, silu_backward, Conv3dParams, DwSepConv3dParams, GroupNormParams, PadSpec,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;
use crate::upsample::{channel_to_time, pixel_shuffle_2d_video, pixel_unshuffle_2d_video, time_to_channel};
use crate::weights::{validate_against, NamedTensor, ValidationReport, WeightStore};

pub type FeatureMap<S> = IndexMap<String, Tensor5<S>>;

const GROUP_NORM_EPS: f64 = 1e-6;

/// What a weight slot holds; drives initialization.
#[derive(Clone, Copy, Debug)]
enum SlotKind {
    /// Normal with std `gain / sqrt(fan_in)`. Gain √2 after an activation,
    /// 1 for plain channel-change convs, 0 for the residual branch's last
    /// conv (blocks start as identities, keeping feature scales bounded).
    ConvWeight { fan_in: usize, gain: f64 },
    Bias,
    Gamma,
    Beta,
}

const GAIN_LINEAR: f64 = 1.0;
const GAIN_POST_ACT: f64 = std::f64::consts::SQRT_2;
const GAIN_ZERO: f64 = 0.0;

/// Enumerate every weight the config demands, in a fixed order.
fn for_each_weight(
    cfg: &DecoderConfig,
    mut f: impl FnMut(String, Vec<usize>, SlotKind),
) -> Result<()> {
    cfg.validate()?;
    let conv_slots = |prefix: &str, kind: ConvKind, k: usize, c_in: usize, c_out: usize,
                      gain: f64, f: &mut dyn FnMut(String, Vec<usize>, SlotKind)| {
        match kind {
            ConvKind::Standard => {
                f(
                    format!("{prefix}/weight"),
                    vec![c_out, c_in, k, k, k],
                    SlotKind::ConvWeight { fan_in: c_in * k * k * k, gain },
                );
                f(format!("{prefix}/bias"), vec![c_out], SlotKind::Bias);
            }
            ConvKind::Dwsep => {
                // The depthwise stage is variance-preserving; the pointwise
                // stage carries the slot's gain.
                f(
                    format!("{prefix}/dw_weight"),
                    vec![c_in, 1, k, k, k],
                    SlotKind::ConvWeight { fan_in: k * k * k, gain: GAIN_LINEAR },
                );
                f(format!("{prefix}/dw_bias"), vec![c_in], SlotKind::Bias);
                f(
                    format!("{prefix}/pw_weight"),
                    vec![c_out, c_in, 1, 1, 1],
                    SlotKind::ConvWeight { fan_in: c_in, gain },
                );
                f(format!("{prefix}/pw_bias"), vec![c_out], SlotKind::Bias);
            }
        }
    };

    for (i, b) in cfg.blocks.iter().enumerate() {
        let w = cfg.block_width(i);
        let w_in = cfg.block_input_width(i);
        let (r_t, r_s) = b.upsample;
        let conv_out = r_t * r_s * r_s * w;
        conv_slots(
            &format!("{}/conv", b.name),
            b.conv_kind,
            b.kernel_size,
            w_in,
            conv_out,
            GAIN_LINEAR,
            &mut f,
        );
        for r in 0..b.num_resblocks {
            let p = format!("{}/res{r}", b.name);
            f(format!("{p}/norm1/gamma"), vec![w], SlotKind::Gamma);
            f(format!("{p}/norm1/beta"), vec![w], SlotKind::Beta);
            conv_slots(&format!("{p}/conv1"), b.conv_kind, b.kernel_size, w, w, GAIN_POST_ACT, &mut f);
            f(format!("{p}/norm2/gamma"), vec![w], SlotKind::Gamma);
            f(format!("{p}/norm2/beta"), vec![w], SlotKind::Beta);
            conv_slots(&format!("{p}/conv2"), b.conv_kind, b.kernel_size, w, w, GAIN_ZERO, &mut f);
        }
    }
    let w_last = cfg.last_width();
    f("head/norm/gamma".into(), vec![w_last], SlotKind::Gamma);
    f("head/norm/beta".into(), vec![w_last], SlotKind::Beta);
    let k = cfg.head.kernel_size;
    f(
        "head/conv/weight".into(),
        vec![cfg.out_channels, w_last, k, k, k],
        SlotKind::ConvWeight { fan_in: w_last * k * k * k, gain: GAIN_POST_ACT },
    );
    f("head/conv/bias".into(), vec![cfg.out_channels], SlotKind::Bias);
    Ok(())
}

/// `(name, shape)` list the config demands of a weight store.
pub fn weight_spec(cfg: &DecoderConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for_each_weight(cfg, |name, dims, _| out.push((name, dims)))?;
    Ok(out)
}

/// Seeded He-normal initialization of every weight the config demands.
pub fn init_weights<S: Scalar>(cfg: &DecoderConfig, seed: u64) -> Result<WeightStore<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut store = WeightStore::new();
    let mut failure = None;
    for_each_weight(cfg, |name, dims, kind| {
        let n: usize = dims.iter().product();
        let data: Vec<S> = match kind {
            SlotKind::ConvWeight { fan_in, gain } => {
                let std = gain / (fan_in as f64).sqrt();
                (0..n).map(|_| S::of_f64(normal.sample(&mut rng) * std)).collect()
            }
            SlotKind::Bias | SlotKind::Beta => vec![S::zero(); n],
            SlotKind::Gamma => vec![S::one(); n],
        };
        if let Err(e) = NamedTensor::new(dims, data).and_then(|t| store.insert(&name, t)) {
            failure.get_or_insert(e);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(store),
    }
}

/// Cross-check a store against the names and shapes the config demands.
pub fn validate_store<S: Scalar>(
    store: &WeightStore<S>,
    cfg: &DecoderConfig,
) -> Result<ValidationReport> {
    Ok(validate_against(store, &weight_spec(cfg)?))
}

fn acc5<S: Scalar>(grads: &mut WeightStore<S>, name: &str, t: Tensor5<S>) -> Result<()> {
    match grads.get_mut(name) {
        Some(e) => {
            for (a, &b) in e.data.iter_mut().zip(t.as_slice()) {
                *a += b;
            }
            Ok(())
        }
        None => grads.insert_tensor5(name, t),
    }
}

fn acc1<S: Scalar>(grads: &mut WeightStore<S>, name: &str, v: Vec<S>) -> Result<()> {
    match grads.get_mut(name) {
        Some(e) => {
            for (a, &b) in e.data.iter_mut().zip(&v) {
                *a += b;
            }
            Ok(())
        }
        None => grads.insert_vec(name, v),
    }
}

/// One convolution (standard or separable) bound to its weight names.
pub(crate) struct ConvUnit<S> {
    prefix: String,
    params: ConvUnitParams<S>,
}

enum ConvUnitParams<S> {
    Std(Conv3dParams<S>),
    Sep(DwSepConv3dParams<S>),
}

impl<S: Scalar> ConvUnit<S> {
    pub(crate) fn build(
        prefix: &str,
        kind: ConvKind,
        kernel: usize,
        causal: bool,
        store: &WeightStore<S>,
    ) -> Result<Self> {
        let k = (kernel, kernel, kernel);
        let pad = if causal { PadSpec::same_causal(k) } else { PadSpec::same_symmetric(k) };
        let params = match kind {
            ConvKind::Standard => ConvUnitParams::Std(Conv3dParams::new(
                store.tensor5(&format!("{prefix}/weight"))?,
                Some(store.vec1(&format!("{prefix}/bias"))?),
                pad,
            )?),
            ConvKind::Dwsep => ConvUnitParams::Sep(DwSepConv3dParams::new(
                store.tensor5(&format!("{prefix}/dw_weight"))?,
                Some(store.vec1(&format!("{prefix}/dw_bias"))?),
                store.tensor5(&format!("{prefix}/pw_weight"))?,
                Some(store.vec1(&format!("{prefix}/pw_bias"))?),
                pad,
            )?),
        };
        Ok(Self { prefix: prefix.to_string(), params })
    }

    pub(crate) fn pointwise(prefix: &str, store: &WeightStore<S>) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            params: ConvUnitParams::Std(Conv3dParams::new(
                store.tensor5(&format!("{prefix}/weight"))?,
                Some(store.vec1(&format!("{prefix}/bias"))?),
                PadSpec::same_symmetric((1, 1, 1)),
            )?),
        })
    }

    pub(crate) fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        match &self.params {
            ConvUnitParams::Std(p) => conv3d(x, p),
            ConvUnitParams::Sep(p) => dwsep_conv3d(x, p),
        }
    }

    /// Returns the input gradient; parameter gradients accumulate in `grads`.
    pub(crate) fn backward(
        &self,
        x: &Tensor5<S>,
        upstream: &Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        match &self.params {
            ConvUnitParams::Std(p) => {
                let g = conv3d_backward(x, p, upstream)?;
                acc5(grads, &format!("{}/weight", self.prefix), g.weight)?;
                if let Some(b) = g.bias {
                    acc1(grads, &format!("{}/bias", self.prefix), b)?;
                }
                Ok(g.input)
            }
            ConvUnitParams::Sep(p) => {
                let g = dwsep_conv3d_backward(x, p, upstream)?;
                acc5(grads, &format!("{}/dw_weight", self.prefix), g.depthwise)?;
                if let Some(b) = g.dw_bias {
                    acc1(grads, &format!("{}/dw_bias", self.prefix), b)?;
                }
                acc5(grads, &format!("{}/pw_weight", self.prefix), g.pointwise)?;
                if let Some(b) = g.pw_bias {
                    acc1(grads, &format!("{}/pw_bias", self.prefix), b)?;
                }
                Ok(g.input)
            }
        }
    }
}

struct NormUnit<S> {
    prefix: String,
    params: GroupNormParams<S>,
}

impl<S: Scalar> NormUnit<S> {
    fn build(prefix: &str, groups: usize, store: &WeightStore<S>) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            params: GroupNormParams::new(
                groups,
                store.vec1(&format!("{prefix}/gamma"))?,
                store.vec1(&format!("{prefix}/beta"))?,
                S::of_f64(GROUP_NORM_EPS),
            )?,
        })
    }

    fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        group_norm(x, &self.params)
    }

    fn backward(
        &self,
        x: &Tensor5<S>,
        upstream: &Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        let g = group_norm_backward(x, &self.params, upstream)?;
        acc1(grads, &format!("{}/gamma", self.prefix), g.gamma)?;
        acc1(grads, &format!("{}/beta", self.prefix), g.beta)?;
        Ok(g.input)
    }
}

struct ResUnit<S> {
    norm1: NormUnit<S>,
    conv1: ConvUnit<S>,
    norm2: NormUnit<S>,
    conv2: ConvUnit<S>,
}

/// Inputs of each layer inside one residual block, in forward order.
struct ResCache<S> {
    x: Tensor5<S>,
    norm1_out: Tensor5<S>,
    silu1_out: Tensor5<S>,
    conv1_out: Tensor5<S>,
    norm2_out: Tensor5<S>,
    silu2_out: Tensor5<S>,
}

impl<S: Scalar> ResUnit<S> {
    fn build(prefix: &str, kind: ConvKind, kernel: usize, groups: usize, causal: bool,
             store: &WeightStore<S>) -> Result<Self> {
        Ok(Self {
            norm1: NormUnit::build(&format!("{prefix}/norm1"), groups, store)?,
            conv1: ConvUnit::build(&format!("{prefix}/conv1"), kind, kernel, causal, store)?,
            norm2: NormUnit::build(&format!("{prefix}/norm2"), groups, store)?,
            conv2: ConvUnit::build(&format!("{prefix}/conv2"), kind, kernel, causal, store)?,
        })
    }

    fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        let h = silu(&self.norm1.forward(x)?);
        let h = self.conv1.forward(&h)?;
        let h = silu(&self.norm2.forward(&h)?);
        let h = self.conv2.forward(&h)?;
        h.add(x)
    }

    fn forward_cached(&self, x: Tensor5<S>) -> Result<(Tensor5<S>, ResCache<S>)> {
        let norm1_out = self.norm1.forward(&x)?;
        let silu1_out = silu(&norm1_out);
        let conv1_out = self.conv1.forward(&silu1_out)?;
        let norm2_out = self.norm2.forward(&conv1_out)?;
        let silu2_out = silu(&norm2_out);
        let out = self.conv2.forward(&silu2_out)?.add(&x)?;
        Ok((out, ResCache { x, norm1_out, silu1_out, conv1_out, norm2_out, silu2_out }))
    }

    fn backward(
        &self,
        cache: &ResCache<S>,
        upstream: &Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        let d = self.conv2.backward(&cache.silu2_out, upstream, grads)?;
        let d = silu_backward(&cache.norm2_out, &d)?;
        let d = self.norm2.backward(&cache.conv1_out, &d, grads)?;
        let d = self.conv1.backward(&cache.silu1_out, &d, grads)?;
        let d = silu_backward(&cache.norm1_out, &d)?;
        let mut d = self.norm1.backward(&cache.x, &d, grads)?;
        // Identity skip.
        d.add_assign(upstream)?;
        Ok(d)
    }
}

struct BlockUnit<S> {
    name: String,
    r_t: usize,
    r_s: usize,
    conv: ConvUnit<S>,
    res: Vec<ResUnit<S>>,
}

struct BlockCache<S> {
    conv_in: Tensor5<S>,
    res: Vec<ResCache<S>>,
}

impl<S: Scalar> BlockUnit<S> {
    fn upsample(&self, y: Tensor5<S>) -> Result<Tensor5<S>> {
        let mut y = y;
        if self.r_t > 1 {
            y = channel_to_time(&y, self.r_t)?;
            y = y.drop_leading_frames(self.r_t - 1)?;
        }
        if self.r_s > 1 {
            y = pixel_shuffle_2d_video(&y, self.r_s)?;
        }
        Ok(y)
    }

    fn upsample_backward(&self, d: Tensor5<S>) -> Result<Tensor5<S>> {
        let mut d = d;
        if self.r_s > 1 {
            d = pixel_unshuffle_2d_video(&d, self.r_s)?;
        }
        if self.r_t > 1 {
            d = d.pad_leading_frames(self.r_t - 1)?;
            d = time_to_channel(&d, self.r_t)?;
        }
        Ok(d)
    }

    fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        let mut y = self.upsample(self.conv.forward(x)?)?;
        for r in &self.res {
            y = r.forward(&y)?;
        }
        Ok(y)
    }

    fn forward_cached(&self, x: Tensor5<S>) -> Result<(Tensor5<S>, BlockCache<S>)> {
        let conv_out = self.conv.forward(&x)?;
        let mut y = self.upsample(conv_out)?;
        let mut caches = Vec::with_capacity(self.res.len());
        for r in &self.res {
            let (out, cache) = r.forward_cached(y)?;
            y = out;
            caches.push(cache);
        }
        Ok((y, BlockCache { conv_in: x, res: caches }))
    }

    fn backward(
        &self,
        cache: &BlockCache<S>,
        upstream: Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        let mut d = upstream;
        for (r, c) in self.res.iter().zip(&cache.res).rev() {
            d = r.backward(c, &d, grads)?;
        }
        let d = self.upsample_backward(d)?;
        self.conv.backward(&cache.conv_in, &d, grads)
    }
}

struct HeadUnit<S> {
    norm: NormUnit<S>,
    conv: ConvUnit<S>,
}

struct HeadCache<S> {
    x: Tensor5<S>,
    norm_out: Tensor5<S>,
    silu_out: Tensor5<S>,
}

impl<S: Scalar> HeadUnit<S> {
    fn forward(&self, x: &Tensor5<S>) -> Result<Tensor5<S>> {
        self.conv.forward(&silu(&self.norm.forward(x)?))
    }

    fn forward_cached(&self, x: Tensor5<S>) -> Result<(Tensor5<S>, HeadCache<S>)> {
        let norm_out = self.norm.forward(&x)?;
        let silu_out = silu(&norm_out);
        let out = self.conv.forward(&silu_out)?;
        Ok((out, HeadCache { x, norm_out, silu_out }))
    }

    fn backward(
        &self,
        cache: &HeadCache<S>,
        upstream: &Tensor5<S>,
        grads: &mut WeightStore<S>,
    ) -> Result<Tensor5<S>> {
        let d = self.conv.backward(&cache.silu_out, upstream, grads)?;
        let d = silu_backward(&cache.norm_out, &d)?;
        self.norm.backward(&cache.x, &d, grads)
    }
}

/// A decoder bound to one weight store; immutable and shareable once built.
pub struct CompiledDecoder<S> {
    cfg: DecoderConfig,
    blocks: Vec<BlockUnit<S>>,
    head: HeadUnit<S>,
}

/// Layer inputs cached by `forward_with_tape` for the backward pass.
pub struct DecoderTape<S> {
    blocks: Vec<BlockCache<S>>,
    head: HeadCache<S>,
}

impl<S: Scalar> CompiledDecoder<S> {
    /// Bind the config to a store. Missing or mis-shaped entries fail here;
    /// extra entries (e.g. projection heads during training) are tolerated.
    pub fn build(cfg: &DecoderConfig, store: &WeightStore<S>) -> Result<Self> {
        let report = validate_store(store, cfg)?;
        if !report.missing.is_empty() || !report.mismatched.is_empty() {
            return Err(Error::Validation(format!("weight store mismatch:\n{report}")));
        }
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for b in &cfg.blocks {
            let conv = ConvUnit::build(
                &format!("{}/conv", b.name),
                b.conv_kind,
                b.kernel_size,
                cfg.temporal_causal,
                store,
            )?;
            let mut res = Vec::with_capacity(b.num_resblocks);
            for r in 0..b.num_resblocks {
                res.push(ResUnit::build(
                    &format!("{}/res{r}", b.name),
                    b.conv_kind,
                    b.kernel_size,
                    cfg.norm_groups,
                    cfg.temporal_causal,
                    store,
                )?);
            }
            blocks.push(BlockUnit { name: b.name.clone(), r_t: b.upsample.0, r_s: b.upsample.1, conv, res });
        }
        let head = HeadUnit {
            norm: NormUnit::build("head/norm", cfg.norm_groups, store)?,
            conv: ConvUnit::build(
                "head/conv",
                ConvKind::Standard,
                cfg.head.kernel_size,
                cfg.temporal_causal,
                store,
            )?,
        };
        Ok(Self { cfg: cfg.clone(), blocks, head })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    fn check_latent(&self, latent: &Tensor5<S>) -> Result<()> {
        let [_, c, t, h, w] = latent.shape();
        if c != self.cfg.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {c} channels, config expects {}",
                self.cfg.latent_channels
            )));
        }
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::Shape("latent has an empty extent".into()));
        }
        Ok(())
    }

    /// Decode a latent; returns the video and the post-block output of every
    /// block (the head's entry is the video itself).
    pub fn forward(&self, latent: &Tensor5<S>) -> Result<(Tensor5<S>, FeatureMap<S>)> {
        self.check_latent(latent)?;
        let mut features = FeatureMap::new();
        let mut y = latent.clone();
        for b in &self.blocks {
            y = b.forward(&y)?;
            features.insert(b.name.clone(), y.clone());
        }
        let video = self.head.forward(&y)?;
        features.insert("head".into(), video.clone());
        Ok((video, features))
    }

    /// Same computation as `forward`, with a wall-clock duration per block;
    /// skips the feature-map export so timings cover compute only.
    pub fn forward_timed(&self, latent: &Tensor5<S>) -> Result<(Tensor5<S>, Vec<(String, Duration)>)> {
        self.check_latent(latent)?;
        let mut timings = Vec::with_capacity(self.blocks.len() + 1);
        let mut y = latent.clone();
        for b in &self.blocks {
            let t0 = Instant::now();
            y = b.forward(&y)?;
            timings.push((b.name.clone(), t0.elapsed()));
        }
        let t0 = Instant::now();
        let video = self.head.forward(&y)?;
        timings.push(("head".into(), t0.elapsed()));
        Ok((video, timings))
    }

    /// Forward pass that caches every layer input for `backward`.
    pub fn forward_with_tape(
        &self,
        latent: &Tensor5<S>,
    ) -> Result<(Tensor5<S>, FeatureMap<S>, DecoderTape<S>)> {
        self.check_latent(latent)?;
        let mut features = FeatureMap::new();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut y = latent.clone();
        for b in &self.blocks {
            let (out, cache) = b.forward_cached(y)?;
            y = out;
            caches.push(cache);
            features.insert(b.name.clone(), y.clone());
        }
        let (video, head_cache) = self.head.forward_cached(y)?;
        features.insert("head".into(), video.clone());
        Ok((video, features, DecoderTape { blocks: caches, head: head_cache }))
    }

    /// Reverse-mode pass. `d_video` is the loss gradient at the output;
    /// `feature_grads` holds extra gradients injected at block outputs
    /// (feature-alignment terms). Returns gradients keyed by weight name.
    pub fn backward(
        &self,
        tape: &DecoderTape<S>,
        d_video: &Tensor5<S>,
        feature_grads: &FeatureMap<S>,
    ) -> Result<WeightStore<S>> {
        let mut grads = WeightStore::new();
        let mut d = self.head.backward(&tape.head, d_video, &mut grads)?;
        for (b, cache) in self.blocks.iter().zip(&tape.blocks).rev() {
            if let Some(extra) = feature_grads.get(&b.name) {
                d.add_assign(extra)?;
            }
            d = b.backward(cache, d, &mut grads)?;
        }
        Ok(grads)
    }
}

/// One-call decode: build against the store and run forward.
pub fn decoder_forward<S: Scalar>(
    latent: &Tensor5<S>,
    cfg: &DecoderConfig,
    store: &WeightStore<S>,
) -> Result<(Tensor5<S>, FeatureMap<S>)> {
    CompiledDecoder::build(cfg, store)?.forward(latent)
}
