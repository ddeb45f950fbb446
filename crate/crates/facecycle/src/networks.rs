//! Translation generators and multi-scale patch discriminators.
//!
//! The generator downsamples through four stride-2 stages (to 1/16 scale),
//! runs residual blocks at the bottleneck with AdaIN in the late blocks,
//! applies self-attention at the configured scales, and decodes with
//! nearest-upsample + conv, adding encoder skips at the configured scales.

use crate::error::{Error, Result};
use crate::nn::{
    instance_norm, ConvLayer, Linear, ParamSet, ResBlock, SelfAttention, SnStateSet,
};
use crate::tensor::{Scalar, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_res_blocks() -> usize {
    9
}
fn default_base_channels() -> usize {
    64
}
fn default_attention_scales() -> Vec<usize> {
    vec![16, 8]
}
fn default_skip_scales() -> Vec<usize> {
    vec![4, 2]
}
fn default_true() -> bool {
    true
}
fn default_n_adain() -> usize {
    3
}
fn default_style_dim() -> usize {
    64
}
fn default_channel_cap_mult() -> usize {
    4
}

/// Generator architecture knobs. Scales are given as denominators
/// (8 means the 1/8-resolution feature map).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_res_blocks: usize,
    pub base_channels: usize,
    pub attention_scales: Vec<usize>,
    pub skip_scales: Vec<usize>,
    pub adain_in_late_blocks: bool,
    pub use_sn_on_g: bool,
    pub n_adain_blocks: usize,
    pub style_dim: usize,
    /// Channel counts double per stage, capped at base * this multiplier.
    pub channel_cap_mult: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_res_blocks: default_res_blocks(),
            base_channels: default_base_channels(),
            attention_scales: default_attention_scales(),
            skip_scales: default_skip_scales(),
            adain_in_late_blocks: default_true(),
            use_sn_on_g: false,
            n_adain_blocks: default_n_adain(),
            style_dim: default_style_dim(),
            channel_cap_mult: default_channel_cap_mult(),
        }
    }
}

const ENCODER_SCALES: [usize; 4] = [2, 4, 8, 16];

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for s in &self.attention_scales {
            if !ENCODER_SCALES.contains(s) {
                return Err(Error::Config(format!(
                    "attention scale 1/{s} not reachable; encoder produces 1/{{2,4,8,16}}"
                )));
            }
        }
        for s in &self.skip_scales {
            if ![2usize, 4, 8].contains(s) {
                return Err(Error::Config(format!(
                    "skip scale 1/{s} unsupported; choose from 1/{{2,4,8}}"
                )));
            }
        }
        if self.base_channels == 0 || self.n_res_blocks == 0 {
            return Err(Error::Config("generator channels/blocks must be positive".into()));
        }
        if self.n_adain_blocks > self.n_res_blocks {
            return Err(Error::Config(
                "n_adain_blocks cannot exceed n_res_blocks".into(),
            ));
        }
        Ok(())
    }

    fn stage_channels(&self) -> [usize; 5] {
        let cap = self.base_channels * self.channel_cap_mult;
        let c = |k: u32| (self.base_channels << k).min(cap);
        [c(0), c(1), c(2), c(3), c(4)]
    }

    /// Channel counts of the contrastive encoder taps (1/4 and 1/8 scale).
    pub fn tap_channels(&self) -> Vec<usize> {
        let ch = self.stage_channels();
        vec![ch[2], ch[3]]
    }
}

fn default_d_layers() -> usize {
    4
}
fn default_d_scales() -> Vec<usize> {
    vec![1, 2]
}

/// Patch-critic stack configuration; `scales` are input downsampling
/// denominators (1 = full resolution, 2 = half). Spectral normalization on
/// every layer is the default; `use_sn: false` exists for the SN ablation
/// and the paired baseline.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub scales: Vec<usize>,
    pub base_channels: usize,
    pub use_sn: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            n_layers: default_d_layers(),
            scales: default_d_scales(),
            base_channels: default_base_channels(),
            use_sn: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::Config("discriminator needs at least 2 layers".into()));
        }
        for s in &self.scales {
            if !s.is_power_of_two() {
                return Err(Error::Config(format!(
                    "discriminator scale denominator {s} must be a power of two"
                )));
            }
        }
        Ok(())
    }
}

pub const MIN_RESOLUTION: usize = 64;

/// Translation direction between the two domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XToY,
    YToX,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '>'], "").as_str() {
            "xy" | "xtoy" | "x2y" => Ok(Direction::XToY),
            "yx" | "ytox" | "y2x" => Ok(Direction::YToX),
            other => Err(Error::Config(format!(
                "invalid direction '{other}'; use x2y or y2x"
            ))),
        }
    }
}

/// Uniform translate interface shared by the main model and both baselines,
/// so the metrics module treats all three identically.
pub trait Translator {
    /// Map a [-1, 1] NCHW batch to the target domain (evaluation mode).
    fn translate_batch(
        &self,
        images: &ndarray::Array4<f32>,
        direction: Direction,
    ) -> Result<ndarray::Array4<f32>>;

    /// Whether the model supports the unpaired cycle protocol.
    fn supports_cycle(&self) -> bool;
}

/// Style mapping: learned per-target-domain code -> per-site AdaIN params.
struct StyleMapping<F: Scalar> {
    l1: Linear<F>,
    l2: Linear<F>,
    n_sites: usize,
    channels: usize,
}

impl<F: Scalar> StyleMapping<F> {
    fn new(style_dim: usize, n_sites: usize, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 128;
        StyleMapping {
            l1: Linear::new(style_dim, hidden, rng),
            l2: Linear::new(hidden, n_sites * 2 * channels, rng),
            n_sites,
            channels,
        }
    }

    /// Returns (scale, shift) per site; scales start near 1, shifts near 0.
    fn forward(&self, style: &Var<F>) -> Vec<(Var<F>, Var<F>)> {
        let s = style.reshape(&[1, style.len()]);
        let h = self.l1.forward(&s).relu();
        let raw = self.l2.forward(&h); // [1, n_sites*2*C]
        let mut out = Vec::with_capacity(self.n_sites);
        for site in 0..self.n_sites {
            let base = site * 2 * self.channels;
            let sc = raw
                .narrow(1, base, self.channels)
                .reshape(&[self.channels])
                .add_scalar(F::one());
            let sh = raw
                .narrow(1, base + self.channels, self.channels)
                .reshape(&[self.channels]);
            out.push((sc, sh));
        }
        out
    }

    fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.l1.params(&format!("{prefix}.l1"), out);
        self.l2.params(&format!("{prefix}.l2"), out);
    }
}

/// Encoder feature taps used by the patch-contrastive loss.
pub struct GeneratorTaps<F: Scalar> {
    /// Feature maps at 1/4 and 1/8 scale, in that order.
    pub taps: Vec<Var<F>>,
}

/// Image-to-image translation generator with a learned target-domain style code.
pub struct Generator<F: Scalar> {
    pub cfg: GeneratorConfig,
    stem: ConvLayer<F>,
    downs: Vec<ConvLayer<F>>,
    attn: Vec<(usize, SelfAttention<F>)>, // (scale denom, module)
    res: Vec<ResBlock<F>>,
    ups: Vec<ConvLayer<F>>,
    head: ConvLayer<F>,
    /// Learned style code for the target domain.
    pub style: Var<F>,
    mapping: StyleMapping<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn new(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = cfg.stage_channels();
        let sn = cfg.use_sn_on_g;
        let mut ss = seed.wrapping_mul(31).wrapping_add(7); // spectral state seeds
        let mut next_ss = || {
            ss = ss.wrapping_add(1);
            ss
        };
        let stem = ConvLayer::new(sn, 3, ch[0], 7, 1, 3, true, &mut rng, next_ss());
        let mut downs = Vec::new();
        for k in 0..4 {
            downs.push(ConvLayer::new(
                sn,
                ch[k],
                ch[k + 1],
                3,
                2,
                1,
                true,
                &mut rng,
                next_ss(),
            ));
        }
        let mut attn = Vec::new();
        let mut sorted_attn = cfg.attention_scales.clone();
        sorted_attn.sort_unstable();
        for &scale in &sorted_attn {
            let stage = scale.trailing_zeros() as usize; // 2 -> stage 1 output etc.
            let channels = ch[stage];
            attn.push((scale, SelfAttention::new(channels, sn, &mut rng, next_ss())));
        }
        let n_adain = if cfg.adain_in_late_blocks {
            cfg.n_adain_blocks
        } else {
            0
        };
        let mut res = Vec::new();
        for i in 0..cfg.n_res_blocks {
            let use_adain = i >= cfg.n_res_blocks - n_adain;
            res.push(ResBlock::new(ch[4], sn, use_adain, &mut rng, next_ss()));
        }
        let mut ups = Vec::new();
        for k in (0..4).rev() {
            ups.push(ConvLayer::new(
                sn,
                ch[k + 1],
                ch[k],
                3,
                1,
                1,
                true,
                &mut rng,
                next_ss(),
            ));
        }
        let head = ConvLayer::new(sn, ch[0], 3, 7, 1, 3, true, &mut rng, next_ss());
        let style = Var::param(crate::nn::random_style(cfg.style_dim, &mut rng));
        let mapping = StyleMapping::new(cfg.style_dim, 2 * n_adain.max(1), ch[4], &mut rng);
        Ok(Generator {
            cfg: cfg.clone(),
            stem,
            downs,
            attn,
            res,
            ups,
            head,
            style,
            mapping,
        })
    }

    fn check_input(&self, x: &Var<F>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("generator expects [N,3,H,W], got {s:?}")));
        }
        if s[2] < MIN_RESOLUTION || s[3] < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "min resolution {MIN_RESOLUTION}, got {}x{}",
                s[2], s[3]
            )));
        }
        Ok(())
    }

    /// Full forward pass; returns the translated batch in [-1, 1].
    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        Ok(self.forward_with_taps(x, training)?.0)
    }

    /// Forward pass that also exposes the 1/4 and 1/8 encoder taps.
    pub fn forward_with_taps(
        &self,
        x: &Var<F>,
        training: bool,
    ) -> Result<(Var<F>, GeneratorTaps<F>)> {
        self.check_input(x)?;
        let taps = self.encode_taps_scales();
        let mut tap_out: Vec<Var<F>> = Vec::new();

        let mut h = instance_norm(&self.stem.forward(x, training)?).relu();
        let mut skips: Vec<(usize, Var<F>)> = Vec::new();
        for (k, down) in self.downs.iter().enumerate() {
            let scale = ENCODER_SCALES[k];
            h = instance_norm(&down.forward(&h, training)?).relu();
            for (s, module) in &self.attn {
                if *s == scale {
                    h = module.forward(&h, training)?;
                }
            }
            if self.cfg.skip_scales.contains(&scale) {
                skips.push((scale, h.clone()));
            }
            if taps.contains(&scale) {
                tap_out.push(h.clone());
            }
        }

        let styles = self.mapping.forward(&self.style);
        let mut style_cursor = 0usize;
        for block in &self.res {
            if block.use_adain {
                let s1 = &styles[style_cursor];
                let s2 = &styles[style_cursor + 1];
                style_cursor += 2;
                h = block.forward(&h, training, Some((s1, s2)))?;
            } else {
                h = block.forward(&h, training, None)?;
            }
        }

        for (i, up) in self.ups.iter().enumerate() {
            let scale = [8usize, 4, 2, 1][i];
            h = h.upsample_nearest2();
            h = instance_norm(&up.forward(&h, training)?).relu();
            if scale > 1 {
                if let Some((_, skip)) = skips.iter().find(|(s, _)| *s == scale) {
                    h = h.add(skip);
                }
            }
        }
        let out = self.head.forward(&h, training)?.tanh();
        Ok((out, GeneratorTaps { taps: tap_out }))
    }

    /// Scales (denominators) exposed as contrastive taps.
    pub fn encode_taps_scales(&self) -> Vec<usize> {
        vec![4, 8]
    }

    /// Encoder-only pass returning just the contrastive taps (no bottleneck
    /// or decoder work). Matches the taps of [`Self::forward_with_taps`].
    pub fn encode_taps(&self, x: &Var<F>, training: bool) -> Result<Vec<Var<F>>> {
        self.check_input(x)?;
        let taps = self.encode_taps_scales();
        let deepest = *taps.iter().max().unwrap();
        let mut out = Vec::new();
        let mut h = instance_norm(&self.stem.forward(x, training)?).relu();
        for (k, down) in self.downs.iter().enumerate() {
            let scale = ENCODER_SCALES[k];
            if scale > deepest {
                break;
            }
            h = instance_norm(&down.forward(&h, training)?).relu();
            for (s, module) in &self.attn {
                if *s == scale {
                    h = module.forward(&h, training)?;
                }
            }
            if taps.contains(&scale) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.stem.params(&format!("{prefix}.stem"), out);
        for (i, d) in self.downs.iter().enumerate() {
            d.params(&format!("{prefix}.down{i}"), out);
        }
        for (s, a) in &self.attn {
            a.params(&format!("{prefix}.attn{s}"), out);
        }
        for (i, r) in self.res.iter().enumerate() {
            r.params(&format!("{prefix}.res{i}"), out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.params(&format!("{prefix}.up{i}"), out);
        }
        self.head.params(&format!("{prefix}.head"), out);
        out.add(format!("{prefix}.style"), &self.style);
        self.mapping.params(&format!("{prefix}.mapping"), out);
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        self.stem.sn_states(&format!("{prefix}.stem"), out);
        for (i, d) in self.downs.iter().enumerate() {
            d.sn_states(&format!("{prefix}.down{i}"), out);
        }
        for (s, a) in &self.attn {
            a.sn_states(&format!("{prefix}.attn{s}"), out);
        }
        for (i, r) in self.res.iter().enumerate() {
            r.sn_states(&format!("{prefix}.res{i}"), out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.sn_states(&format!("{prefix}.up{i}"), out);
        }
        self.head.sn_states(&format!("{prefix}.head"), out);
    }
}

/// Single-scale patch critic: 4x4 convs, LeakyReLU(0.2), spectral
/// normalization on every layer (unless disabled), final 1-channel logit map.
pub struct PatchDiscriminator<F: Scalar> {
    layers: Vec<ConvLayer<F>>,
    last: ConvLayer<F>,
}

impl<F: Scalar> PatchDiscriminator<F> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng, seed: u64) -> Self {
        Self::with_input_channels(cfg, 3, rng, seed)
    }

    /// Conditional variant taking channel-concatenated pairs as input.
    pub fn with_input_channels(
        cfg: &DiscriminatorConfig,
        in_channels: usize,
        rng: &mut ChaCha8Rng,
        seed: u64,
    ) -> Self {
        let mut layers = Vec::new();
        let mut cin = in_channels;
        let cap = cfg.base_channels * 8;
        let mut ss = seed;
        for i in 0..cfg.n_layers {
            let cout = (cfg.base_channels << i).min(cap);
            let stride = if i + 1 < cfg.n_layers { 2 } else { 1 };
            ss = ss.wrapping_add(1);
            layers.push(ConvLayer::new(cfg.use_sn, cin, cout, 4, stride, 1, true, rng, ss));
            cin = cout;
        }
        let last = ConvLayer::new(cfg.use_sn, cin, 1, 4, 1, 1, true, rng, ss.wrapping_add(1));
        PatchDiscriminator { layers, last }
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, training)?.leaky_relu(F::c(0.2));
        }
        self.last.forward(&h, training)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("{prefix}.l{i}"), out);
        }
        self.last.params(&format!("{prefix}.last"), out);
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.sn_states(&format!("{prefix}.l{i}"), out);
        }
        self.last.sn_states(&format!("{prefix}.last"), out);
    }
}

/// Full- and reduced-resolution patch critics; one logit map per scale.
pub struct MultiScaleDiscriminator<F: Scalar> {
    pub cfg: DiscriminatorConfig,
    discs: Vec<PatchDiscriminator<F>>,
}

impl<F: Scalar> MultiScaleDiscriminator<F> {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let discs = cfg
            .scales
            .iter()
            .enumerate()
            .map(|(i, _)| PatchDiscriminator::new(cfg, &mut rng, seed.wrapping_add(100 + i as u64 * 50)))
            .collect();
        Ok(MultiScaleDiscriminator {
            cfg: cfg.clone(),
            discs,
        })
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Vec<Var<F>>> {
        let mut out = Vec::with_capacity(self.discs.len());
        for (scale, disc) in self.cfg.scales.iter().zip(&self.discs) {
            let mut inp = x.clone();
            let mut s = *scale;
            while s > 1 {
                inp = inp.avg_pool2();
                s /= 2;
            }
            out.push(disc.forward(&inp, training)?);
        }
        Ok(out)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        for (i, d) in self.discs.iter().enumerate() {
            d.params(&format!("{prefix}.scale{i}"), out);
        }
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        for (i, d) in self.discs.iter().enumerate() {
            d.sn_states(&format!("{prefix}.scale{i}"), out);
        }
    }
}
