//! VAE and paired-conditional translation baselines.
//!
//! The VAE stands in as the autoencoder baseline for loss-curve and metric
//! comparisons; pix2pix is the paired-supervision reference. Both expose the
//! same [`Translator`] interface as the main model.

use crate::error::{Error, Result};
use crate::losses::{adv_d_loss, adv_g_loss, GanLossKind};
use crate::networks::{Direction, DiscriminatorConfig, PatchDiscriminator, Translator};
use crate::nn::{instance_norm, Conv2d, ConvLayer, Linear, ParamSet, SnStateSet};
use crate::tensor::{NoGrad, Scalar, Var};
use crate::types::LossReport;
use ndarray::{Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn default_latent() -> usize {
    128
}
fn default_vae_lr() -> f64 {
    1e-4
}
fn default_beta() -> f64 {
    1.0
}
fn default_vae_channels() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub lr: f64,
    pub beta: f64,
    pub base_channels: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: default_latent(),
            lr: default_vae_lr(),
            beta: default_beta(),
            base_channels: default_vae_channels(),
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("vae beta must be >= 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("vae lr must be positive".into()));
        }
        Ok(())
    }
}

/// z = mu + sigma (.) eps; sigma must be positive elementwise.
pub fn reparameterize<F: Scalar>(mu: &Var<F>, sigma: &Var<F>, eps: &Var<F>) -> Result<Var<F>> {
    if sigma.data().iter().any(|&v| v <= F::zero()) {
        return Err(Error::Numeric("reparameterize: sigma must be positive".into()));
    }
    Ok(mu.add(&sigma.mul(eps)))
}

/// ELBO surrogate: mean-squared reconstruction plus the closed-form diagonal
/// Gaussian KL, `0.5 * sum_d (mu^2 + sigma^2 - 1 - 2 ln sigma)`, averaged
/// over the batch. Returns (total, recon, kl).
pub fn vae_loss<F: Scalar>(
    x: &Var<F>,
    x_recon: &Var<F>,
    mu: &Var<F>,
    sigma: &Var<F>,
    beta: f64,
) -> Result<(Var<F>, Var<F>, Var<F>)> {
    if x.shape() != x_recon.shape() {
        return Err(Error::Shape("vae_loss reconstruction shape mismatch".into()));
    }
    if sigma.data().iter().any(|&v| v <= F::zero()) {
        return Err(Error::Numeric("vae_loss: sigma must be positive".into()));
    }
    let recon = x_recon.sub(x).square().mean_all();
    let half = F::c(0.5);
    let kl_per_sample = mu
        .square()
        .add(&sigma.square())
        .add_scalar(-F::one())
        .sub(&sigma.ln().mul_scalar(F::c(2.0)))
        .sum_axes_keep(&[1]);
    let kl = kl_per_sample.mul_scalar(half).mean_all();
    let total = recon.add(&kl.mul_scalar(F::c(beta)));
    Ok((total, recon, kl))
}

/// Convolutional VAE with mirrored encoder/decoder stacks.
pub struct Vae<F: Scalar> {
    pub cfg: VaeConfig,
    pub resolution: usize,
    enc: Vec<Conv2d<F>>,
    enc_head: Linear<F>, // -> [2 * latent]
    dec_head: Linear<F>,
    dec: Vec<Conv2d<F>>,
    out: Conv2d<F>,
    bottleneck_ch: usize,
    bottleneck_side: usize,
}

impl<F: Scalar> Vae<F> {
    pub fn new(cfg: &VaeConfig, resolution: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if resolution < 16 || !resolution.is_power_of_two() {
            return Err(Error::Config("VAE resolution must be a power of two >= 16".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = (resolution / 4).trailing_zeros() as usize; // down to 4x4
        let cap = cfg.base_channels * 4;
        let mut enc = Vec::new();
        let mut cin = 3;
        let mut ch = cfg.base_channels;
        for _ in 0..stages {
            enc.push(Conv2d::new(cin, ch, 3, 2, 1, true, &mut rng));
            cin = ch;
            ch = (ch * 2).min(cap);
        }
        let bottleneck_ch = cin;
        let bottleneck_side = 4;
        let flat = bottleneck_ch * bottleneck_side * bottleneck_side;
        let enc_head = Linear::new(flat, 2 * cfg.latent_dim, &mut rng);
        let dec_head = Linear::new(cfg.latent_dim, flat, &mut rng);
        let mut dec = Vec::new();
        let mut cur = bottleneck_ch;
        for k in 0..stages {
            let cout = if k + 1 == stages {
                cfg.base_channels
            } else {
                (cur / 2).max(cfg.base_channels)
            };
            dec.push(Conv2d::new(cur, cout, 3, 1, 1, true, &mut rng));
            cur = cout;
        }
        let out = Conv2d::new(cur, 3, 3, 1, 1, true, &mut rng);
        Ok(Vae {
            cfg: cfg.clone(),
            resolution,
            enc,
            enc_head,
            dec_head,
            dec,
            out,
            bottleneck_ch,
            bottleneck_side,
        })
    }

    /// Posterior parameters (mu, sigma) for a batch.
    pub fn encode(&self, x: &Var<F>) -> (Var<F>, Var<F>) {
        let mut h = x.clone();
        for conv in &self.enc {
            h = conv.forward(&h).leaky_relu(F::c(0.2));
        }
        let n = h.shape()[0];
        let flat = self.bottleneck_ch * self.bottleneck_side * self.bottleneck_side;
        let stats = self.enc_head.forward(&h.reshape(&[n, flat]));
        let mu = stats.narrow(1, 0, self.cfg.latent_dim);
        // sigma = exp(clamped log-sigma) keeps positivity
        let log_sigma = stats
            .narrow(1, self.cfg.latent_dim, self.cfg.latent_dim)
            .tanh()
            .mul_scalar(F::c(5.0));
        (mu, log_sigma.exp())
    }

    pub fn decode(&self, z: &Var<F>) -> Var<F> {
        let n = z.shape()[0];
        let mut h = self.dec_head.forward(z).relu().reshape(&[
            n,
            self.bottleneck_ch,
            self.bottleneck_side,
            self.bottleneck_side,
        ]);
        for conv in &self.dec {
            h = instance_norm(&conv.forward(&h.upsample_nearest2())).relu();
        }
        self.out.forward(&h).tanh()
    }

    /// Full pass with a seeded reparameterization draw.
    pub fn forward(&self, x: &Var<F>, eps_seed: u64) -> Result<(Var<F>, Var<F>, Var<F>)> {
        let (mu, sigma) = self.encode(x);
        let mut rng = ChaCha8Rng::seed_from_u64(eps_seed);
        let eps = Var::leaf(ArrayD::from_shape_fn(
            IxDyn(&[mu.shape()[0], self.cfg.latent_dim]),
            |_| F::c(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)),
        ));
        let z = reparameterize(&mu, &sigma, &eps)?;
        Ok((self.decode(&z), mu, sigma))
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct(&self, x: &Var<F>) -> Var<F> {
        let (mu, _) = self.encode(x);
        self.decode(&mu)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        for (i, c) in self.enc.iter().enumerate() {
            c.params(&format!("{prefix}.enc{i}"), out);
        }
        self.enc_head.params(&format!("{prefix}.enc_head"), out);
        self.dec_head.params(&format!("{prefix}.dec_head"), out);
        for (i, c) in self.dec.iter().enumerate() {
            c.params(&format!("{prefix}.dec{i}"), out);
        }
        self.out.params(&format!("{prefix}.out"), out);
    }

    /// Spherical interpolation between two posterior means.
    pub fn slerp(a: &[f32], b: &[f32], t: f32) -> Vec<f32> {
        let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
        let omega = (dot / (na * nb + 1e-12)).clamp(-1.0, 1.0).acos();
        if omega.abs() < 1e-6 {
            return a.iter().zip(b).map(|(x, y)| x * (1.0 - t) + y * t).collect();
        }
        let so = omega.sin();
        let wa = ((1.0 - t) * omega).sin() / so;
        let wb = (t * omega).sin() / so;
        a.iter().zip(b).map(|(x, y)| x * wa + y * wb).collect()
    }
}

impl Translator for Vae<f32> {
    fn translate_batch(&self, images: &Array4<f32>, _direction: Direction) -> Result<Array4<f32>> {
        let _ng = NoGrad::new();
        let out = self.reconstruct(&Var::leaf(images.clone().into_dyn())).to_array();
        Ok(out.into_dimensionality::<ndarray::Ix4>().unwrap())
    }

    fn supports_cycle(&self) -> bool {
        false
    }
}

fn default_p2p_lr() -> f64 {
    2e-4
}
fn default_lambda_l1() -> f64 {
    100.0
}
fn default_unet_channels() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Pix2pixConfig {
    pub lr: f64,
    pub lambda_l1: f64,
    pub base_channels: usize,
    /// SN on the patch critic (off for baseline fidelity).
    pub use_sn: bool,
    pub d_layers: usize,
}

impl Default for Pix2pixConfig {
    fn default() -> Self {
        Pix2pixConfig {
            lr: default_p2p_lr(),
            lambda_l1: default_lambda_l1(),
            base_channels: default_unet_channels(),
            use_sn: false,
            d_layers: 4,
        }
    }
}

impl Pix2pixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("pix2pix lr must be positive".into()));
        }
        if !(self.lambda_l1 >= 0.0) {
            return Err(Error::Config("lambda_l1 must be >= 0".into()));
        }
        Ok(())
    }
}

/// U-Net generator with concatenating skips.
pub struct Unet<F: Scalar> {
    downs: Vec<ConvLayer<F>>,
    ups: Vec<ConvLayer<F>>,
    head: ConvLayer<F>,
    depth: usize,
}

impl<F: Scalar> Unet<F> {
    pub fn new(base_channels: usize, resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 16 || !resolution.is_power_of_two() {
            return Err(Error::Config("U-Net resolution must be a power of two >= 16".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = (resolution / 4).trailing_zeros() as usize;
        let cap = base_channels * 8;
        let mut downs = Vec::new();
        let mut cin = 3;
        let mut ch = base_channels;
        let mut enc_channels = Vec::new();
        for _ in 0..depth {
            downs.push(ConvLayer::new(false, cin, ch, 4, 2, 1, true, &mut rng, 0));
            enc_channels.push(ch);
            cin = ch;
            ch = (ch * 2).min(cap);
        }
        let mut ups = Vec::new();
        let mut cur = *enc_channels.last().unwrap();
        for k in (0..depth).rev() {
            let cout = if k == 0 { base_channels } else { enc_channels[k - 1] };
            // input: previous decoder features concat skip from encoder level k-1
            let cin_up = if k == depth - 1 { cur } else { cur * 2 };
            ups.push(ConvLayer::new(false, cin_up, cout, 3, 1, 1, true, &mut rng, 0));
            cur = cout;
        }
        let head = ConvLayer::new(false, base_channels, 3, 3, 1, 1, true, &mut rng, 0);
        Ok(Unet {
            downs,
            ups,
            head,
            depth,
        })
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (i, d) in self.downs.iter().enumerate() {
            h = d.forward(&h, training)?;
            h = if i == 0 { h.leaky_relu(F::c(0.2)) } else { instance_norm(&h).leaky_relu(F::c(0.2)) };
            skips.push(h.clone());
        }
        for (j, u) in self.ups.iter().enumerate() {
            let level = self.depth - 1 - j; // encoder level being decoded
            let inp = if j == 0 {
                h.upsample_nearest2()
            } else {
                Var::concat(&[h.clone(), skips[level].clone()], 1).upsample_nearest2()
            };
            h = instance_norm(&u.forward(&inp, training)?).relu();
        }
        Ok(self.head.forward(&h, training)?.tanh())
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        for (i, d) in self.downs.iter().enumerate() {
            d.params(&format!("{prefix}.down{i}"), out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.params(&format!("{prefix}.up{i}"), out);
        }
        self.head.params(&format!("{prefix}.head"), out);
    }
}

/// Paired conditional translation baseline (U-Net + patch critic on
/// channel-concatenated pairs).
pub struct Pix2pix<F: Scalar> {
    pub cfg: Pix2pixConfig,
    pub unet: Unet<F>,
    pub disc: PatchDiscriminator<F>,
}

impl<F: Scalar> Pix2pix<F> {
    pub fn new(cfg: &Pix2pixConfig, resolution: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let unet = Unet::new(cfg.base_channels, resolution, seed)?;
        let dcfg = DiscriminatorConfig {
            n_layers: cfg.d_layers,
            scales: vec![1],
            base_channels: cfg.base_channels,
            use_sn: cfg.use_sn,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xd15c));
        let disc = PatchDiscriminator::with_input_channels(&dcfg, 6, &mut rng, seed);
        Ok(Pix2pix {
            cfg: cfg.clone(),
            unet,
            disc,
        })
    }

    pub fn g_params(&self) -> ParamSet<F> {
        let mut p = ParamSet::default();
        self.unet.params("p2p.g", &mut p);
        p
    }

    pub fn d_params(&self) -> ParamSet<F> {
        let mut p = ParamSet::default();
        self.disc.params("p2p.d", &mut p);
        p
    }

    pub fn sn_states(&self) -> SnStateSet<F> {
        let mut s = Vec::new();
        self.disc.sn_states("p2p.d", &mut s);
        s
    }

    /// Loss terms of one paired step (no optimizer side effects):
    /// (d_loss, g_adv, l1). Callers update D with `d_loss`, G with
    /// `g_adv + lambda_l1 * l1`.
    pub fn step_losses(
        &self,
        x: &Var<F>,
        y_truth: &Var<F>,
        training: bool,
    ) -> Result<(Var<F>, Var<F>, Var<F>)> {
        if x.shape() != y_truth.shape() {
            return Err(Error::Shape(
                "pix2pix requires pairs: x and y_truth shapes differ".into(),
            ));
        }
        let fake = self.unet.forward(x, training)?;
        // discriminator on (x, y) pairs; fake branch detached
        let real_pair = Var::concat(&[x.clone(), y_truth.clone()], 1);
        let fake_pair_d = Var::concat(&[x.clone(), fake.detach()], 1);
        let real_logits = self.disc.forward(&real_pair, training)?;
        let fake_logits_d = self.disc.forward(&fake_pair_d, training)?;
        let d_loss = adv_d_loss(&[real_logits], &[fake_logits_d])?;
        // generator side
        let fake_pair_g = Var::concat(&[x.clone(), fake.clone()], 1);
        let fake_logits_g = self.disc.forward(&fake_pair_g, training)?;
        let g_adv = adv_g_loss(&[fake_logits_g], GanLossKind::NonSaturating)?;
        let l1 = fake.sub(y_truth).abs().mean_all();
        Ok((d_loss, g_adv, l1))
    }

    pub fn loss_report(d_loss: f64, g_adv: f64, l1: f64, lambda_l1: f64) -> LossReport {
        let mut components = BTreeMap::new();
        components.insert("gan_D_pair".to_string(), d_loss);
        components.insert("gan_G".to_string(), g_adv);
        components.insert("l1".to_string(), l1);
        let mut weights = BTreeMap::new();
        weights.insert("gan_G".to_string(), 1.0);
        weights.insert("l1".to_string(), lambda_l1);
        LossReport {
            components,
            weights,
            total: g_adv + lambda_l1 * l1,
        }
    }
}

impl Translator for Pix2pix<f32> {
    fn translate_batch(&self, images: &Array4<f32>, direction: Direction) -> Result<Array4<f32>> {
        if direction != Direction::XToY {
            return Err(Error::Protocol(
                "pix2pix baseline translates X->Y only".into(),
            ));
        }
        let _ng = NoGrad::new();
        let out = self
            .unet
            .forward(&Var::leaf(images.clone().into_dyn()), false)?
            .to_array();
        Ok(out.into_dimensionality::<ndarray::Ix4>().unwrap())
    }

    fn supports_cycle(&self) -> bool {
        false
    }
}
