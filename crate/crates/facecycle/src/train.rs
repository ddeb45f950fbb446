//! Training engine: TTUR-scheduled optimization with EMA, global-norm
//! clipping, differentiable augmentation, progressive resizing, lazy
//! guidance evaluation and optional hybrid paired supervision, plus the
//! run loops for the two baselines.

use crate::augment::{apply_draw, diff_augment, sample_draw, AugmentPolicy};
use crate::baselines::{vae_loss, Pix2pix, Vae};
use crate::ckpt::{self, Checkpoint};
use crate::config::{ModelKind, Precision, RunConfig};
use crate::data::{self, DatasetManifest, LoadedBatch, SplitSpec, UnpairedSampler};
use crate::error::{Error, Result};
use crate::guidance::{
    retrieve_pseudo_pairs, FrozenEncoder, LandmarkDetector, MissingSidecarPolicy, RetrievalMetric,
};
use crate::losses::{
    adv_d_loss, adv_g_loss, cycle_loss, identity_loss, landmark_loss_single, patch_nce_loss,
    perceptual_loss, semantic_cycle_loss, total_generator_loss, GanLossKind, GeneratorLossTerms,
    LossWeights, PatchSampleSpec, ProjectionHead,
};
use crate::networks::{Direction, Generator, MultiScaleDiscriminator, PatchDiscriminator, Translator};
use crate::nn::{ParamSet, SnStateSet};
use crate::optim::Adam;
use crate::rundir::RunDir;
use crate::schedule::{clip_global_norm, EmaShadow, TrainSchedule};
use crate::tensor::{Arr, HalfGemmGuard, NoGrad, Var};
use crate::types::{Domain, LossReport};
use ndarray::{Array3, Array4, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

/// Stateless seed derivation so identical configs replay identical draws.
fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Frozen feature providers shared across the run.
pub struct GuidanceSet {
    pub identity: FrozenEncoder<f32>,
    pub perceptual: FrozenEncoder<f32>,
    pub detector: LandmarkDetector,
    pub retrieval_metric: RetrievalMetric,
}

impl GuidanceSet {
    pub fn new(cfg: &crate::config::GuidanceConfig) -> GuidanceSet {
        GuidanceSet {
            identity: FrozenEncoder::identity(cfg.encoder_seed, cfg.embed_dim),
            perceptual: FrozenEncoder::perceptual(cfg.encoder_seed.wrapping_add(1)),
            detector: LandmarkDetector::default(),
            retrieval_metric: cfg.retrieval_metric,
        }
    }

    pub fn reset_call_counts(&self) {
        self.identity.reset_calls();
        self.perceptual.reset_calls();
    }

    pub fn total_calls(&self) -> u64 {
        self.identity.calls() + self.perceptual.calls()
    }
}

/// The guided translation model: two generators, two multi-scale critics,
/// contrastive projection heads and (optionally) a conditional pair critic.
pub struct CycleModel {
    pub g_xy: Generator<f32>,
    pub g_yx: Generator<f32>,
    pub d_x: MultiScaleDiscriminator<f32>,
    pub d_y: MultiScaleDiscriminator<f32>,
    pub nce_heads: Vec<ProjectionHead<f32>>,
    pub d_pair: Option<PatchDiscriminator<f32>>,
}

impl CycleModel {
    pub fn new(cfg: &RunConfig) -> Result<CycleModel> {
        let seed = cfg.seed;
        let g_xy = Generator::new(&cfg.generator, derive_seed(seed, 1, 0))?;
        let g_yx = Generator::new(&cfg.generator, derive_seed(seed, 2, 0))?;
        let d_x = MultiScaleDiscriminator::new(&cfg.discriminator, derive_seed(seed, 3, 0))?;
        let d_y = MultiScaleDiscriminator::new(&cfg.discriminator, derive_seed(seed, 4, 0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, 0));
        let nce_heads = cfg
            .generator
            .tap_channels()
            .into_iter()
            .map(|c| ProjectionHead::new(c, cfg.patch.projection_dim, &mut rng))
            .collect();
        let d_pair = if cfg.hybrid_paired_every > 0 {
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6, 0));
            Some(PatchDiscriminator::with_input_channels(
                &cfg.discriminator,
                6,
                &mut prng,
                derive_seed(seed, 7, 0),
            ))
        } else {
            None
        };
        Ok(CycleModel {
            g_xy,
            g_yx,
            d_x,
            d_y,
            nce_heads,
            d_pair,
        })
    }

    pub fn generator_params(&self) -> ParamSet<f32> {
        let mut p = ParamSet::default();
        self.g_xy.params("g_xy", &mut p);
        self.g_yx.params("g_yx", &mut p);
        for (i, h) in self.nce_heads.iter().enumerate() {
            h.params(&format!("nce_head{i}"), &mut p);
        }
        p
    }

    pub fn discriminator_params(&self) -> ParamSet<f32> {
        let mut p = ParamSet::default();
        self.d_x.params("d_x", &mut p);
        self.d_y.params("d_y", &mut p);
        if let Some(dp) = &self.d_pair {
            dp.params("d_pair", &mut p);
        }
        p
    }

    pub fn sn_states(&self) -> SnStateSet<f32> {
        let mut s = Vec::new();
        self.g_xy.sn_states("g_xy", &mut s);
        self.g_yx.sn_states("g_yx", &mut s);
        self.d_x.sn_states("d_x", &mut s);
        self.d_y.sn_states("d_y", &mut s);
        if let Some(dp) = &self.d_pair {
            dp.sn_states("d_pair", &mut s);
        }
        s
    }

    pub fn generator_for(&self, direction: Direction) -> &Generator<f32> {
        match direction {
            Direction::XToY => &self.g_xy,
            Direction::YToX => &self.g_yx,
        }
    }
}

impl Translator for CycleModel {
    fn translate_batch(&self, images: &Array4<f32>, direction: Direction) -> Result<Array4<f32>> {
        let _ng = NoGrad::new();
        let out = self
            .generator_for(direction)
            .forward(&Var::leaf(images.clone().into_dyn()), false)?
            .to_array();
        Ok(out.into_dimensionality::<ndarray::Ix4>().unwrap())
    }

    fn supports_cycle(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepCounters {
    pub d_updates: usize,
    pub g_updates: usize,
}

pub struct Trainer {
    pub model: CycleModel,
    pub guidance: GuidanceSet,
    pub weights: LossWeights,
    pub patch_spec: PatchSampleSpec,
    pub augment: AugmentPolicy,
    pub schedule: TrainSchedule,
    pub gan_kind: GanLossKind,
    pub precision: Precision,
    pub counters: StepCounters,
    pub ema: EmaShadow<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    g_params: ParamSet<f32>,
    d_params: ParamSet<f32>,
    run_seed: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Trainer> {
        cfg.validate()?;
        let model = CycleModel::new(cfg)?;
        let g_params = model.generator_params();
        let d_params = model.discriminator_params();
        let opt_g = Adam::new(&g_params, cfg.schedule.adam_beta1, cfg.schedule.adam_beta2);
        let opt_d = Adam::new(&d_params, cfg.schedule.adam_beta1, cfg.schedule.adam_beta2);
        let ema = EmaShadow::new(&g_params, cfg.schedule.ema_decay)?;
        Ok(Trainer {
            model,
            guidance: GuidanceSet::new(&cfg.guidance),
            weights: cfg.loss_weights,
            patch_spec: cfg.patch.clone(),
            augment: cfg.augment,
            schedule: cfg.schedule.clone(),
            gan_kind: cfg.gan_loss,
            precision: cfg.precision,
            counters: StepCounters::default(),
            ema,
            opt_g,
            opt_d,
            g_params,
            d_params,
            run_seed: cfg.seed,
        })
    }

    fn chunk_ranges(n: usize, accum: usize) -> Result<Vec<std::ops::Range<usize>>> {
        if n % accum != 0 {
            return Err(Error::Config(format!(
                "batch size {n} not divisible by grad_accum {accum}"
            )));
        }
        let step = n / accum;
        Ok((0..accum).map(|k| k * step..(k + 1) * step).collect())
    }

    fn slice_batch(images: &Array4<f32>, range: &std::ops::Range<usize>) -> Arr<f32> {
        images
            .slice(ndarray::s![range.clone(), .., .., ..])
            .to_owned()
            .into_dyn()
    }

    /// One discriminator update (all chunks accumulated, then one Adam step).
    fn d_update(
        &mut self,
        bx: &LoadedBatch,
        by: &LoadedBatch,
        paired: Option<(&Array4<f32>, &Array4<f32>)>,
        iter: usize,
        substep: usize,
    ) -> Result<(f64, f64, Option<f64>)> {
        let _half = HalfGemmGuard::new(self.precision == Precision::Mixed);
        let accum = self.schedule.grad_accum;
        let chunks = Self::chunk_ranges(bx.images.shape()[0], accum)?;
        let scale = 1.0 / accum as f64;
        self.opt_d.zero_grads();
        let (mut dx_val, mut dy_val) = (0.0, 0.0);
        let mut dpair_val = None;
        for (ci, range) in chunks.iter().enumerate() {
            let x = Var::leaf(Self::slice_batch(&bx.images, range));
            let y = Var::leaf(Self::slice_batch(&by.images, range));
            // fake branches detached from the generators
            let (fake_y, fake_x) = {
                let _ng = NoGrad::new();
                (
                    self.model.g_xy.forward(&x, false)?.detach(),
                    self.model.g_yx.forward(&y, false)?.detach(),
                )
            };
            let seed_y = derive_seed(self.run_seed, iter as u64, (substep * 64 + ci * 8) as u64);
            let seed_x = derive_seed(self.run_seed, iter as u64, (substep * 64 + ci * 8 + 1) as u64);
            let (ry, fy) = diff_augment(&y, &fake_y, &self.augment, seed_y);
            let (rx, fx) = diff_augment(&x, &fake_x, &self.augment, seed_x);
            let loss_dy = adv_d_loss(
                &self.model.d_y.forward(&ry, true)?,
                &self.model.d_y.forward(&fy, true)?,
            )?;
            let loss_dx = adv_d_loss(
                &self.model.d_x.forward(&rx, true)?,
                &self.model.d_x.forward(&fx, true)?,
            )?;
            let mut total = loss_dx.add(&loss_dy);
            if let Some((px, py)) = paired {
                let dp = self
                    .model
                    .d_pair
                    .as_ref()
                    .ok_or_else(|| Error::Config("hybrid step without pair critic".into()))?;
                let pxv = Var::leaf(Self::slice_batch(px, range));
                let pyv = Var::leaf(Self::slice_batch(py, range));
                let fake = {
                    let _ng = NoGrad::new();
                    self.model.g_xy.forward(&pxv, false)?.detach()
                };
                let real_pair = Var::concat(&[pxv.clone(), pyv], 1);
                let fake_pair = Var::concat(&[pxv, fake], 1);
                let loss_pair = adv_d_loss(
                    &[dp.forward(&real_pair, true)?],
                    &[dp.forward(&fake_pair, true)?],
                )?;
                *dpair_val.get_or_insert(0.0) += loss_pair.item() as f64 * scale;
                total = total.add(&loss_pair);
            }
            dx_val += loss_dx.item() as f64 * scale;
            dy_val += loss_dy.item() as f64 * scale;
            total.mul_scalar(scale as f32).backward();
        }
        clip_global_norm(&self.d_params, self.schedule.clip_max_norm, "discriminator")?;
        self.opt_d.step(self.schedule.lr_at(iter))?;
        self.counters.d_updates += 1;
        Ok((dx_val, dy_val, dpair_val))
    }

    /// One generator update; returns the loss report of this step.
    #[allow(clippy::too_many_lines)]
    fn g_update(
        &mut self,
        bx: &LoadedBatch,
        by: &LoadedBatch,
        paired: Option<(&Array4<f32>, &Array4<f32>)>,
        iter: usize,
    ) -> Result<LossReport> {
        let _half = HalfGemmGuard::new(self.precision == Precision::Mixed);
        let accum = self.schedule.grad_accum;
        let chunks = Self::chunk_ranges(bx.images.shape()[0], accum)?;
        let scale = 1.0 / accum as f64;
        self.opt_g.zero_grads();
        let w = self.weights;
        let mut agg: Option<LossReport> = None;
        for (ci, range) in chunks.iter().enumerate() {
            let x = Var::leaf(Self::slice_batch(&bx.images, range));
            let y = Var::leaf(Self::slice_batch(&by.images, range));
            let need_taps = w.lambda_con > 0.0;
            let fake_y = self.model.g_xy.forward(&x, true)?;
            let fake_x = self.model.g_yx.forward(&y, true)?;
            let need_cycle = w.lambda_cyc > 0.0 || w.lambda_sem > 0.0;
            let (rec_x, rec_y) = if need_cycle {
                (
                    Some(self.model.g_yx.forward(&fake_y, true)?),
                    Some(self.model.g_xy.forward(&fake_x, true)?),
                )
            } else {
                (None, None)
            };

            // adversarial terms on augmented fakes
            let seed_gy = derive_seed(self.run_seed, iter as u64, (1000 + ci * 4) as u64);
            let seed_gx = derive_seed(self.run_seed, iter as u64, (1000 + ci * 4 + 1) as u64);
            let s = fake_y.shape();
            let draw_y = sample_draw(&self.augment, s[2], s[3], seed_gy);
            let draw_x = sample_draw(&self.augment, s[2], s[3], seed_gx);
            let gan_g_xy = adv_g_loss(
                &self.model.d_y.forward(&apply_draw(&fake_y, &draw_y), true)?,
                self.gan_kind,
            )?;
            let gan_g_yx = adv_g_loss(
                &self.model.d_x.forward(&apply_draw(&fake_x, &draw_x), true)?,
                self.gan_kind,
            )?;

            let cyc = if w.lambda_cyc > 0.0 {
                Some(cycle_loss(
                    &x,
                    rec_x.as_ref().unwrap(),
                    &y,
                    rec_y.as_ref().unwrap(),
                )?)
            } else {
                None
            };

            let sem_cyc = if w.lambda_sem > 0.0 {
                let mask = |b: &LoadedBatch, r: &std::ops::Range<usize>| -> Result<Var<f32>> {
                    let m = b.masks.as_ref().ok_or_else(|| {
                        Error::Config("semantic cycle weight set but batch has no masks".into())
                    })?;
                    Ok(Var::leaf(
                        m.slice(ndarray::s![r.clone(), .., .., ..]).to_owned().into_dyn(),
                    ))
                };
                Some(semantic_cycle_loss(
                    &x,
                    rec_x.as_ref().unwrap(),
                    &mask(bx, range)?,
                    &y,
                    rec_y.as_ref().unwrap(),
                    &mask(by, range)?,
                )?)
            } else {
                None
            };

            let id = if w.lambda_id > 0.0 {
                let e_x = {
                    let _ng = NoGrad::new();
                    self.guidance.identity.embed_identity(&x)?
                };
                let e_y = {
                    let _ng = NoGrad::new();
                    self.guidance.identity.embed_identity(&y)?
                };
                let e_gx = self.guidance.identity.embed_identity(&fake_y)?;
                let e_gy = self.guidance.identity.embed_identity(&fake_x)?;
                Some(identity_loss(&e_x, &e_gx, &e_y, &e_gy)?)
            } else {
                None
            };

            let perc = if w.lambda_perc > 0.0 {
                let xs = Self::slice_batch(&bx.images, range);
                let ys = Self::slice_batch(&by.images, range);
                let (idx_x, idx_y) = retrieve_pseudo_pairs(
                    &xs,
                    &ys,
                    &self.guidance.perceptual,
                    self.guidance.retrieval_metric,
                )?;
                let gather = |src: &Arr<f32>, idx: &[usize]| -> Arr<f32> {
                    let views: Vec<_> = idx.iter().map(|&i| src.index_axis(Axis(0), i)).collect();
                    ndarray::stack(Axis(0), &views).unwrap()
                };
                let y_star = gather(&ys, &idx_x);
                let x_star = gather(&xs, &idx_y);
                let feat = |img: Arr<f32>| -> Result<Vec<Var<f32>>> {
                    let _ng = NoGrad::new();
                    self.guidance.perceptual.extract_features(&Var::leaf(img))
                };
                let feat_ystar = feat(y_star)?;
                let feat_xstar = feat(x_star)?;
                let feat_gx = self.guidance.perceptual.extract_features(&fake_y)?;
                let feat_gy = self.guidance.perceptual.extract_features(&fake_x)?;
                Some(perceptual_loss(&feat_gx, &feat_ystar, &feat_gy, &feat_xstar)?)
            } else {
                None
            };

            let lmk = if w.lambda_lmk > 0.0 {
                let mut terms: Vec<Var<f32>> = Vec::new();
                let mut sides = 0usize;
                for (batch, fake) in [(bx, &fake_y), (by, &fake_x)] {
                    sides += 1;
                    let Some((lms, valid)) = &batch.landmarks else {
                        continue;
                    };
                    let valid_idx: Vec<usize> = range
                        .clone()
                        .enumerate()
                        .filter(|(_, gi)| valid[*gi])
                        .map(|(local, _)| local)
                        .collect();
                    if valid_idx.is_empty() {
                        continue;
                    }
                    let detected = self.guidance.detector.detect(fake)?;
                    let gen_sel = detected.select_axis0(&valid_idx);
                    let global_idx: Vec<usize> =
                        range.clone().filter(|gi| valid[*gi]).collect();
                    let src_views: Vec<_> = global_idx
                        .iter()
                        .map(|&i| lms.index_axis(Axis(0), i))
                        .collect();
                    let src = ndarray::stack(Axis(0), &src_views).unwrap().into_dyn();
                    terms.push(landmark_loss_single(&Var::leaf(src), &gen_sel)?);
                }
                let _ = sides;
                match terms.len() {
                    0 => Some(Var::leaf(ArrayD::zeros(IxDyn(&[])))),
                    1 => Some(terms.pop().unwrap()),
                    _ => {
                        let b = terms.pop().unwrap();
                        let a = terms.pop().unwrap();
                        Some(a.add(&b))
                    }
                }
            } else {
                None
            };

            let con = if need_taps {
                let feat_src = self.model.g_xy.encode_taps(&x, true)?;
                let feat_out = self.model.g_xy.encode_taps(&fake_y, true)?;
                let nce_seed = derive_seed(self.run_seed, iter as u64, (2000 + ci) as u64);
                Some(patch_nce_loss(
                    &feat_src,
                    &feat_out,
                    &self.patch_spec,
                    &self.model.nce_heads,
                    nce_seed,
                )?)
            } else {
                None
            };

            let paired_terms = if let Some((px, py)) = paired {
                let dp = self
                    .model
                    .d_pair
                    .as_ref()
                    .ok_or_else(|| Error::Config("hybrid step without pair critic".into()))?;
                let pxv = Var::leaf(Self::slice_batch(px, range));
                let pyv = Var::leaf(Self::slice_batch(py, range));
                if pxv.shape() != pyv.shape() {
                    return Err(Error::Shape("misaligned pair shapes".into()));
                }
                let fake = self.model.g_xy.forward(&pxv, true)?;
                let pair = Var::concat(&[pxv, fake.clone()], 1);
                let adv = adv_g_loss(&[dp.forward(&pair, true)?], self.gan_kind)?;
                let l1 = fake.sub(&pyv).abs().mean_all();
                Some((adv, l1))
            } else {
                None
            };

            let terms = GeneratorLossTerms {
                gan_g_xy,
                gan_g_yx,
                cyc,
                id,
                perc,
                sem_cyc,
                lmk,
                con,
                paired: paired_terms.as_ref().map(|(_, l1)| l1.clone()),
            };
            let (mut total, mut report) = total_generator_loss(&terms, &w)?;
            if let Some((adv, _)) = &paired_terms {
                // conditional adversarial term rides along unweighted
                total = total.add(adv);
                report
                    .components
                    .insert("paired_adv_g".to_string(), adv.item() as f64);
                report.weights.insert("paired_adv_g".to_string(), 1.0);
                report.total = total.item() as f64;
            }
            if !report.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite generator loss at iter {iter}; components: {:?}",
                    report.components
                )));
            }
            total.mul_scalar(scale as f32).backward();
            // aggregate scaled component values across accumulation chunks
            match &mut agg {
                None => {
                    let mut r = report.clone();
                    for v in r.components.values_mut() {
                        *v *= scale;
                    }
                    r.total *= scale;
                    agg = Some(r);
                }
                Some(a) => {
                    for (k, v) in &report.components {
                        *a.components.entry(k.clone()).or_insert(0.0) += v * scale;
                    }
                    a.total += report.total * scale;
                }
            }
        }
        clip_global_norm(&self.g_params, self.schedule.clip_max_norm, "generator")?;
        self.opt_g.step(self.schedule.lr_at(iter))?;
        self.ema.update(&self.g_params);
        self.counters.g_updates += 1;
        Ok(agg.expect("at least one chunk"))
    }

    /// Full unpaired training step: TTUR-scheduled discriminator updates
    /// followed by one generator update. Returns the generator-step report
    /// with the last discriminator losses attached.
    pub fn train_step(
        &mut self,
        bx: &LoadedBatch,
        by: &LoadedBatch,
        iter: usize,
    ) -> Result<LossReport> {
        self.step_impl(bx, by, None, iter)
    }

    /// Hybrid step on a curated paired minibatch: unpaired objectives plus a
    /// conditional adversarial term and weighted L1. With lambda_paired = 0
    /// this reduces exactly to [`Self::train_step`].
    pub fn hybrid_paired_step(
        &mut self,
        bx: &LoadedBatch,
        by: &LoadedBatch,
        paired_x: &Array4<f32>,
        paired_y: &Array4<f32>,
        iter: usize,
    ) -> Result<LossReport> {
        if paired_x.shape() != paired_y.shape() {
            return Err(Error::Shape("misaligned pair shapes".into()));
        }
        let paired = (self.weights.lambda_paired > 0.0).then_some((paired_x, paired_y));
        self.step_impl(bx, by, paired, iter)
    }

    fn step_impl(
        &mut self,
        bx: &LoadedBatch,
        by: &LoadedBatch,
        paired: Option<(&Array4<f32>, &Array4<f32>)>,
        iter: usize,
    ) -> Result<LossReport> {
        if bx.images.shape() != by.images.shape() {
            return Err(Error::Shape(format!(
                "domain batches must match in shape: {:?} vs {:?}",
                bx.images.shape(),
                by.images.shape()
            )));
        }
        let (d_steps, g_steps) = self.schedule.ttur_steps(iter);
        let mut d_vals = (0.0, 0.0, None);
        for s in 0..d_steps {
            d_vals = self.d_update(bx, by, paired, iter, s)?;
        }
        let mut report = LossReport::default();
        for _ in 0..g_steps {
            report = self.g_update(bx, by, paired, iter)?;
        }
        report.components.insert("gan_D_x".to_string(), d_vals.0);
        report.components.insert("gan_D_y".to_string(), d_vals.1);
        if let Some(dp) = d_vals.2 {
            report.components.insert("gan_D_pair".to_string(), dp);
        }
        report.validate()?;
        Ok(report)
    }

    /// Swap EMA shadow weights into the live generators (used for eval).
    pub fn apply_ema_weights(&self) -> Vec<(String, Arr<f32>)> {
        self.ema.apply_to(&self.g_params)
    }

    pub fn restore_live_weights(&self, saved: Vec<(String, Arr<f32>)>) {
        for ((_, p), (_, data)) in self.g_params.entries.iter().zip(saved) {
            p.set_data(data);
        }
    }

    pub fn save_checkpoint(&self, path: &Path, iter: usize, cfg: &RunConfig) -> Result<()> {
        let meta = serde_json::json!({
            "model": cfg.model.to_string(),
            "iter": iter as u64,
            "d_updates": self.counters.d_updates as u64,
            "g_updates": self.counters.g_updates as u64,
            "adam_g_t": self.opt_g.t,
            "adam_d_t": self.opt_d.t,
            "config": cfg.to_toml()?,
        });
        let mut ck = Checkpoint::new(meta);
        for (name, p) in &self.g_params.entries {
            ck.push(format!("param/{name}"), p.to_array());
        }
        for (name, p) in &self.d_params.entries {
            ck.push(format!("param/{name}"), p.to_array());
        }
        for (name, shadow) in &self.ema.named {
            ck.push(format!("ema/{name}"), shadow.clone());
        }
        for (name, state) in self.model.sn_states() {
            let st = state.borrow();
            ck.push(format!("sn/{name}/u"), ArrayD::from_shape_vec(IxDyn(&[st.u.len()]), st.u.to_vec()).unwrap());
            ck.push(format!("sn/{name}/v"), ArrayD::from_shape_vec(IxDyn(&[st.v.len()]), st.v.to_vec()).unwrap());
            ck.push(format!("sn/{name}/sigma"), ArrayD::from_elem(IxDyn(&[1]), st.sigma));
        }
        let (t, m, v) = self.opt_g.state();
        let _ = t;
        for (name, arr) in m {
            ck.push(format!("adam_g/m/{name}"), arr);
        }
        for (name, arr) in v {
            ck.push(format!("adam_g/v/{name}"), arr);
        }
        let (t, m, v) = self.opt_d.state();
        let _ = t;
        for (name, arr) in m {
            ck.push(format!("adam_d/m/{name}"), arr);
        }
        for (name, arr) in v {
            ck.push(format!("adam_d/v/{name}"), arr);
        }
        ckpt::save(path, &ck)
    }

    /// Rebuild a trainer from a checkpoint (config echo included in meta).
    pub fn load_checkpoint(path: &Path) -> Result<(Trainer, RunConfig, usize)> {
        let ck = ckpt::load(path)?;
        let cfg_text = ck.meta_str("config")?;
        let cfg = crate::config::parse_config(&cfg_text, &[])?;
        let mut tr = Trainer::new(&cfg)?;
        tr.restore_from(&ck)?;
        let iter = ck.meta_u64("iter")? as usize;
        Ok((tr, cfg, iter))
    }

    pub fn restore_from(&mut self, ck: &Checkpoint) -> Result<()> {
        for (name, p) in self.g_params.entries.iter().chain(&self.d_params.entries) {
            let arr = ck.require(&format!("param/{name}"))?;
            if arr.shape() != p.data().shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' shape mismatch: checkpoint {:?} vs model {:?}",
                    arr.shape(),
                    p.data().shape()
                )));
            }
            p.set_data(arr.clone());
        }
        for (name, shadow) in &mut self.ema.named {
            *shadow = ck.require(&format!("ema/{name}"))?.clone();
        }
        for (name, state) in self.model.sn_states() {
            let u = ck.require(&format!("sn/{name}/u"))?;
            let v = ck.require(&format!("sn/{name}/v"))?;
            let sigma = ck.require(&format!("sn/{name}/sigma"))?;
            let mut st = state.borrow_mut();
            st.u = ndarray::Array1::from_vec(u.iter().cloned().collect());
            st.v = ndarray::Array1::from_vec(v.iter().cloned().collect());
            st.sigma = sigma[[0]];
        }
        let restore_opt = |opt: &mut Adam<f32>, tag: &str, t: u64| -> Result<()> {
            let names = opt.param_names();
            let mut m = Vec::new();
            let mut v = Vec::new();
            for name in &names {
                m.push((name.clone(), ck.require(&format!("{tag}/m/{name}"))?.clone()));
                v.push((name.clone(), ck.require(&format!("{tag}/v/{name}"))?.clone()));
            }
            opt.restore(t, m, v)
        };
        let g_t = ck.meta_u64("adam_g_t")?;
        let d_t = ck.meta_u64("adam_d_t")?;
        restore_opt(&mut self.opt_g, "adam_g", g_t)?;
        restore_opt(&mut self.opt_d, "adam_d", d_t)?;
        self.counters.d_updates = ck.meta_u64("d_updates")? as usize;
        self.counters.g_updates = ck.meta_u64("g_updates")? as usize;
        Ok(())
    }
}

/// Mean per-dimension std of pooled probe features; collapse shows up as
/// this shrinking toward zero.
pub fn generation_probe_std(
    model: &CycleModel,
    probe_x: &Array4<f32>,
    extractor: &FrozenEncoder<f32>,
) -> Result<f64> {
    let fake = model.translate_batch(probe_x, Direction::XToY)?;
    let feats = extractor.pooled_features(&fake.into_dyn())?;
    let (n, d) = (feats.shape()[0], feats.shape()[1]);
    if n < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for col in feats.columns() {
        let mean: f32 = col.iter().sum::<f32>() / n as f32;
        let var: f32 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / (n - 1) as f32;
        acc += (var as f64).sqrt();
    }
    Ok(acc / d as f64)
}

fn load_training_batch(
    manifest: &DatasetManifest,
    ids: &[String],
    resolution: usize,
    weights: &LossWeights,
    policy: MissingSidecarPolicy,
) -> Result<LoadedBatch> {
    data::load_batch(
        manifest,
        ids,
        resolution,
        weights.lambda_sem > 0.0,
        weights.lambda_lmk > 0.0,
        policy,
    )
}

/// Artifacts produced by a completed training run.
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub counters: StepCounters,
}

/// Train the configured model to `total_iters`, writing the full run
/// directory (config snapshot, per-step loss rows, probe stats, checkpoints,
/// sample grids, events).
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut rd = RunDir::create(&cfg.output_dir, &cfg.to_toml()?)?;
    match cfg.model {
        ModelKind::CycleganGuided => run_cycle(cfg, &mut rd),
        ModelKind::Vae => run_vae(cfg, &mut rd),
        ModelKind::Pix2pix => run_pix2pix(cfg, &mut rd),
    }
}

fn split_domains(cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest, DatasetManifest)> {
    let mut mx = data::ingest_directory(&cfg.data.x_dir, Domain::X)?;
    let my = data::ingest_directory(&cfg.data.y_dir, Domain::Y)?;
    let mut my = my;
    if cfg.data.paired_ids {
        data::pair_manifests(&mut mx, &my);
        let map = mx.paired_with.clone();
        my.paired_with = map.map(|m| m.into_iter().map(|(k, v)| (v, k)).collect());
    }
    let spec = SplitSpec {
        train_frac: cfg.data.train_frac,
        seed: cfg.data.split_seed,
    };
    let (tx, ex) = data::split(&mx, &spec)?;
    let (ty, ey) = data::split(&my, &spec)?;
    Ok((tx, ex, ty, ey))
}

fn run_cycle(cfg: &RunConfig, rd: &mut RunDir) -> Result<RunOutcome> {
    let (train_x, _test_x, train_y, _test_y) = split_domains(cfg)?;
    let train_id_guard: BTreeSet<String> = train_x
        .ids
        .iter()
        .chain(train_y.ids.iter())
        .cloned()
        .collect();
    let mut sampler = UnpairedSampler::new(
        &train_x,
        &train_y,
        cfg.schedule.batch_size,
        derive_seed(cfg.seed, 10, 0),
    )?;
    let mut trainer = Trainer::new(cfg)?;
    let extractor = FrozenEncoder::<f32>::perceptual(cfg.metrics.extractor_seed);
    let encoder_checksum =
        trainer.guidance.identity.weight_checksum() + trainer.guidance.perceptual.weight_checksum();

    // fixed probes at the base resolution
    let base_res = cfg.schedule.resolutions[0];
    let probe_n = 64.min(train_x.len());
    let probe_ids: Vec<String> = train_x.ids[..probe_n].to_vec();
    let probe_x = data::load_batch(
        &train_x,
        &probe_ids,
        base_res,
        false,
        false,
        cfg.guidance.missing_sidecar_policy,
    )?
    .images;
    let grid_n = 4.min(train_x.len()).min(train_y.len());
    let grid_ids_x: Vec<String> = train_x.ids[..grid_n].to_vec();
    let grid_ids_y: Vec<String> = train_y.ids[..grid_n].to_vec();

    // hybrid paired pool
    let paired_pool: Vec<(String, String)> = train_x
        .paired_with
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    let mut paired_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 11, 0));

    let steps_per_epoch = train_x.len().div_ceil(cfg.schedule.batch_size).max(1);
    rd.event(&format!(
        "cycle training: {} X / {} Y train images, {} iters, batch {}",
        train_x.len(),
        train_y.len(),
        cfg.schedule.total_iters,
        cfg.schedule.batch_size
    ))?;

    for iter in 0..cfg.schedule.total_iters {
        let res = cfg.schedule.current_resolution(iter);
        let (ids_x, ids_y) = sampler.next_batch();
        debug_assert!(ids_x.iter().chain(ids_y.iter()).all(|id| train_id_guard.contains(id)));
        let bx = load_training_batch(&train_x, &ids_x, res, &cfg.loss_weights, cfg.guidance.missing_sidecar_policy)?;
        let by = load_training_batch(&train_y, &ids_y, res, &cfg.loss_weights, cfg.guidance.missing_sidecar_policy)?;

        let hybrid_now = cfg.hybrid_paired_every > 0
            && !paired_pool.is_empty()
            && iter % cfg.hybrid_paired_every == 0;
        let report = if hybrid_now {
            let n = cfg.schedule.batch_size.min(paired_pool.len());
            let mut pool = paired_pool.clone();
            pool.shuffle(&mut paired_rng);
            let chosen: Vec<(String, String)> = pool.into_iter().take(n).collect();
            let ids_px: Vec<String> = chosen.iter().map(|(a, _)| a.clone()).collect();
            let ids_py: Vec<String> = chosen.iter().map(|(_, b)| b.clone()).collect();
            let px = data::load_batch(&train_x, &ids_px, res, false, false, cfg.guidance.missing_sidecar_policy)?;
            let py = data::load_batch(&train_y, &ids_py, res, false, false, cfg.guidance.missing_sidecar_policy)?;
            trainer.hybrid_paired_step(&bx, &by, &px.images, &py.images, iter)?
        } else {
            trainer.train_step(&bx, &by, iter)?
        };

        if iter % cfg.log_every == 0 {
            rd.log_losses(iter, &report)?;
        }
        if (iter + 1) % steps_per_epoch == 0 {
            let epoch = (iter + 1) / steps_per_epoch;
            let std = generation_probe_std(&trainer.model, &probe_x, &extractor)?;
            rd.log_probe(epoch, std)?;
        }
        if cfg.sample_every > 0 && (iter % cfg.sample_every == 0 || iter + 1 == cfg.schedule.total_iters) {
            let gx = data::load_batch(&train_x, &grid_ids_x, res, false, false, cfg.guidance.missing_sidecar_policy)?.images;
            let gy = data::load_batch(&train_y, &grid_ids_y, res, false, false, cfg.guidance.missing_sidecar_policy)?.images;
            let fake_y = trainer.model.translate_batch(&gx, Direction::XToY)?;
            let rec_x = trainer.model.translate_batch(&fake_y, Direction::YToX)?;
            rd.save_sample_grid(&format!("iter_{iter}_grid.png"), &[gx, fake_y, rec_x, gy])?;
        }
        if cfg.checkpoint_every > 0
            && (iter + 1) % cfg.checkpoint_every == 0
            && iter + 1 != cfg.schedule.total_iters
        {
            trainer.save_checkpoint(&rd.checkpoint_path(iter + 1), iter + 1, cfg)?;
        }
    }
    // frozen encoders must be bit-identical after training
    let after = trainer.guidance.identity.weight_checksum() + trainer.guidance.perceptual.weight_checksum();
    if after != encoder_checksum {
        return Err(Error::Numeric("frozen encoder weights changed during training".into()));
    }
    let final_path = rd.checkpoint_path(cfg.schedule.total_iters);
    trainer.save_checkpoint(&final_path, cfg.schedule.total_iters, cfg)?;
    let (d_expect, g_expect) = cfg.schedule.expected_update_counts();
    rd.event(&format!(
        "done: D updates {} (expected {}), G updates {} (expected {})",
        trainer.counters.d_updates, d_expect, trainer.counters.g_updates, g_expect
    ))?;
    if trainer.counters.d_updates != d_expect || trainer.counters.g_updates != g_expect {
        return Err(Error::Numeric("update-count ledger mismatch".into()));
    }
    Ok(RunOutcome {
        run_dir: rd.dir.clone(),
        final_checkpoint: final_path,
        counters: trainer.counters,
    })
}

fn run_vae(cfg: &RunConfig, rd: &mut RunDir) -> Result<RunOutcome> {
    let (train_x, _, train_y, _) = split_domains(cfg)?;
    let res = *cfg.schedule.resolutions.last().unwrap();
    let vae = Vae::<f32>::new(&cfg.vae, res, derive_seed(cfg.seed, 20, 0))?;
    let mut params = ParamSet::default();
    vae.params("vae", &mut params);
    let mut opt = Adam::new(&params, 0.9, 0.999);
    // reconstruction baseline trains on both domains
    let mut all_ids: Vec<(bool, String)> = train_x
        .ids
        .iter()
        .map(|i| (true, i.clone()))
        .chain(train_y.ids.iter().map(|i| (false, i.clone())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 21, 0));
    let batch = cfg.schedule.batch_size;
    rd.event(&format!(
        "vae training: {} images, {} iters, batch {batch}, lr {}",
        all_ids.len(),
        cfg.schedule.total_iters,
        cfg.vae.lr
    ))?;
    let grid_ids: Vec<String> = train_x.ids[..4.min(train_x.len())].to_vec();
    let mut cursor = usize::MAX;
    for iter in 0..cfg.schedule.total_iters {
        if cursor + batch > all_ids.len() {
            all_ids.shuffle(&mut rng);
            cursor = 0;
        }
        let chosen = &all_ids[cursor..cursor + batch];
        cursor += batch;
        let ids_x: Vec<String> = chosen.iter().filter(|(fx, _)| *fx).map(|(_, i)| i.clone()).collect();
        let ids_y: Vec<String> = chosen.iter().filter(|(fx, _)| !*fx).map(|(_, i)| i.clone()).collect();
        let mut imgs: Vec<Array4<f32>> = Vec::new();
        if !ids_x.is_empty() {
            imgs.push(data::load_batch(&train_x, &ids_x, res, false, false, MissingSidecarPolicy::Neutral)?.images);
        }
        if !ids_y.is_empty() {
            imgs.push(data::load_batch(&train_y, &ids_y, res, false, false, MissingSidecarPolicy::Neutral)?.images);
        }
        let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
        let images = ndarray::concatenate(Axis(0), &views).unwrap();
        let x = Var::leaf(images.into_dyn());
        params.zero_grads();
        let (recon, mu, sigma) = vae.forward(&x, derive_seed(cfg.seed, 22, iter as u64))?;
        let (total, rec_term, kl_term) = vae_loss(&x, &recon, &mu, &sigma, cfg.vae.beta)?;
        total.backward();
        clip_global_norm(&params, cfg.schedule.clip_max_norm, "vae")?;
        opt.step(cfg.vae.lr)?;
        let mut report = LossReport::default();
        report.components.insert("recon".into(), rec_term.item() as f64);
        report.components.insert("kl".into(), kl_term.item() as f64);
        report.weights.insert("recon".into(), 1.0);
        report.weights.insert("kl".into(), cfg.vae.beta);
        report.total = total.item() as f64;
        report.validate()?;
        if iter % cfg.log_every == 0 {
            rd.log_losses(iter, &report)?;
        }
        if cfg.sample_every > 0 && (iter % cfg.sample_every == 0 || iter + 1 == cfg.schedule.total_iters) {
            let gx = data::load_batch(&train_x, &grid_ids, res, false, false, MissingSidecarPolicy::Neutral)?.images;
            let rec = vae.translate_batch(&gx, Direction::XToY)?;
            rd.save_sample_grid(&format!("iter_{iter}_grid.png"), &[gx, rec])?;
        }
    }
    // latent interpolation grid (qualitative)
    if train_x.len() >= 2 {
        let ids: Vec<String> = train_x.ids[..2].to_vec();
        let pair = data::load_batch(&train_x, &ids, res, false, false, MissingSidecarPolicy::Neutral)?.images;
        let _ng = NoGrad::new();
        let (mu, _) = vae.encode(&Var::leaf(pair.into_dyn()));
        let md = mu.to_array();
        let a: Vec<f32> = md.index_axis(Axis(0), 0).iter().cloned().collect();
        let b: Vec<f32> = md.index_axis(Axis(0), 1).iter().cloned().collect();
        let mut zs = Vec::new();
        for k in 0..6 {
            zs.push(Vae::<f32>::slerp(&a, &b, k as f32 / 5.0));
        }
        let z = Array3::from_shape_fn((1, 6, a.len()), |(_, i, d)| zs[i][d])
            .into_shape_with_order((6, a.len()))
            .unwrap();
        let dec = vae.decode(&Var::leaf(z.into_dyn())).to_array();
        let dec4 = dec.into_dimensionality::<ndarray::Ix4>().unwrap();
        rd.save_sample_grid("latent_interpolation.png", &[dec4])?;
    }
    let final_path = rd.checkpoint_path(cfg.schedule.total_iters);
    save_baseline_checkpoint(&final_path, cfg, &params, &[], cfg.schedule.total_iters)?;
    rd.event("vae training done")?;
    Ok(RunOutcome {
        run_dir: rd.dir.clone(),
        final_checkpoint: final_path,
        counters: StepCounters {
            d_updates: 0,
            g_updates: cfg.schedule.total_iters,
        },
    })
}

fn run_pix2pix(cfg: &RunConfig, rd: &mut RunDir) -> Result<RunOutcome> {
    let (train_x, _, train_y, _) = split_domains(cfg)?;
    let Some(pair_map) = train_x.paired_with.clone().filter(|m| !m.is_empty()) else {
        return Err(Error::Protocol(
            "pix2pix requires pairs: enable data.paired_ids with matching ids across domains"
                .into(),
        ));
    };
    let res = *cfg.schedule.resolutions.last().unwrap();
    let p2p = Pix2pix::<f32>::new(&cfg.pix2pix, res, derive_seed(cfg.seed, 30, 0))?;
    let g_params = p2p.g_params();
    let d_params = p2p.d_params();
    let mut opt_g = Adam::new(&g_params, cfg.schedule.adam_beta1, cfg.schedule.adam_beta2);
    let mut opt_d = Adam::new(&d_params, cfg.schedule.adam_beta1, cfg.schedule.adam_beta2);
    let mut pairs: Vec<(String, String)> = pair_map.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 31, 0));
    let batch = cfg.schedule.batch_size.min(pairs.len());
    rd.event(&format!(
        "pix2pix training: {} pairs, {} iters, batch {batch}",
        pairs.len(),
        cfg.schedule.total_iters
    ))?;
    let grid: Vec<(String, String)> = pairs[..4.min(pairs.len())].to_vec();
    let mut cursor = usize::MAX;
    for iter in 0..cfg.schedule.total_iters {
        if cursor + batch > pairs.len() {
            pairs.shuffle(&mut rng);
            cursor = 0;
        }
        let chosen = &pairs[cursor..cursor + batch];
        cursor += batch;
        let ids_x: Vec<String> = chosen.iter().map(|(a, _)| a.clone()).collect();
        let ids_y: Vec<String> = chosen.iter().map(|(_, b)| b.clone()).collect();
        let bx = data::load_batch(&train_x, &ids_x, res, false, false, MissingSidecarPolicy::Neutral)?.images;
        let by = data::load_batch(&train_y, &ids_y, res, false, false, MissingSidecarPolicy::Neutral)?.images;
        let x = Var::leaf(bx.clone().into_dyn());
        let y = Var::leaf(by.clone().into_dyn());
        // alternating D then G updates
        opt_d.zero_grads();
        let (d_loss, _, _) = p2p.step_losses(&x, &y, true)?;
        let d_val = d_loss.item() as f64;
        d_loss.backward();
        clip_global_norm(&d_params, cfg.schedule.clip_max_norm, "pix2pix discriminator")?;
        opt_d.step(cfg.pix2pix.lr)?;
        opt_g.zero_grads();
        let (_, g_adv, l1) = p2p.step_losses(&x, &y, true)?;
        let g_val = g_adv.item() as f64;
        let l1_val = l1.item() as f64;
        let g_total = g_adv.add(&l1.mul_scalar(cfg.pix2pix.lambda_l1 as f32));
        g_total.backward();
        clip_global_norm(&g_params, cfg.schedule.clip_max_norm, "pix2pix generator")?;
        opt_g.step(cfg.pix2pix.lr)?;
        let report = Pix2pix::<f32>::loss_report(d_val, g_val, l1_val, cfg.pix2pix.lambda_l1);
        report.validate()?;
        if iter % cfg.log_every == 0 {
            rd.log_losses(iter, &report)?;
        }
        if cfg.sample_every > 0 && (iter % cfg.sample_every == 0 || iter + 1 == cfg.schedule.total_iters) {
            let ids_x: Vec<String> = grid.iter().map(|(a, _)| a.clone()).collect();
            let ids_y: Vec<String> = grid.iter().map(|(_, b)| b.clone()).collect();
            let gx = data::load_batch(&train_x, &ids_x, res, false, false, MissingSidecarPolicy::Neutral)?.images;
            let gy = data::load_batch(&train_y, &ids_y, res, false, false, MissingSidecarPolicy::Neutral)?.images;
            let fake = p2p.translate_batch(&gx, Direction::XToY)?;
            rd.save_sample_grid(&format!("iter_{iter}_grid.png"), &[gx, fake, gy])?;
        }
    }
    let final_path = rd.checkpoint_path(cfg.schedule.total_iters);
    let sn = p2p.sn_states();
    save_baseline_checkpoint(&final_path, cfg, &g_params, &[&d_params], cfg.schedule.total_iters)?;
    let _ = sn;
    rd.event("pix2pix training done")?;
    Ok(RunOutcome {
        run_dir: rd.dir.clone(),
        final_checkpoint: final_path,
        counters: StepCounters {
            d_updates: cfg.schedule.total_iters,
            g_updates: cfg.schedule.total_iters,
        },
    })
}

fn save_baseline_checkpoint(
    path: &Path,
    cfg: &RunConfig,
    g_params: &ParamSet<f32>,
    extra: &[&ParamSet<f32>],
    iter: usize,
) -> Result<()> {
    let meta = serde_json::json!({
        "model": cfg.model.to_string(),
        "iter": iter as u64,
        "d_updates": 0u64,
        "g_updates": iter as u64,
        "adam_g_t": 0u64,
        "adam_d_t": 0u64,
        "config": cfg.to_toml()?,
    });
    let mut ck = Checkpoint::new(meta);
    for (name, p) in &g_params.entries {
        ck.push(format!("param/{name}"), p.to_array());
    }
    for set in extra {
        for (name, p) in &set.entries {
            ck.push(format!("param/{name}"), p.to_array());
        }
    }
    ckpt::save(path, &ck)
}

/// Rebuild a baseline model from its checkpoint.
pub fn load_baseline(path: &Path) -> Result<(BaselineModel, RunConfig)> {
    let ck = ckpt::load(path)?;
    let cfg = crate::config::parse_config(&ck.meta_str("config")?, &[])?;
    let res = *cfg.schedule.resolutions.last().unwrap();
    match cfg.model {
        ModelKind::Vae => {
            let vae = Vae::<f32>::new(&cfg.vae, res, derive_seed(cfg.seed, 20, 0))?;
            let mut params = ParamSet::default();
            vae.params("vae", &mut params);
            restore_params(&ck, &params)?;
            Ok((BaselineModel::Vae(vae), cfg))
        }
        ModelKind::Pix2pix => {
            let p2p = Pix2pix::<f32>::new(&cfg.pix2pix, res, derive_seed(cfg.seed, 30, 0))?;
            restore_params(&ck, &p2p.g_params())?;
            restore_params(&ck, &p2p.d_params())?;
            Ok((BaselineModel::Pix2pix(p2p), cfg))
        }
        ModelKind::CycleganGuided => Err(Error::Checkpoint(
            "checkpoint holds the main model; load it with Trainer::load_checkpoint".into(),
        )),
    }
}

fn restore_params(ck: &Checkpoint, params: &ParamSet<f32>) -> Result<()> {
    for (name, p) in &params.entries {
        p.set_data(ck.require(&format!("param/{name}"))?.clone());
    }
    Ok(())
}

pub enum BaselineModel {
    Vae(Vae<f32>),
    Pix2pix(Pix2pix<f32>),
}

impl Translator for BaselineModel {
    fn translate_batch(&self, images: &Array4<f32>, direction: Direction) -> Result<Array4<f32>> {
        match self {
            BaselineModel::Vae(v) => v.translate_batch(images, direction),
            BaselineModel::Pix2pix(p) => p.translate_batch(images, direction),
        }
    }

    fn supports_cycle(&self) -> bool {
        false
    }
}
