//! Differentiable data augmentation for discriminator inputs.
//!
//! One seeded draw per call is applied identically to the real and fake
//! tensors. Transform order is color jitter, then translation, then cutout,
//! so zero padding and cutout holes stay exactly zero. Every transform is
//! differentiable w.r.t. pixel values.

use crate::tensor::{Scalar, Var};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_translate() -> f64 {
    0.125
}
fn default_brightness() -> f64 {
    0.2
}
fn default_sat_min() -> f64 {
    0.5
}
fn default_sat_max() -> f64 {
    1.5
}
fn default_con_min() -> f64 {
    0.75
}
fn default_con_max() -> f64 {
    1.25
}
fn default_cutout() -> f64 {
    0.5
}
fn default_prob() -> f64 {
    0.8
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Max shift as a fraction of width/height.
    pub translate_frac: f64,
    /// Brightness offset drawn from [-brightness, brightness].
    pub brightness: f64,
    pub saturation_min: f64,
    pub saturation_max: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Cutout square side as a fraction of the image side.
    pub cutout_frac: f64,
    /// Per-transform application probability.
    pub apply_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            translate_frac: default_translate(),
            brightness: default_brightness(),
            saturation_min: default_sat_min(),
            saturation_max: default_sat_max(),
            contrast_min: default_con_min(),
            contrast_max: default_con_max(),
            cutout_frac: default_cutout(),
            apply_prob: default_prob(),
        }
    }
}

impl AugmentPolicy {
    /// Policy that never transforms anything.
    pub fn disabled() -> Self {
        AugmentPolicy {
            translate_frac: 0.0,
            brightness: 0.0,
            saturation_min: 1.0,
            saturation_max: 1.0,
            contrast_min: 1.0,
            contrast_max: 1.0,
            cutout_frac: 0.0,
            apply_prob: 0.0,
        }
    }
}

/// Concrete transform parameters for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub brightness: Option<f64>,
    pub saturation: Option<f64>,
    pub contrast: Option<f64>,
    pub translate: Option<(isize, isize)>,
    pub cutout: Option<(usize, usize, usize)>, // (top, left, side)
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            brightness: None,
            saturation: None,
            contrast: None,
            translate: None,
            cutout: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self == &AugmentDraw::identity()
    }
}

/// Sample one transform draw for images of spatial size (h, w).
pub fn sample_draw(policy: &AugmentPolicy, h: usize, w: usize, seed: u64) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = AugmentDraw::identity();
    if rng.gen::<f64>() < policy.apply_prob && policy.brightness > 0.0 {
        draw.brightness = Some(rng.gen_range(-policy.brightness..=policy.brightness));
    }
    if rng.gen::<f64>() < policy.apply_prob && policy.saturation_min < policy.saturation_max {
        draw.saturation = Some(rng.gen_range(policy.saturation_min..=policy.saturation_max));
    }
    if rng.gen::<f64>() < policy.apply_prob && policy.contrast_min < policy.contrast_max {
        draw.contrast = Some(rng.gen_range(policy.contrast_min..=policy.contrast_max));
    }
    if rng.gen::<f64>() < policy.apply_prob && policy.translate_frac > 0.0 {
        let tx = (policy.translate_frac * w as f64).round() as isize;
        let ty = (policy.translate_frac * h as f64).round() as isize;
        draw.translate = Some((rng.gen_range(-tx..=tx), rng.gen_range(-ty..=ty)));
    }
    if rng.gen::<f64>() < policy.apply_prob && policy.cutout_frac > 0.0 {
        let side = ((policy.cutout_frac * h.min(w) as f64).round() as usize).max(1);
        let top = rng.gen_range(0..=(h - side.min(h)));
        let left = rng.gen_range(0..=(w - side.min(w)));
        draw.cutout = Some((top, left, side));
    }
    draw
}

/// Apply a draw to one tensor.
pub fn apply_draw<F: Scalar>(x: &Var<F>, draw: &AugmentDraw) -> Var<F> {
    if draw.is_identity() {
        return x.clone();
    }
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let mut out = x.clone();
    if let Some(b) = draw.brightness {
        out = out.add_scalar(F::c(b));
    }
    if let Some(sat) = draw.saturation {
        // gray + s * (x - gray), gray = per-pixel channel mean
        let gray = out.mean_axes_keep(&[1]);
        out = out.sub_b(&gray).mul_scalar(F::c(sat)).add_b(&gray);
    }
    if let Some(con) = draw.contrast {
        // mean + c * (x - mean), mean per image over C,H,W
        let mean = out.mean_axes_keep(&[1, 2, 3]);
        out = out.sub_b(&mean).mul_scalar(F::c(con)).add_b(&mean);
    }
    if let Some((dx, dy)) = draw.translate {
        out = out.shift2d(dx, dy);
    }
    if let Some((top, left, side)) = draw.cutout {
        let mut mask = ArrayD::<F>::ones(IxDyn(&[1, 1, h, w]));
        for y in top..(top + side).min(h) {
            for xx in left..(left + side).min(w) {
                mask[[0, 0, y, xx]] = F::zero();
            }
        }
        out = out.mul_b(&Var::leaf(mask));
    }
    out
}

/// Augment real and fake batches with the identical seeded draw.
pub fn diff_augment<F: Scalar>(
    real: &Var<F>,
    fake: &Var<F>,
    policy: &AugmentPolicy,
    seed: u64,
) -> (Var<F>, Var<F>) {
    assert_eq!(real.shape(), fake.shape(), "diff_augment shape mismatch");
    let s = real.shape();
    let draw = sample_draw(policy, s[2], s[3], seed);
    (apply_draw(real, &draw), apply_draw(fake, &draw))
}
