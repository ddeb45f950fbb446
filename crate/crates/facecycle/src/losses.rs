//! Objective terms and their weighted aggregation.
//!
//! Adversarial terms use the non-saturating logistic form by default; the
//! saturating minimax surrogate stays available behind [`GanLossKind`] for
//! ablations. Every loss is a pure function of explicit inputs (plus a
//! sampler seed for the contrastive term), so tests can drive them directly.

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet};
use crate::tensor::{Scalar, Var};
use crate::types::LossReport;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn default_cyc() -> f64 {
    10.0
}
fn default_id() -> f64 {
    1.0
}
fn default_perc() -> f64 {
    0.5
}
fn default_sem() -> f64 {
    2.0
}
fn default_lmk() -> f64 {
    1.0
}
fn default_con() -> f64 {
    0.5
}
fn default_paired() -> f64 {
    10.0
}

/// Weights of the guidance terms in the generator total.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_perc: f64,
    pub lambda_sem: f64,
    pub lambda_lmk: f64,
    pub lambda_con: f64,
    pub lambda_paired: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cyc: default_cyc(),
            lambda_id: default_id(),
            lambda_perc: default_perc(),
            lambda_sem: default_sem(),
            lambda_lmk: default_lmk(),
            lambda_con: default_con(),
            lambda_paired: default_paired(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
            ("lambda_perc", self.lambda_perc),
            ("lambda_sem", self.lambda_sem),
            ("lambda_lmk", self.lambda_lmk),
            ("lambda_con", self.lambda_con),
            ("lambda_paired", self.lambda_paired),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Adversarial surrogate family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLossKind {
    NonSaturating,
    Saturating,
}

impl Default for GanLossKind {
    fn default() -> Self {
        GanLossKind::NonSaturating
    }
}

fn check_finite<F: Scalar>(maps: &[Var<F>], what: &str) -> Result<()> {
    for (i, m) in maps.iter().enumerate() {
        if m.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what}: non-finite logits at scale {i}"
            )));
        }
    }
    Ok(())
}

/// Discriminator loss: mean over scales and positions of
/// softplus(-real) + softplus(fake).
pub fn adv_d_loss<F: Scalar>(real_logits: &[Var<F>], fake_logits: &[Var<F>]) -> Result<Var<F>> {
    if real_logits.len() != fake_logits.len() || real_logits.is_empty() {
        return Err(Error::Shape("adv_d_loss: scale count mismatch".into()));
    }
    check_finite(real_logits, "adv_d_loss real")?;
    check_finite(fake_logits, "adv_d_loss fake")?;
    let mut acc: Option<Var<F>> = None;
    for (r, f) in real_logits.iter().zip(fake_logits) {
        let term = r.neg().softplus().mean_all().add(&f.softplus().mean_all());
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    Ok(acc.unwrap().mul_scalar(F::one() / F::c(real_logits.len() as f64)))
}

/// Generator adversarial loss over the fake logit maps.
pub fn adv_g_loss<F: Scalar>(fake_logits: &[Var<F>], kind: GanLossKind) -> Result<Var<F>> {
    if fake_logits.is_empty() {
        return Err(Error::Shape("adv_g_loss: no logit maps".into()));
    }
    check_finite(fake_logits, "adv_g_loss")?;
    let mut acc: Option<Var<F>> = None;
    for f in fake_logits {
        let term = match kind {
            GanLossKind::NonSaturating => f.neg().softplus().mean_all(),
            // minimize E[log(1 - D(fake))] = -softplus(fake)
            GanLossKind::Saturating => f.softplus().mean_all().neg(),
        };
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    Ok(acc.unwrap().mul_scalar(F::one() / F::c(fake_logits.len() as f64)))
}

/// L1 cycle-reconstruction penalty, both directions.
pub fn cycle_loss<F: Scalar>(
    x: &Var<F>,
    x_rec: &Var<F>,
    y: &Var<F>,
    y_rec: &Var<F>,
) -> Result<Var<F>> {
    if x.shape() != x_rec.shape() || y.shape() != y_rec.shape() {
        return Err(Error::Shape("cycle_loss shape mismatch".into()));
    }
    Ok(x_rec
        .sub(x)
        .abs()
        .mean_all()
        .add(&y_rec.sub(y).abs().mean_all()))
}

fn row_norms_ok<F: Scalar>(e: &Var<F>) -> Result<()> {
    let d = e.data();
    for row in d.rows() {
        let n: F = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b);
        if n == F::zero() {
            return Err(Error::Numeric("degenerate embedding".into()));
        }
    }
    Ok(())
}

/// Embedding identity loss: mean(1 - cos(e_gx, e_x)) + mean(1 - cos(e_gy, e_y)).
/// Inputs are unit-norm [N, D] embeddings, so cosine reduces to a row dot.
pub fn identity_loss<F: Scalar>(
    e_x: &Var<F>,
    e_gx: &Var<F>,
    e_y: &Var<F>,
    e_gy: &Var<F>,
) -> Result<Var<F>> {
    for e in [e_x, e_gx, e_y, e_gy] {
        row_norms_ok(e)?;
    }
    let dir = |a: &Var<F>, b: &Var<F>| -> Var<F> {
        let cos = a.mul(b).sum_axes_keep(&[1]);
        cos.neg().add_scalar(F::one()).mean_all()
    };
    Ok(dir(e_gx, e_x).add(&dir(e_gy, e_y)))
}

/// Feature-space L1 against pseudo-pair targets, summed over taps.
pub fn perceptual_loss<F: Scalar>(
    feat_gx: &[Var<F>],
    feat_ystar: &[Var<F>],
    feat_gy: &[Var<F>],
    feat_xstar: &[Var<F>],
) -> Result<Var<F>> {
    if feat_gx.len() != feat_ystar.len() || feat_gy.len() != feat_xstar.len() {
        return Err(Error::Shape("perceptual_loss tap count mismatch".into()));
    }
    let mut acc: Option<Var<F>> = None;
    for (a, b) in feat_gx.iter().zip(feat_ystar).chain(feat_gy.iter().zip(feat_xstar)) {
        if a.shape() != b.shape() {
            return Err(Error::Shape("perceptual_loss tap shape mismatch".into()));
        }
        let term = a.sub(b).abs().mean_all();
        acc = Some(match acc {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Shape("perceptual_loss: no taps".into()))
}

/// Mask-weighted cycle penalty; masks are [N, 1, H, W] constants broadcast
/// over channels.
pub fn semantic_cycle_loss<F: Scalar>(
    x: &Var<F>,
    x_rec: &Var<F>,
    mask_x: &Var<F>,
    y: &Var<F>,
    y_rec: &Var<F>,
    mask_y: &Var<F>,
) -> Result<Var<F>> {
    let check = |img: &Var<F>, m: &Var<F>| -> Result<()> {
        let (is_, ms) = (img.shape(), m.shape());
        if ms.len() != 4 || ms[1] != 1 || ms[2] != is_[2] || ms[3] != is_[3] || ms[0] != is_[0] {
            return Err(Error::Shape(format!(
                "semantic mask shape {ms:?} incompatible with image {is_:?}"
            )));
        }
        Ok(())
    };
    check(x, mask_x)?;
    check(y, mask_y)?;
    let dir = |orig: &Var<F>, rec: &Var<F>, m: &Var<F>| -> Var<F> {
        rec.sub(orig).mul_b(m).abs().mean_all()
    };
    Ok(dir(x, x_rec, mask_x).add(&dir(y, y_rec, mask_y)))
}

/// One direction of the landmark penalty: per-image Frobenius norm of the
/// K x 2 difference, averaged over the batch. Tensors are [N, K, 2].
pub fn landmark_loss_single<F: Scalar>(l_src: &Var<F>, l_gen: &Var<F>) -> Result<Var<F>> {
    if l_src.shape() != l_gen.shape() {
        return Err(Error::Shape(format!(
            "landmark_loss K mismatch: {:?} vs {:?}",
            l_src.shape(),
            l_gen.shape()
        )));
    }
    // tiny floor keeps the norm differentiable at exact equality
    Ok(l_gen
        .sub(l_src)
        .square()
        .sum_axes_keep(&[1, 2])
        .add_scalar(F::c(1e-24))
        .sqrt()
        .mean_all())
}

/// Geometric consistency of landmarks, both directions.
pub fn landmark_loss<F: Scalar>(
    l_x: &Var<F>,
    l_gx: &Var<F>,
    l_y: &Var<F>,
    l_gy: &Var<F>,
) -> Result<Var<F>> {
    Ok(landmark_loss_single(l_x, l_gx)?.add(&landmark_loss_single(l_y, l_gy)?))
}

fn default_n_patches() -> usize {
    256
}
fn default_tap_scales() -> Vec<usize> {
    vec![4, 8]
}
fn default_tau() -> f64 {
    0.07
}
fn default_projection_dim() -> usize {
    256
}

/// Sampling/projection parameters of the patch-contrastive term.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSampleSpec {
    pub n_patches: usize,
    /// Tap scale denominators, matching the generator's encoder taps.
    pub tap_scales: Vec<usize>,
    pub temperature: f64,
    pub projection_dim: usize,
    /// Extend negatives across the batch (default: within-image only).
    pub negatives_batchwide: bool,
}

impl Default for PatchSampleSpec {
    fn default() -> Self {
        PatchSampleSpec {
            n_patches: default_n_patches(),
            tap_scales: default_tap_scales(),
            temperature: default_tau(),
            projection_dim: default_projection_dim(),
            negatives_batchwide: false,
        }
    }
}

impl PatchSampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patches == 0 {
            return Err(Error::Config("n_patches must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Jointly trained two-layer projection head, one per tap.
pub struct ProjectionHead<F: Scalar> {
    pub l1: Linear<F>,
    pub l2: Linear<F>,
}

impl<F: Scalar> ProjectionHead<F> {
    pub fn new(in_dim: usize, proj_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ProjectionHead {
            l1: Linear::new(in_dim, proj_dim, rng),
            l2: Linear::new(proj_dim, proj_dim, rng),
        }
    }

    pub fn forward(&self, x: &Var<F>) -> Var<F> {
        let h = self.l1.forward(x).relu();
        let p = self.l2.forward(&h);
        let norm = p.square().sum_axes_keep(&[1]).add_scalar(F::c(1e-12)).sqrt();
        p.div_b(&norm)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.l1.params(&format!("{prefix}.l1"), out);
        self.l2.params(&format!("{prefix}.l2"), out);
    }
}

/// Seeded spatial positions, without replacement, per image and tap.
pub fn sample_patch_indices(
    n: usize,
    h: usize,
    w: usize,
    n_patches: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let total = h * w;
    if n_patches > total {
        return Err(Error::Config(format!(
            "n_patches {n_patches} exceeds available locations {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pos: Vec<usize> = (0..total).collect();
        pos.shuffle(&mut rng);
        pos.truncate(n_patches);
        all.push(pos);
    }
    Ok(all)
}

/// Patchwise InfoNCE between source and output encoder features.
///
/// For each sampled location the positive is the same location in the other
/// map; negatives are the other sampled locations of the same image (or of
/// the whole batch with `negatives_batchwide`). Heads are per tap and
/// trained jointly.
pub fn patch_nce_loss<F: Scalar>(
    feat_src: &[Var<F>],
    feat_out: &[Var<F>],
    spec: &PatchSampleSpec,
    heads: &[ProjectionHead<F>],
    sampler_seed: u64,
) -> Result<Var<F>> {
    spec.validate()?;
    if feat_src.len() != feat_out.len() || feat_src.len() != heads.len() {
        return Err(Error::Shape(format!(
            "patch_nce_loss: {} src taps, {} out taps, {} heads",
            feat_src.len(),
            feat_out.len(),
            heads.len()
        )));
    }
    let inv_tau = F::c(1.0 / spec.temperature);
    let mut tap_losses: Vec<Var<F>> = Vec::new();
    for (t, ((fs, fo), head)) in feat_src.iter().zip(feat_out).zip(heads).enumerate() {
        if fs.shape() != fo.shape() {
            return Err(Error::Shape("patch_nce_loss tap shape mismatch".into()));
        }
        let (n, c, h, w) = (fs.shape()[0], fs.shape()[1], fs.shape()[2], fs.shape()[3]);
        let idx = sample_patch_indices(n, h, w, spec.n_patches, sampler_seed.wrapping_add(t as u64))?;
        let p = spec.n_patches;
        let src = fs.gather_spatial(&idx).reshape(&[n * p, c]);
        let out = fo.gather_spatial(&idx).reshape(&[n * p, c]);
        let src_p = head.forward(&src); // [n*p, D], unit rows
        let out_p = head.forward(&out);
        let mut img_losses: Vec<Var<F>> = Vec::new();
        if spec.negatives_batchwide {
            let logits = src_p.matmul(&out_p.transpose2()).mul_scalar(inv_tau); // [n*p, n*p]
            let lse = logits.logsumexp_lastdim_keep().reshape(&[n * p]);
            let diag: Vec<usize> = (0..n * p).collect();
            let pos = logits.gather_rows(&diag);
            img_losses.push(lse.sub(&pos).mean_all());
        } else {
            for i in 0..n {
                let s_i = src_p.narrow(0, i * p, p);
                let o_i = out_p.narrow(0, i * p, p);
                let logits = s_i.matmul(&o_i.transpose2()).mul_scalar(inv_tau); // [p, p]
                let lse = logits.logsumexp_lastdim_keep().reshape(&[p]);
                let diag: Vec<usize> = (0..p).collect();
                let pos = logits.gather_rows(&diag);
                img_losses.push(lse.sub(&pos).mean_all());
            }
        }
        let mut acc = img_losses[0].clone();
        for l in &img_losses[1..] {
            acc = acc.add(l);
        }
        tap_losses.push(acc.mul_scalar(F::one() / F::c(img_losses.len() as f64)));
    }
    let mut acc = tap_losses[0].clone();
    for l in &tap_losses[1..] {
        acc = acc.add(l);
    }
    Ok(acc.mul_scalar(F::one() / F::c(tap_losses.len() as f64)))
}

/// Generator-side loss terms of one step. Adversarial terms are mandatory;
/// guidance terms may be absent only when their weight is zero.
pub struct GeneratorLossTerms<F: Scalar> {
    pub gan_g_xy: Var<F>,
    pub gan_g_yx: Var<F>,
    pub cyc: Option<Var<F>>,
    pub id: Option<Var<F>>,
    pub perc: Option<Var<F>>,
    pub sem_cyc: Option<Var<F>>,
    pub lmk: Option<Var<F>>,
    pub con: Option<Var<F>>,
    pub paired: Option<Var<F>>,
}

/// Weighted sum of the generator objective; returns the scalar graph node
/// plus a float report carrying every component.
pub fn total_generator_loss<F: Scalar>(
    terms: &GeneratorLossTerms<F>,
    weights: &LossWeights,
) -> Result<(Var<F>, LossReport)> {
    weights.validate()?;
    let mut total = terms.gan_g_xy.add(&terms.gan_g_yx);
    let mut components = BTreeMap::new();
    let mut wmap = BTreeMap::new();
    components.insert("gan_G_xy".to_string(), terms.gan_g_xy.item().f64());
    components.insert("gan_G_yx".to_string(), terms.gan_g_yx.item().f64());
    wmap.insert("gan_G_xy".to_string(), 1.0);
    wmap.insert("gan_G_yx".to_string(), 1.0);

    let mut apply = |name: &str,
                     term: &Option<Var<F>>,
                     weight: f64,
                     total: &mut Var<F>|
     -> Result<()> {
        wmap.insert(name.to_string(), weight);
        match term {
            Some(v) => {
                components.insert(name.to_string(), v.item().f64());
                if weight != 0.0 {
                    *total = total.add(&v.mul_scalar(F::c(weight)));
                }
            }
            None => {
                if weight != 0.0 {
                    return Err(Error::Config(format!(
                        "loss component '{name}' missing but weight {weight} is nonzero"
                    )));
                }
                components.insert(name.to_string(), 0.0);
            }
        }
        Ok(())
    };
    apply("cyc", &terms.cyc, weights.lambda_cyc, &mut total)?;
    apply("id", &terms.id, weights.lambda_id, &mut total)?;
    apply("perc", &terms.perc, weights.lambda_perc, &mut total)?;
    apply("sem_cyc", &terms.sem_cyc, weights.lambda_sem, &mut total)?;
    apply("lmk", &terms.lmk, weights.lambda_lmk, &mut total)?;
    apply("con", &terms.con, weights.lambda_con, &mut total)?;
    apply("paired", &terms.paired, weights.lambda_paired, &mut total)?;

    let report = LossReport {
        total: total.item().f64(),
        components,
        weights: wmap,
    };
    report.validate()?;
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_grads;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> ArrayD<f64> {
        let mut a = randn(&[n, d], seed);
        for mut row in a.rows_mut() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        a
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn adv_losses_trivial_values() {
        let zeros = vec![Var::leaf(ArrayD::<f64>::zeros(IxDyn(&[1, 1, 2, 2])))];
        let d = adv_d_loss(&zeros, &zeros).unwrap().item();
        assert!((d - 2.0 * LN2).abs() < 1e-12);
        let g = adv_g_loss(&zeros, GanLossKind::NonSaturating).unwrap().item();
        assert!((g - LN2).abs() < 1e-12);
        // perfect discriminator: real -> +inf, fake -> -inf gives loss -> 0
        let big = vec![Var::leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 40.0))];
        let small = vec![Var::leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), -40.0))];
        assert!(adv_d_loss(&big, &small).unwrap().item() < 1e-12);
        // fooled discriminator: fake -> +inf gives generator loss -> 0
        assert!(adv_g_loss(&big, GanLossKind::NonSaturating).unwrap().item() < 1e-12);
    }

    #[test]
    fn adv_losses_match_scalar_formula_oracle() {
        let r = randn(&[1, 1, 2, 2], 1);
        let f = randn(&[1, 1, 2, 2], 2);
        let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let mut expect_d = 0.0;
        let mut expect_g = 0.0;
        for (&rv, &fv) in r.iter().zip(f.iter()) {
            expect_d += softplus(-rv) / 4.0 + softplus(fv) / 4.0;
            expect_g += softplus(-fv) / 4.0;
        }
        let d = adv_d_loss(&[Var::leaf(r.clone())], &[Var::leaf(f.clone())]).unwrap().item();
        let g = adv_g_loss(&[Var::leaf(f)], GanLossKind::NonSaturating).unwrap().item();
        assert!((d - expect_d).abs() < 1e-12);
        assert!((g - expect_g).abs() < 1e-12);
    }

    #[test]
    fn adv_loss_rejects_non_finite() {
        let bad = vec![Var::leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), f64::NAN))];
        let ok = vec![Var::leaf(ArrayD::zeros(IxDyn(&[1, 1, 1, 1])))];
        let err = adv_d_loss(&ok, &bad).unwrap_err();
        assert!(err.to_string().contains("scale 0"));
    }

    #[test]
    fn cycle_loss_cases_and_oracle() {
        let x = randn(&[2, 3, 4, 4], 3);
        let y = randn(&[2, 3, 4, 4], 4);
        let zero = cycle_loss(
            &Var::leaf(x.clone()),
            &Var::leaf(x.clone()),
            &Var::leaf(y.clone()),
            &Var::leaf(y.clone()),
        )
        .unwrap()
        .item();
        assert_eq!(zero, 0.0);
        // constant offset
        let x0 = ArrayD::<f64>::zeros(IxDyn(&[1, 1, 2, 2]));
        let xr = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5);
        let c = cycle_loss(
            &Var::leaf(x0.clone()),
            &Var::leaf(xr),
            &Var::leaf(x0.clone()),
            &Var::leaf(x0.clone()),
        )
        .unwrap()
        .item();
        assert!((c - 0.5).abs() < 1e-15);
        // random oracle
        let xr = randn(&[2, 3, 4, 4], 5);
        let yr = randn(&[2, 3, 4, 4], 6);
        let got = cycle_loss(
            &Var::leaf(x.clone()),
            &Var::leaf(xr.clone()),
            &Var::leaf(y.clone()),
            &Var::leaf(yr.clone()),
        )
        .unwrap()
        .item();
        let n = x.len() as f64;
        let expect: f64 = x.iter().zip(xr.iter()).map(|(a, b)| (b - a).abs()).sum::<f64>() / n
            + y.iter().zip(yr.iter()).map(|(a, b)| (b - a).abs()).sum::<f64>() / n;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn identity_loss_trivial_anchors() {
        let e = unit_rows(3, 8, 7);
        let zero = identity_loss(
            &Var::leaf(e.clone()),
            &Var::leaf(e.clone()),
            &Var::leaf(e.clone()),
            &Var::leaf(e.clone()),
        )
        .unwrap()
        .item();
        assert!(zero.abs() < 1e-12);
        // orthogonal pairs give 1 + 1 = 2
        let a = ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0_f64, 0.0]).unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![0.0, 1.0]).unwrap();
        let two = identity_loss(
            &Var::leaf(a.clone()),
            &Var::leaf(b.clone()),
            &Var::leaf(a.clone()),
            &Var::leaf(b.clone()),
        )
        .unwrap()
        .item();
        assert!((two - 2.0).abs() < 1e-12);
        // antipodal pairs give 2 + 2 = 4
        let na = a.mapv(|v| -v);
        let four = identity_loss(
            &Var::leaf(a.clone()),
            &Var::leaf(na.clone()),
            &Var::leaf(a),
            &Var::leaf(na),
        )
        .unwrap()
        .item();
        assert!((four - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_loss_rejects_zero_norm() {
        let e = unit_rows(2, 4, 8);
        let z = ArrayD::<f64>::zeros(IxDyn(&[2, 4]));
        assert!(identity_loss(&Var::leaf(z), &Var::leaf(e.clone()), &Var::leaf(e.clone()), &Var::leaf(e)).is_err());
    }

    #[test]
    fn perceptual_loss_cases() {
        let a = randn(&[1, 4, 4, 4], 9);
        let b = randn(&[1, 8, 2, 2], 10);
        let zero = perceptual_loss(
            &[Var::leaf(a.clone()), Var::leaf(b.clone())],
            &[Var::leaf(a.clone()), Var::leaf(b.clone())],
            &[Var::leaf(a.clone())],
            &[Var::leaf(a.clone())],
        )
        .unwrap()
        .item();
        assert_eq!(zero, 0.0);
        // single tap constant difference 0.3 in one direction only
        let c0 = ArrayD::<f64>::zeros(IxDyn(&[1, 2, 2, 2]));
        let c3 = ArrayD::from_elem(IxDyn(&[1, 2, 2, 2]), 0.3);
        let v = perceptual_loss(
            &[Var::leaf(c0.clone())],
            &[Var::leaf(c3)],
            &[Var::leaf(c0.clone())],
            &[Var::leaf(c0)],
        )
        .unwrap()
        .item();
        assert!((v - 0.3).abs() < 1e-15);
        // tap count mismatch errors
        assert!(perceptual_loss(&[Var::leaf(a.clone())], &[], &[], &[]).is_err());
    }

    #[test]
    fn semantic_cycle_matches_cycle_with_unit_masks_bitwise() {
        let x = randn(&[2, 3, 4, 4], 11);
        let xr = randn(&[2, 3, 4, 4], 12);
        let y = randn(&[2, 3, 4, 4], 13);
        let yr = randn(&[2, 3, 4, 4], 14);
        let ones = ArrayD::<f64>::ones(IxDyn(&[2, 1, 4, 4]));
        let sem = semantic_cycle_loss(
            &Var::leaf(x.clone()),
            &Var::leaf(xr.clone()),
            &Var::leaf(ones.clone()),
            &Var::leaf(y.clone()),
            &Var::leaf(yr.clone()),
            &Var::leaf(ones.clone()),
        )
        .unwrap()
        .item();
        let cyc = cycle_loss(&Var::leaf(x.clone()), &Var::leaf(xr.clone()), &Var::leaf(y.clone()), &Var::leaf(yr.clone()))
            .unwrap()
            .item();
        assert_eq!(sem.to_bits(), cyc.to_bits());
        // all-zero masks annihilate
        let zeros = ArrayD::<f64>::zeros(IxDyn(&[2, 1, 4, 4]));
        let z = semantic_cycle_loss(
            &Var::leaf(x.clone()),
            &Var::leaf(xr.clone()),
            &Var::leaf(zeros.clone()),
            &Var::leaf(y),
            &Var::leaf(yr),
            &Var::leaf(zeros),
        )
        .unwrap()
        .item();
        assert_eq!(z, 0.0);
        // random-mask oracle
        let m = randn(&[2, 1, 4, 4], 15).mapv(|v| v.abs().min(1.0));
        let got = semantic_cycle_loss(
            &Var::leaf(x.clone()),
            &Var::leaf(xr.clone()),
            &Var::leaf(m.clone()),
            &Var::leaf(x.clone()),
            &Var::leaf(x.clone()),
            &Var::leaf(m.clone()),
        )
        .unwrap()
        .item();
        let mut expect = 0.0;
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        expect += (m[[n, 0, i, j]] * (xr[[n, c, i, j]] - x[[n, c, i, j]])).abs();
                    }
                }
            }
        }
        expect /= 96.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn landmark_loss_pythagorean_case() {
        let l = randn(&[1, 4, 2], 16);
        let zero = landmark_loss(
            &Var::leaf(l.clone()),
            &Var::leaf(l.clone()),
            &Var::leaf(l.clone()),
            &Var::leaf(l.clone()),
        )
        .unwrap()
        .item();
        assert!(zero < 1e-9);
        // all 4 landmarks shifted by (3, 4): frobenius = sqrt(4 * 25) = 10
        let mut shifted = l.clone();
        for k in 0..4 {
            shifted[[0, k, 0]] += 3.0;
            shifted[[0, k, 1]] += 4.0;
        }
        let ten = landmark_loss(
            &Var::leaf(l.clone()),
            &Var::leaf(shifted),
            &Var::leaf(l.clone()),
            &Var::leaf(l.clone()),
        )
        .unwrap()
        .item();
        assert!((ten - 10.0).abs() < 1e-9);
        // K mismatch
        let l3 = randn(&[1, 3, 2], 17);
        assert!(landmark_loss(&Var::leaf(l3), &Var::leaf(l.clone()), &Var::leaf(l.clone()), &Var::leaf(l)).is_err());
    }

    #[test]
    fn nce_single_patch_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = PatchSampleSpec {
            n_patches: 1,
            projection_dim: 8,
            ..Default::default()
        };
        let heads = vec![ProjectionHead::<f64>::new(4, 8, &mut rng)];
        let fs = randn(&[2, 4, 4, 4], 18);
        let fo = randn(&[2, 4, 4, 4], 19);
        let v = patch_nce_loss(&[Var::leaf(fs)], &[Var::leaf(fo)], &spec, &heads, 1)
            .unwrap()
            .item();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn nce_closed_form_two_patches() {
        // logits built directly: positive similarity 1, negative 0, tau = 1
        // loss per anchor = -log(e / (e + 1))
        let logits = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Var::leaf(logits);
        let lse = v.logsumexp_lastdim_keep().reshape(&[2]);
        let pos = v.gather_rows(&[0, 1]);
        let loss = lse.sub(&pos).mean_all().item();
        let expect = -(1.0f64.exp() / (1.0f64.exp() + 1.0)).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn nce_matches_dense_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = PatchSampleSpec {
            n_patches: 16,
            temperature: 0.2,
            projection_dim: 8,
            ..Default::default()
        };
        let heads = vec![ProjectionHead::<f64>::new(3, 8, &mut rng)];
        let fs = randn(&[1, 3, 5, 5], 20);
        let fo = randn(&[1, 3, 5, 5], 21);
        let got = patch_nce_loss(
            &[Var::leaf(fs.clone())],
            &[Var::leaf(fo.clone())],
            &spec,
            &heads,
            7,
        )
        .unwrap()
        .item();
        // oracle: rebuild the 16x16 similarity matrix with the same sampling
        // and head, evaluate dense cross-entropy row by row
        let idx = sample_patch_indices(1, 5, 5, 16, 7).unwrap();
        let gather = |m: &ArrayD<f64>| -> Vec<Vec<f64>> {
            idx[0]
                .iter()
                .map(|&lin| {
                    let (h, w) = (lin / 5, lin % 5);
                    (0..3).map(|c| m[[0, c, h, w]]).collect()
                })
                .collect()
        };
        let project = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let arr = ArrayD::from_shape_vec(
                IxDyn(&[rows.len(), 3]),
                rows.iter().flatten().cloned().collect(),
            )
            .unwrap();
            let out = heads[0].forward(&Var::leaf(arr)).to_array();
            (0..rows.len())
                .map(|i| (0..8).map(|d| out[[i, d]]).collect())
                .collect()
        };
        let sp = project(gather(&fs));
        let op = project(gather(&fo));
        let mut expect = 0.0;
        for i in 0..16 {
            let mut denom = 0.0;
            let mut pos = 0.0;
            for j in 0..16 {
                let sim: f64 = sp[i].iter().zip(&op[j]).map(|(a, b)| a * b).sum();
                let e = (sim / 0.2).exp();
                denom += e;
                if i == j {
                    pos = e;
                }
            }
            expect += -(pos / denom).ln();
        }
        expect /= 16.0;
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn nce_rejects_oversampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PatchSampleSpec {
            n_patches: 64,
            projection_dim: 8,
            ..Default::default()
        };
        let heads = vec![ProjectionHead::<f64>::new(3, 8, &mut rng)];
        let fs = randn(&[1, 3, 4, 4], 22);
        let err = patch_nce_loss(&[Var::leaf(fs.clone())], &[Var::leaf(fs)], &spec, &heads, 0)
            .unwrap_err();
        assert!(err.to_string().contains("16"));
    }

    #[test]
    fn total_loss_weighted_sum() {
        let s = |v: f64| Var::leaf(ArrayD::from_elem(IxDyn(&[]), v));
        let ln2 = LN2;
        // all guidance zero, gan terms ln 2 each
        let terms = GeneratorLossTerms {
            gan_g_xy: s(ln2),
            gan_g_yx: s(ln2),
            cyc: Some(s(0.0)),
            id: Some(s(0.0)),
            perc: Some(s(0.0)),
            sem_cyc: Some(s(0.0)),
            lmk: Some(s(0.0)),
            con: Some(s(0.0)),
            paired: None,
        };
        let mut w = LossWeights::default();
        w.lambda_paired = 0.0;
        let (total, report) = total_generator_loss(&terms, &w).unwrap();
        assert!((total.item() - 2.0 * ln2).abs() < 1e-12);
        assert_eq!(report.components.len(), 9);
        // unit components with paper weights: 2 gan + 10 + 1 + 0.5 + 2 + 1 + 0.5
        let terms = GeneratorLossTerms {
            gan_g_xy: s(1.0),
            gan_g_yx: s(1.0),
            cyc: Some(s(1.0)),
            id: Some(s(1.0)),
            perc: Some(s(1.0)),
            sem_cyc: Some(s(1.0)),
            lmk: Some(s(1.0)),
            con: Some(s(1.0)),
            paired: None,
        };
        let (total, _) = total_generator_loss(&terms, &w).unwrap();
        assert!((total.item() - (2.0 + 15.0)).abs() < 1e-12);
        // missing component with nonzero weight errors
        let terms = GeneratorLossTerms {
            gan_g_xy: s(1.0),
            gan_g_yx: s(1.0),
            cyc: None,
            id: Some(s(0.0)),
            perc: Some(s(0.0)),
            sem_cyc: Some(s(0.0)),
            lmk: Some(s(0.0)),
            con: Some(s(0.0)),
            paired: None,
        };
        assert!(total_generator_loss(&terms, &w).is_err());
        // random weighted-sum oracle
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let w2 = LossWeights {
            lambda_cyc: rng.gen_range(0.0..10.0),
            lambda_id: rng.gen_range(0.0..2.0),
            lambda_perc: rng.gen_range(0.0..2.0),
            lambda_sem: rng.gen_range(0.0..3.0),
            lambda_lmk: rng.gen_range(0.0..2.0),
            lambda_con: rng.gen_range(0.0..1.0),
            lambda_paired: 0.0,
        };
        let terms = GeneratorLossTerms {
            gan_g_xy: s(vals[0]),
            gan_g_yx: s(vals[1]),
            cyc: Some(s(vals[2])),
            id: Some(s(vals[3])),
            perc: Some(s(vals[4])),
            sem_cyc: Some(s(vals[5])),
            lmk: Some(s(vals[6])),
            con: Some(s(vals[7])),
            paired: None,
        };
        let (total, report) = total_generator_loss(&terms, &w2).unwrap();
        let expect = vals[0]
            + vals[1]
            + w2.lambda_cyc * vals[2]
            + w2.lambda_id * vals[3]
            + w2.lambda_perc * vals[4]
            + w2.lambda_sem * vals[5]
            + w2.lambda_lmk * vals[6]
            + w2.lambda_con * vals[7];
        assert!((total.item() - expect).abs() < 1e-12);
        assert!((report.weighted_sum() - expect).abs() < 1e-12);
    }

    // --- gradient checks on miniature shapes (4x4 images, K = 3, N = 4 patches) ---

    #[test]
    fn grad_adv_losses() {
        let r = randn(&[1, 1, 3, 3], 30);
        let f = randn(&[1, 1, 3, 3], 31);
        check_grads(
            &[r, f],
            |v| adv_d_loss(&[v[0].clone()], &[v[1].clone()]).unwrap(),
            1e-4,
            1e-6,
        );
        let f = randn(&[1, 1, 3, 3], 32);
        check_grads(
            &[f],
            |v| adv_g_loss(&[v[0].clone()], GanLossKind::NonSaturating).unwrap(),
            1e-4,
            1e-6,
        );
    }

    #[test]
    fn grad_cycle_and_semantic() {
        let x = randn(&[1, 3, 4, 4], 33);
        let xr = randn(&[1, 3, 4, 4], 34);
        let y = randn(&[1, 3, 4, 4], 35);
        let yr = randn(&[1, 3, 4, 4], 36);
        check_grads(
            &[x.clone(), xr.clone(), y.clone(), yr.clone()],
            |v| cycle_loss(&v[0], &v[1], &v[2], &v[3]).unwrap(),
            1e-4,
            1e-5,
        );
        let m = randn(&[1, 1, 4, 4], 37).mapv(|v| v.abs().min(1.0));
        check_grads(
            &[x, xr, y, yr],
            move |v| {
                semantic_cycle_loss(&v[0], &v[1], &Var::leaf(m.clone()), &v[2], &v[3], &Var::leaf(m.clone()))
                    .unwrap()
            },
            1e-4,
            1e-5,
        );
    }

    #[test]
    fn grad_identity_loss() {
        let ex = unit_rows(2, 6, 38);
        let egx = unit_rows(2, 6, 39);
        let ey = unit_rows(2, 6, 40);
        let egy = unit_rows(2, 6, 41);
        check_grads(
            &[ex, egx, ey, egy],
            |v| identity_loss(&v[0], &v[1], &v[2], &v[3]).unwrap(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn grad_perceptual_loss() {
        let a = randn(&[1, 3, 4, 4], 42);
        let b = randn(&[1, 3, 4, 4], 43);
        let c = randn(&[1, 3, 4, 4], 44);
        let d = randn(&[1, 3, 4, 4], 45);
        check_grads(
            &[a, b, c, d],
            |v| {
                perceptual_loss(
                    &[v[0].clone()],
                    &[v[1].clone()],
                    &[v[2].clone()],
                    &[v[3].clone()],
                )
                .unwrap()
            },
            1e-4,
            1e-5,
        );
    }

    #[test]
    fn grad_landmark_loss() {
        let lx = randn(&[2, 3, 2], 46);
        let lgx = randn(&[2, 3, 2], 47);
        let ly = randn(&[2, 3, 2], 48);
        let lgy = randn(&[2, 3, 2], 49);
        check_grads(
            &[lx, lgx, ly, lgy],
            |v| landmark_loss(&v[0], &v[1], &v[2], &v[3]).unwrap(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn grad_patch_nce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = PatchSampleSpec {
            n_patches: 4,
            temperature: 0.5,
            projection_dim: 6,
            ..Default::default()
        };
        let heads = vec![ProjectionHead::<f64>::new(3, 6, &mut rng)];
        let fs = randn(&[1, 3, 4, 4], 50);
        let fo = randn(&[1, 3, 4, 4], 51);
        check_grads(
            &[fs, fo],
            move |v| {
                patch_nce_loss(&[v[0].clone()], &[v[1].clone()], &spec, &heads, 3).unwrap()
            },
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn guidance_constants_receive_no_gradient() {
        // wiring probe: masks / source landmarks / pseudo-pair features enter
        // as constant leaves, so backward leaves their grads empty
        let x = Var::param(randn(&[1, 3, 4, 4], 52));
        let xr = Var::param(randn(&[1, 3, 4, 4], 53));
        let mask = Var::leaf(randn(&[1, 1, 4, 4], 54).mapv(f64::abs));
        let loss = semantic_cycle_loss(&x, &xr, &mask, &x, &xr, &mask).unwrap();
        loss.backward();
        assert!(mask.grad().is_none());
        assert!(xr.grad().is_some());

        let l_src = Var::leaf(randn(&[1, 3, 2], 55));
        let l_gen = Var::param(randn(&[1, 3, 2], 56));
        let loss = landmark_loss(&l_src, &l_gen, &l_src, &l_gen).unwrap();
        loss.backward();
        assert!(l_src.grad().is_none());
        assert!(l_gen.grad().is_some());
    }
}
