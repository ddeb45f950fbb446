//! Frozen feature providers and cross-domain pseudo-pair retrieval.
//!
//! The identity encoder E and perceptual backbone Phi are seeded random
//! convolutional stacks standing in for pretrained face networks; the
//! interfaces accept real drop-ins with the same shape contracts. Weights
//! are constant leaves: gradients flow through the computation into the
//! input image but never into the encoders.

use crate::error::{Error, Result};
use crate::imgproc;
use crate::tensor::{Arr, NoGrad, Scalar, Var};
use crate::types::{LandmarkSet, ParsingMask};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    IdentityE,
    PerceptualPhi,
}

struct FrozenConv<F: Scalar> {
    w: Var<F>,
    b: Var<F>,
    stride: usize,
    pad: usize,
}

/// Seeded, frozen convolutional encoder.
pub struct FrozenEncoder<F: Scalar> {
    pub kind: EncoderKind,
    pub seed: u64,
    pub tap_layers: Vec<usize>,
    pub embed_dim: usize,
    convs: Vec<FrozenConv<F>>,
    head: Option<(Var<F>, Var<F>)>, // identity projection (w [D, C], b [D])
    calls: Cell<u64>,
}

fn frozen_init<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("normal");
    ArrayD::from_shape_fn(IxDyn(shape), |_| F::c(dist.sample(rng)))
}

impl<F: Scalar> FrozenEncoder<F> {
    /// Identity encoder: three stride-2 convs, global pooling, projection to
    /// `embed_dim`, L2 normalization.
    pub fn identity(seed: u64, embed_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3usize, 8usize), (8, 16), (16, 32)];
        let convs = plan
            .iter()
            .map(|&(cin, cout)| FrozenConv {
                w: Var::leaf(frozen_init(&[cout, cin, 3, 3], cin * 9, &mut rng)),
                b: Var::leaf(ArrayD::zeros(IxDyn(&[cout]))),
                stride: 2,
                pad: 1,
            })
            .collect();
        let head_w = Var::leaf(frozen_init(&[embed_dim, 32], 32, &mut rng));
        let head_b = Var::leaf(ArrayD::zeros(IxDyn(&[embed_dim])));
        FrozenEncoder {
            kind: EncoderKind::IdentityE,
            seed,
            tap_layers: vec![],
            embed_dim,
            convs,
            head: Some((head_w, head_b)),
            calls: Cell::new(0),
        }
    }

    /// Perceptual backbone with taps at strides 2 and 4.
    pub fn perceptual(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3usize, 16usize), (16, 32)];
        let convs = plan
            .iter()
            .map(|&(cin, cout)| FrozenConv {
                w: Var::leaf(frozen_init(&[cout, cin, 3, 3], cin * 9, &mut rng)),
                b: Var::leaf(ArrayD::zeros(IxDyn(&[cout]))),
                stride: 2,
                pad: 1,
            })
            .collect();
        FrozenEncoder {
            kind: EncoderKind::PerceptualPhi,
            seed,
            tap_layers: vec![0, 1],
            embed_dim: 0,
            convs,
            head: None,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn reset_calls(&self) {
        self.calls.set(0);
    }

    /// Fingerprint of the frozen weights (sum of all entries); the trainer
    /// asserts this never changes.
    pub fn weight_checksum(&self) -> f64 {
        let mut acc = 0.0;
        for c in &self.convs {
            acc += c.w.data().iter().map(|v| v.f64()).sum::<f64>();
            acc += c.b.data().iter().map(|v| v.f64()).sum::<f64>();
        }
        if let Some((w, b)) = &self.head {
            acc += w.data().iter().map(|v| v.f64()).sum::<f64>();
            acc += b.data().iter().map(|v| v.f64()).sum::<f64>();
        }
        acc
    }

    /// Unit-norm embedding per image: [N, 3, H, W] -> [N, D].
    pub fn embed_identity(&self, x: &Var<F>) -> Result<Var<F>> {
        if self.kind != EncoderKind::IdentityE {
            return Err(Error::Config("embed_identity requires the identity encoder".into()));
        }
        self.calls.set(self.calls.get() + 1);
        let mut h = x.clone();
        for conv in &self.convs {
            h = h.conv2d(&conv.w, Some(&conv.b), conv.stride, conv.pad).relu();
        }
        let pooled = h.mean_axes_keep(&[2, 3]);
        let n = pooled.shape()[0];
        let c = pooled.shape()[1];
        let flat = pooled.reshape(&[n, c]);
        let (w, b) = self.head.as_ref().expect("identity head");
        let emb = flat
            .matmul(&w.transpose2())
            .add_b(&b.reshape(&[1, self.embed_dim]));
        // L2 normalize rows
        let norm = emb.square().sum_axes_keep(&[1]).add_scalar(F::c(1e-12)).sqrt();
        Ok(emb.div_b(&norm))
    }

    /// Feature pyramid at the configured taps, strictly decreasing resolution.
    pub fn extract_features(&self, x: &Var<F>) -> Result<Vec<Var<F>>> {
        if self.kind != EncoderKind::PerceptualPhi {
            return Err(Error::Config("extract_features requires the perceptual encoder".into()));
        }
        self.calls.set(self.calls.get() + 1);
        for &t in &self.tap_layers {
            if t >= self.convs.len() {
                return Err(Error::Config(format!(
                    "tap index {t} out of range (backbone has {} layers)",
                    self.convs.len()
                )));
            }
        }
        let mut taps = Vec::new();
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = h.conv2d(&conv.w, Some(&conv.b), conv.stride, conv.pad).relu();
            if self.tap_layers.contains(&i) {
                taps.push(h.clone());
            }
        }
        Ok(taps)
    }

    /// Spatially average-pooled, tap-concatenated features: [N, sum(C_tap)].
    /// Used for retrieval and as the toy evaluation feature extractor.
    pub fn pooled_features(&self, x: &Arr<F>) -> Result<Array2<F>> {
        let _ng = NoGrad::new();
        let taps = self.extract_features(&Var::leaf(x.clone()))?;
        let n = x.shape()[0];
        let mut parts: Vec<Array2<F>> = Vec::new();
        for t in taps {
            let c = t.shape()[1];
            let pooled = t.mean_axes_keep(&[2, 3]).reshape(&[n, c]).to_array();
            parts.push(pooled.into_dimensionality::<ndarray::Ix2>().unwrap());
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(ndarray::Axis(1), &views)
            .map_err(|e| Error::Shape(format!("pooled feature concat: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMetric {
    Cosine,
    L2,
}

impl Default for RetrievalMetric {
    fn default() -> Self {
        RetrievalMetric::Cosine
    }
}

/// Nearest cross-domain neighbors in pooled Phi-space over the current
/// minibatches; no gradient flows through the retrieval. Ties break to the
/// lowest index.
pub fn retrieve_pseudo_pairs<F: Scalar>(
    batch_x: &Arr<F>,
    batch_y: &Arr<F>,
    encoder: &FrozenEncoder<F>,
    metric: RetrievalMetric,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if batch_x.shape()[0] == 0 || batch_y.shape()[0] == 0 {
        return Err(Error::Data("retrieve_pseudo_pairs: empty batch".into()));
    }
    let fx = encoder.pooled_features(batch_x)?;
    let fy = encoder.pooled_features(batch_y)?;
    Ok((nearest(&fx, &fy, metric), nearest(&fy, &fx, metric)))
}

fn nearest<F: Scalar>(from: &Array2<F>, to: &Array2<F>, metric: RetrievalMetric) -> Vec<usize> {
    let mut out = Vec::with_capacity(from.shape()[0]);
    for a in from.rows() {
        let mut best = 0usize;
        let mut best_score = F::neg_infinity();
        for (j, b) in to.rows().into_iter().enumerate() {
            let score = match metric {
                RetrievalMetric::Cosine => {
                    let mut dot = F::zero();
                    let mut na = F::zero();
                    let mut nb = F::zero();
                    for (&u, &v) in a.iter().zip(b.iter()) {
                        dot = dot + u * v;
                        na = na + u * u;
                        nb = nb + v * v;
                    }
                    dot / (na.sqrt() * nb.sqrt() + F::c(1e-12))
                }
                RetrievalMetric::L2 => {
                    let mut d = F::zero();
                    for (&u, &v) in a.iter().zip(b.iter()) {
                        d = d + (u - v) * (u - v);
                    }
                    -d
                }
            };
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        out.push(best);
    }
    out
}

/// Differentiable toy landmark detector: a soft-argmax of blurred darkness
/// under fixed spatial priors. Works for renderer-style faces where the eye,
/// nose and mouth strokes are the darkest content near their priors.
#[derive(Clone, Debug)]
pub struct LandmarkDetector {
    /// Prior centers in unit image coordinates (x, y), one per landmark.
    pub priors: Vec<(f64, f64)>,
    /// Prior sharpness as a fraction of the image side.
    pub prior_sigma: f64,
    /// Darkness sharpness for the soft-argmax.
    pub beta: f64,
}

impl Default for LandmarkDetector {
    fn default() -> Self {
        LandmarkDetector {
            priors: vec![
                (0.37, 0.42), // left eye
                (0.63, 0.42), // right eye
                (0.50, 0.57), // nose
                (0.40, 0.70), // left mouth corner
                (0.60, 0.70), // right mouth corner
            ],
            prior_sigma: 0.05,
            beta: 35.0,
        }
    }
}

impl LandmarkDetector {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    /// Detect landmarks on a [-1, 1] NCHW batch; returns [N, K, 2] pixel
    /// coordinates, differentiable w.r.t. the input image.
    pub fn detect<F: Scalar>(&self, x: &Var<F>) -> Result<Var<F>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("detect expects [N,3,H,W], got {s:?}")));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        let l = h * w;
        // fixed luminance projection; feature interiors keep full darkness
        let lum_w = Var::leaf(ArrayD::from_shape_vec(
            IxDyn(&[1, 3, 1, 1]),
            vec![F::c(0.299), F::c(0.587), F::c(0.114)],
        )
        .unwrap());
        let lum = x.conv2d(&lum_w, None, 1, 0);
        let darkness = lum.neg().reshape(&[n, l]).mul_scalar(F::c(self.beta));

        let side = h.min(w) as f64;
        let sigma_px = self.prior_sigma * side;
        let xs_col = Var::leaf(
            ArrayD::from_shape_vec(
                IxDyn(&[l, 1]),
                (0..l).map(|i| F::c((i % w) as f64)).collect(),
            )
            .unwrap(),
        );
        let ys_col = Var::leaf(
            ArrayD::from_shape_vec(
                IxDyn(&[l, 1]),
                (0..l).map(|i| F::c((i / w) as f64)).collect(),
            )
            .unwrap(),
        );

        let mut per_landmark = Vec::with_capacity(self.priors.len());
        for &(ux, uy) in &self.priors {
            let cx = ux * w as f64;
            let cy = uy * h as f64;
            let prior = Var::leaf(
                ArrayD::from_shape_vec(
                    IxDyn(&[1, l]),
                    (0..l)
                        .map(|i| {
                            let px = (i % w) as f64;
                            let py = (i / w) as f64;
                            let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                            F::c(-d2 / (2.0 * sigma_px * sigma_px))
                        })
                        .collect(),
                )
                .unwrap(),
            );
            let p = darkness.add_b(&prior).softmax_lastdim();
            let px = p.matmul(&xs_col); // [N, 1]
            let py = p.matmul(&ys_col);
            per_landmark.push(Var::concat(&[px, py], 1).reshape(&[n, 1, 2]));
        }
        Ok(Var::concat(&per_landmark, 1))
    }

    /// Convenience wrapper producing plain landmark sets per image.
    pub fn detect_sets(&self, batch: &ndarray::Array4<f32>) -> Result<Vec<LandmarkSet>> {
        let _ng = NoGrad::new();
        let coords = self
            .detect(&Var::leaf(batch.clone().into_dyn()))?
            .to_array();
        let n = coords.shape()[0];
        let k = coords.shape()[1];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let pts = Array2::from_shape_fn((k, 2), |(kk, d)| coords[[i, kk, d]] as f64);
            out.push(LandmarkSet::new(pts)?);
        }
        Ok(out)
    }
}

/// Per-image sidecar data, all detached from the graph.
pub struct GuidanceBundle {
    pub embedding: Option<crate::types::IdentityEmbedding>,
    pub features: Vec<ArrayD<f32>>,
    pub mask: ParsingMask,
    pub landmarks: Option<LandmarkSet>,
}

/// What to do when a sidecar file is missing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingSidecarPolicy {
    /// Fail loudly (training default).
    Strict,
    /// All-ones mask, landmarks skipped for the sample, with a warning.
    Neutral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SidecarManifest {
    /// Resolution the sidecars were authored at.
    pub resolution: usize,
    pub landmark_count: usize,
    /// Indices of the two eye landmarks (interocular normalization).
    #[serde(default = "default_eye_indices")]
    pub eye_indices: [usize; 2],
}

fn default_eye_indices() -> [usize; 2] {
    [0, 1]
}

pub const SIDECAR_MANIFEST_FILE: &str = "sidecar_manifest.json";

pub fn read_sidecar_manifest(dir: &Path) -> Result<SidecarManifest> {
    let path = dir.join(SIDECAR_MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("missing {SIDECAR_MANIFEST_FILE} in {dir:?}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad sidecar manifest: {e}")))
}

pub fn write_sidecar_manifest(dir: &Path, manifest: &SidecarManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("serialize manifest: {e}")))?;
    std::fs::write(dir.join(SIDECAR_MANIFEST_FILE), text)?;
    Ok(())
}

pub fn landmark_csv_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.landmarks.csv"))
}

pub fn mask_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.mask.png"))
}

pub fn write_landmark_csv(path: &Path, lm: &LandmarkSet) -> Result<()> {
    let mut text = String::from("k,x,y\n");
    for (k, row) in lm.points.rows().into_iter().enumerate() {
        text.push_str(&format!("{k},{},{}\n", row[0], row[1]));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_landmark_csv(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path)?;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "k,x,y" {
                return Err(Error::Data(format!(
                    "landmark csv header must be 'k,x,y', got '{line}'"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Data(format!("bad landmark row: '{line}'")));
        }
        let x: f64 = parts[1].trim().parse().map_err(|_| {
            Error::Data(format!("bad landmark x in '{line}'"))
        })?;
        let y: f64 = parts[2].trim().parse().map_err(|_| {
            Error::Data(format!("bad landmark y in '{line}'"))
        })?;
        pts.push([x, y]);
    }
    let arr = Array2::from_shape_fn((pts.len(), 2), |(r, c)| pts[r][c]);
    LandmarkSet::new(arr)
}

/// Load mask + landmarks for an image id, rescaled to `target_resolution`.
pub fn load_sidecars(
    dir: &Path,
    id: &str,
    target_resolution: usize,
    policy: MissingSidecarPolicy,
) -> Result<(ParsingMask, Option<LandmarkSet>)> {
    let mpath = mask_path(dir, id);
    let lpath = landmark_csv_path(dir, id);
    if !mpath.exists() || !lpath.exists() {
        match policy {
            MissingSidecarPolicy::Strict => {
                return Err(Error::Data(format!(
                    "missing sidecars for '{id}' in {dir:?} (strict mode)"
                )));
            }
            MissingSidecarPolicy::Neutral => {
                log::warn!("missing sidecars for '{id}'; using neutral defaults");
                return Ok((
                    ParsingMask::ones(target_resolution, target_resolution),
                    None,
                ));
            }
        }
    }
    let manifest = read_sidecar_manifest(dir)?;
    let raw_mask = imgproc::load_mask01(&mpath)?;
    let resized = imgproc::resize_bilinear_2d(&raw_mask, target_resolution, target_resolution)
        .mapv(|v| v.clamp(0.0, 1.0));
    let mask = ParsingMask::new(resized)?;
    let lm = read_landmark_csv(&lpath)?;
    if lm.k() != manifest.landmark_count {
        return Err(Error::Data(format!(
            "landmark count {} does not match manifest {}",
            lm.k(),
            manifest.landmark_count
        )));
    }
    let factor = target_resolution as f64 / manifest.resolution as f64;
    Ok((mask, Some(lm.scaled(factor))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn rand_batch(n: usize, res: usize, seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(&[n, 3, res, res]), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let enc = FrozenEncoder::<f64>::identity(7, 16);
        let x = rand_batch(3, 32, 1);
        let e1 = enc.embed_identity(&Var::leaf(x.clone())).unwrap().to_array();
        let e2 = enc.embed_identity(&Var::leaf(x.clone())).unwrap().to_array();
        assert_eq!(e1, e2);
        for i in 0..3 {
            let norm: f64 = (0..16).map(|d| e1[[i, d]] * e1[[i, d]]).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        // duplicated image -> identical embeddings
        let mut dup = Array4::<f64>::zeros((2, 3, 32, 32));
        dup.index_axis_mut(ndarray::Axis(0), 0)
            .assign(&x.index_axis(ndarray::Axis(0), 0));
        dup.index_axis_mut(ndarray::Axis(0), 1)
            .assign(&x.index_axis(ndarray::Axis(0), 0));
        let ed = enc.embed_identity(&Var::leaf(dup.into_dyn())).unwrap().to_array();
        for d in 0..16 {
            assert!((ed[[0, d]] - ed[[1, d]]).abs() < 1e-14);
        }
    }

    #[test]
    fn embedding_stable_under_tiny_perturbation() {
        let enc = FrozenEncoder::<f64>::identity(3, 16);
        let x = rand_batch(1, 32, 2);
        let eps = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir = ArrayD::from_shape_fn(x.raw_dim(), |_| rng.gen_range(-1.0..1.0));
        let xp = &x + &dir.mapv(|v| v * eps);
        let e0 = enc.embed_identity(&Var::leaf(x)).unwrap().to_array();
        let e1 = enc.embed_identity(&Var::leaf(xp)).unwrap().to_array();
        let cos: f64 = (0..16).map(|d| e0[[0, d]] * e1[[0, d]]).sum();
        // forward difference of the unit embedding bounds the cosine drop:
        // cos >= 1 - 0.5 * ||e1 - e0||^2 exactly for unit vectors
        let diff2: f64 = (0..16).map(|d| (e1[[0, d]] - e0[[0, d]]).powi(2)).sum();
        assert!((cos - (1.0 - 0.5 * diff2)).abs() < 1e-12);
        assert!(cos >= 1.0 - 50.0 * eps, "cos {cos} dropped more than O(eps)");
    }

    #[test]
    fn features_shrink_and_are_finite_on_zero_input() {
        let enc = FrozenEncoder::<f64>::perceptual(5);
        let x = Var::leaf(ArrayD::zeros(IxDyn(&[2, 3, 64, 64])));
        let taps = enc.extract_features(&x).unwrap();
        assert_eq!(taps.len(), 2);
        assert_eq!(taps[0].shape()[2], 32);
        assert_eq!(taps[1].shape()[2], 16);
        for t in taps {
            assert!(t.to_array().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn tap_out_of_range_errors() {
        let mut enc = FrozenEncoder::<f64>::perceptual(5);
        enc.tap_layers = vec![0, 7];
        let x = Var::leaf(ArrayD::zeros(IxDyn(&[1, 3, 64, 64])));
        assert!(enc.extract_features(&x).is_err());
    }

    #[test]
    fn retrieval_finds_exact_copy_and_matches_bruteforce() {
        let enc = FrozenEncoder::<f64>::perceptual(11);
        let x = rand_batch(5, 32, 3);
        let mut y = rand_batch(6, 32, 4);
        // plant an exact copy of x[2] at y[4]
        let xi = x.index_axis(ndarray::Axis(0), 2).to_owned();
        y.index_axis_mut(ndarray::Axis(0), 4).assign(&xi);
        let (idx_x, idx_y) = retrieve_pseudo_pairs(&x, &y, &enc, RetrievalMetric::Cosine).unwrap();
        assert_eq!(idx_x[2], 4);
        assert_eq!(idx_y[4], 2);
        // brute force oracle over pooled features
        let fx = enc.pooled_features(&x).unwrap();
        let fy = enc.pooled_features(&y).unwrap();
        for (i, &j) in idx_x.iter().enumerate() {
            let mut best = (0usize, f64::NEG_INFINITY);
            for cand in 0..6 {
                let a = fx.row(i);
                let b = fy.row(cand);
                let dot: f64 = a.iter().zip(b.iter()).map(|(u, v)| u * v).sum();
                let na: f64 = a.iter().map(|u| u * u).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|u| u * u).sum::<f64>().sqrt();
                let c = dot / (na * nb + 1e-12);
                if c > best.1 {
                    best = (cand, c);
                }
            }
            assert_eq!(j, best.0, "row {i}");
        }
    }

    #[test]
    fn single_candidate_retrieval() {
        let enc = FrozenEncoder::<f64>::perceptual(13);
        let x = rand_batch(4, 32, 5);
        let y = rand_batch(1, 32, 6);
        let (idx_x, _) = retrieve_pseudo_pairs(&x, &y, &enc, RetrievalMetric::Cosine).unwrap();
        assert!(idx_x.iter().all(|&j| j == 0));
    }

    #[test]
    fn detector_finds_dark_blobs_near_priors() {
        // bright canvas with dark disks exactly at the prior positions
        let det = LandmarkDetector::default();
        let res = 64usize;
        let mut img = Array4::<f32>::from_elem((1, 3, res, res), 0.8);
        for &(ux, uy) in &det.priors {
            let cx = (ux * res as f64) as i64;
            let cy = (uy * res as f64) as i64;
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (px, py) = (cx + dx, cy + dy);
                    if px >= 0 && py >= 0 && (px as usize) < res && (py as usize) < res {
                        for c in 0..3 {
                            img[[0, c, py as usize, px as usize]] = -0.9;
                        }
                    }
                }
            }
        }
        let sets = det.detect_sets(&img).unwrap();
        for (k, &(ux, uy)) in det.priors.iter().enumerate() {
            let ex = ux * res as f64;
            let ey = uy * res as f64;
            let got = (sets[0].points[[k, 0]], sets[0].points[[k, 1]]);
            let err = ((got.0 - ex).powi(2) + (got.1 - ey).powi(2)).sqrt();
            assert!(err < 1.5, "landmark {k}: got {got:?}, want ({ex}, {ey})");
        }
    }

    #[test]
    fn detector_gradient_flows_to_image() {
        let det = LandmarkDetector::default();
        let x = Var::param(rand_batch(1, 64, 7));
        let lm = det.detect(&x).unwrap();
        lm.sum_all().backward();
        let g = x.grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn sidecar_roundtrip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = SidecarManifest {
            resolution: 256,
            landmark_count: 2,
            eye_indices: [0, 1],
        };
        write_sidecar_manifest(dir.path(), &manifest).unwrap();
        let lm = LandmarkSet::new(ndarray::arr2(&[[100.0, 120.0], [156.0, 120.0]])).unwrap();
        write_landmark_csv(&landmark_csv_path(dir.path(), "a_0"), &lm).unwrap();
        let mask = Array2::<f32>::ones((256, 256));
        imgproc::save_mask01(&mask_path(dir.path(), "a_0"), &mask).unwrap();

        let (m, l) = load_sidecars(dir.path(), "a_0", 128, MissingSidecarPolicy::Strict).unwrap();
        assert_eq!(m.weights.shape(), &[128, 128]);
        assert!(m.weights.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let l = l.unwrap();
        assert!((l.points[[0, 0]] - 50.0).abs() < 1e-9);
        assert!((l.points[[1, 0]] - 78.0).abs() < 1e-9);

        // missing id: strict errors, neutral defaults
        assert!(load_sidecars(dir.path(), "nope", 128, MissingSidecarPolicy::Strict).is_err());
        let (m2, l2) = load_sidecars(dir.path(), "nope", 64, MissingSidecarPolicy::Neutral).unwrap();
        assert_eq!(m2.weights.shape(), &[64, 64]);
        assert!(l2.is_none());
    }

    #[test]
    fn frozen_weights_never_change_under_backward() {
        let enc = FrozenEncoder::<f64>::identity(21, 8);
        let before = enc.weight_checksum();
        let x = Var::param(rand_batch(1, 32, 8));
        let e = enc.embed_identity(&x).unwrap();
        e.sum_all().backward();
        assert!(x.grad().is_some());
        assert_eq!(before, enc.weight_checksum());
    }
}
