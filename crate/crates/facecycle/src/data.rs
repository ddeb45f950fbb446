//! Dataset ingestion, preprocessing, identity-held-out splits and samplers.
//!
//! Identity is encoded in the filename prefix before the first underscore
//! (`<identity>_<frame>.png`); splits partition identities, never images.

use crate::error::{Error, Result};
use crate::guidance::{self, MissingSidecarPolicy};
use crate::imgproc;
use crate::types::Domain;
use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub const MANIFEST_CACHE_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub domain: Domain,
    pub ids: Vec<String>,
    pub has_sidecars: bool,
    /// Curated paired subset: id in this manifest -> id in the partner set.
    pub paired_with: Option<BTreeMap<String, String>>,
}

impl DatasetManifest {
    pub fn identity_of(id: &str) -> &str {
        id.split('_').next().unwrap_or(id)
    }

    pub fn identities(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .ids
            .iter()
            .map(|id| Self::identity_of(id).to_string())
            .collect();
        set.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        for ext in ["png", "jpg", "jpeg"] {
            let p = self.root.join(format!("{id}.{ext}"));
            if p.exists() {
                return p;
            }
        }
        self.root.join(format!("{id}.png"))
    }

    pub fn validate_paired(&self) -> Result<()> {
        if let Some(map) = &self.paired_with {
            let mut seen = BTreeSet::new();
            for (k, v) in map {
                if !self.ids.contains(k) {
                    return Err(Error::Data(format!("paired id '{k}' not in manifest")));
                }
                if !seen.insert(v.clone()) {
                    return Err(Error::Data(format!(
                        "paired map not injective: target '{v}' repeated"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scan a directory of PNG/JPEG images into a manifest; undecodable files are
/// skipped with a logged warning. The manifest is cached as `manifest.json`.
pub fn ingest_directory(root: &Path, domain: Domain) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{root:?} is not a directory")));
    }
    let mut ids = Vec::new();
    let mut skipped = 0usize;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        let ext = ext.to_ascii_lowercase();
        if !["png", "jpg", "jpeg"].contains(&ext.as_str()) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if stem.ends_with(".mask") {
            continue; // sidecar, not a dataset image
        }
        match image::open(&path) {
            Ok(_) => ids.push(stem),
            Err(e) => {
                skipped += 1;
                log::warn!("skipping undecodable image {path:?}: {e}");
            }
        }
    }
    if skipped > 0 {
        log::warn!("ingest: skipped {skipped} undecodable file(s) in {root:?}");
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("no images in {root:?}")));
    }
    ids.sort();
    let has_sidecars = ids.iter().all(|id| {
        guidance::mask_path(root, id).exists() && guidance::landmark_csv_path(root, id).exists()
    }) && root.join(guidance::SIDECAR_MANIFEST_FILE).exists();
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        domain,
        ids,
        has_sidecars,
        paired_with: None,
    };
    let cache = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialize: {e}")))?;
    std::fs::write(root.join(MANIFEST_CACHE_FILE), cache)?;
    Ok(manifest)
}

/// Link two manifests whose shared ids form a curated paired subset.
pub fn pair_manifests(a: &mut DatasetManifest, b: &DatasetManifest) {
    let bids: BTreeSet<&String> = b.ids.iter().collect();
    let map: BTreeMap<String, String> = a
        .ids
        .iter()
        .filter(|id| bids.contains(id))
        .map(|id| (id.clone(), id.clone()))
        .collect();
    a.paired_with = (!map.is_empty()).then_some(map);
}

/// Center square crop + bilinear resize, in [0, 1] HWC space. Idempotent at
/// the target resolution (bit-exact).
pub fn preprocess_geometry(img: &Array3<f32>, resolution: usize) -> Result<Array3<f32>> {
    let min_side = img.shape()[0].min(img.shape()[1]);
    if min_side < 64 {
        return Err(Error::Data(format!(
            "image min side {min_side} below preprocessing minimum 64"
        )));
    }
    let cropped = imgproc::center_crop_square(img);
    Ok(imgproc::resize_bilinear(&cropped, resolution, resolution))
}

/// Full preprocessing: geometry + mapping to [-1, 1] CHW.
pub fn preprocess(img: &Array3<f32>, resolution: usize) -> Result<Array3<f32>> {
    Ok(imgproc::hwc01_to_chw_pm1(&preprocess_geometry(img, resolution)?))
}

fn default_train_frac() -> f64 {
    0.8
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: default_train_frac(),
            seed: 0,
        }
    }
}

/// Identity-held-out split: identities (not images) are partitioned by a
/// seeded shuffle; all frames of an identity land on one side.
pub fn split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut identities = manifest.identities();
    if identities.len() < 2 {
        return Err(Error::Data(
            "identity holdout impossible: dataset has a single identity; \
             need at least 2 so train and test can disjointly cover identities"
                .into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    identities.shuffle(&mut rng);
    let n = identities.len();
    let n_train = ((spec.train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let train_ids: BTreeSet<&String> = identities[..n_train].iter().collect();
    let mut train = manifest.clone();
    let mut test = manifest.clone();
    train.ids = manifest
        .ids
        .iter()
        .filter(|id| train_ids.contains(&DatasetManifest::identity_of(id).to_string()))
        .cloned()
        .collect();
    test.ids = manifest
        .ids
        .iter()
        .filter(|id| !train_ids.contains(&DatasetManifest::identity_of(id).to_string()))
        .cloned()
        .collect();
    if let Some(map) = &manifest.paired_with {
        train.paired_with = Some(
            map.iter()
                .filter(|(k, _)| train.ids.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        );
        test.paired_with = Some(
            map.iter()
                .filter(|(k, _)| test.ids.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        );
    }
    Ok((train, test))
}

/// Independent per-domain shuffles, reshuffled each epoch; yields id batches
/// with no index correlation between domains.
pub struct UnpairedSampler {
    ids_x: Vec<String>,
    ids_y: Vec<String>,
    batch: usize,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    pos_x: usize,
    pos_y: usize,
    rng: ChaCha8Rng,
}

impl UnpairedSampler {
    pub fn new(
        train_x: &DatasetManifest,
        train_y: &DatasetManifest,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        if train_x.is_empty() || train_y.is_empty() {
            return Err(Error::Data("unpaired sampler needs non-empty domains".into()));
        }
        if batch > train_x.len() || batch > train_y.len() {
            return Err(Error::Data(format!(
                "batch {batch} exceeds dataset sizes ({} X, {} Y)",
                train_x.len(),
                train_y.len()
            )));
        }
        let mut s = UnpairedSampler {
            ids_x: train_x.ids.clone(),
            ids_y: train_y.ids.clone(),
            batch,
            order_x: vec![],
            order_y: vec![],
            pos_x: 0,
            pos_y: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle_x();
        s.reshuffle_y();
        Ok(s)
    }

    fn reshuffle_x(&mut self) {
        self.order_x = (0..self.ids_x.len()).collect();
        self.order_x.shuffle(&mut self.rng);
        self.pos_x = 0;
    }

    fn reshuffle_y(&mut self) {
        self.order_y = (0..self.ids_y.len()).collect();
        self.order_y.shuffle(&mut self.rng);
        self.pos_y = 0;
    }

    /// Next batch of (x ids, y ids).
    pub fn next_batch(&mut self) -> (Vec<String>, Vec<String>) {
        if self.pos_x + self.batch > self.order_x.len() {
            self.reshuffle_x();
        }
        if self.pos_y + self.batch > self.order_y.len() {
            self.reshuffle_y();
        }
        let xs = self.order_x[self.pos_x..self.pos_x + self.batch]
            .iter()
            .map(|&i| self.ids_x[i].clone())
            .collect();
        let ys = self.order_y[self.pos_y..self.pos_y + self.batch]
            .iter()
            .map(|&i| self.ids_y[i].clone())
            .collect();
        self.pos_x += self.batch;
        self.pos_y += self.batch;
        (xs, ys)
    }
}

/// Images plus sidecar tensors for one training batch.
pub struct LoadedBatch {
    pub ids: Vec<String>,
    /// [N, 3, R, R] in [-1, 1].
    pub images: Array4<f32>,
    /// [N, 1, R, R] parsing weights, when requested.
    pub masks: Option<Array4<f32>>,
    /// [N, K, 2] pixel landmarks plus per-sample validity, when requested.
    pub landmarks: Option<(Array3<f32>, Vec<bool>)>,
}

/// Load and preprocess a batch by id, optionally with sidecars rescaled to
/// the training resolution.
pub fn load_batch(
    manifest: &DatasetManifest,
    ids: &[String],
    resolution: usize,
    want_masks: bool,
    want_landmarks: bool,
    policy: MissingSidecarPolicy,
) -> Result<LoadedBatch> {
    let mut imgs = Vec::with_capacity(ids.len());
    for id in ids {
        let img = imgproc::load_image_rgb01(&manifest.image_path(id))?;
        imgs.push(preprocess(&img, resolution)?);
    }
    let images = imgproc::stack_chw(&imgs)?;
    let mut masks = None;
    let mut landmarks = None;
    if want_masks || want_landmarks {
        let mut mask_arr = Array4::<f32>::ones((ids.len(), 1, resolution, resolution));
        let mut k_out = 0usize;
        let mut lm_rows: Vec<Option<Array2<f64>>> = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let (mask, lm) = guidance::load_sidecars(&manifest.root, id, resolution, policy)?;
            mask_arr
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), 0)
                .assign(&mask.weights);
            if let Some(l) = &lm {
                k_out = k_out.max(l.k());
            }
            lm_rows.push(lm.map(|l| l.points));
        }
        if want_masks {
            masks = Some(mask_arr);
        }
        if want_landmarks {
            let k = k_out.max(1);
            let mut arr = Array3::<f32>::zeros((ids.len(), k, 2));
            let mut valid = vec![false; ids.len()];
            for (i, row) in lm_rows.iter().enumerate() {
                if let Some(pts) = row {
                    if pts.shape()[0] == k {
                        for kk in 0..k {
                            arr[[i, kk, 0]] = pts[[kk, 0]] as f32;
                            arr[[i, kk, 1]] = pts[[kk, 1]] as f32;
                        }
                        valid[i] = true;
                    }
                }
            }
            landmarks = Some((arr, valid));
        }
    }
    Ok(LoadedBatch {
        ids: ids.to_vec(),
        images,
        masks,
        landmarks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    fn toy_dir(n: usize, seed: u64) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        toy::make_toy_domain(dir.path(), Domain::X, n, 64, seed).unwrap();
        let m = ingest_directory(dir.path(), Domain::X).unwrap();
        (dir, m)
    }

    #[test]
    fn ingest_empty_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_directory(dir.path(), Domain::X).is_err());
    }

    #[test]
    fn ingest_detects_sidecars_and_identities() {
        let (_dir, m) = toy_dir(20, 0);
        assert_eq!(m.len(), 20);
        assert!(m.has_sidecars);
        assert_eq!(m.identities().len(), toy::identity_count(20));
        assert!(m.root.join(MANIFEST_CACHE_FILE).exists());
    }

    #[test]
    fn identity_parsing_rule() {
        assert_eq!(DatasetManifest::identity_of("idA_001"), "idA");
        assert_eq!(DatasetManifest::identity_of("idB_001"), "idB");
        assert_eq!(DatasetManifest::identity_of("plain"), "plain");
    }

    #[test]
    fn split_holds_out_identities() {
        let (_dir, m) = toy_dir(100, 1); // 10 identities
        let spec = SplitSpec { train_frac: 0.8, seed: 7 };
        let (train, test) = split(&m, &spec).unwrap();
        let tr_ids: BTreeSet<String> = train.identities().into_iter().collect();
        let te_ids: BTreeSet<String> = test.identities().into_iter().collect();
        assert_eq!(tr_ids.len(), 8);
        assert_eq!(te_ids.len(), 2);
        assert!(tr_ids.is_disjoint(&te_ids));
        assert_eq!(train.len() + test.len(), 100);
        // determinism
        let (train2, _) = split(&m, &spec).unwrap();
        assert_eq!(train.ids, train2.ids);
        // single identity errors
        let mut single = m.clone();
        single.ids = m
            .ids
            .iter()
            .filter(|id| DatasetManifest::identity_of(id) == "x00")
            .cloned()
            .collect();
        assert!(split(&single, &spec).is_err());
    }

    #[test]
    fn preprocess_geometry_idempotent_and_correct() {
        let img = Array3::from_shape_fn((128, 256, 3), |(y, x, c)| {
            ((y * 7 + x * 3 + c) % 255) as f32 / 255.0
        });
        let once = preprocess_geometry(&img, 64).unwrap();
        let twice = preprocess_geometry(&once, 64).unwrap();
        assert_eq!(once, twice);
        // wide image: horizontal center crop to square
        assert_eq!(once.shape(), &[64, 64, 3]);
        // too-small input errors
        let small = Array3::<f32>::zeros((32, 32, 3));
        assert!(preprocess_geometry(&small, 64).is_err());
    }

    #[test]
    fn sampler_deterministic_and_bounded() {
        let (_dx, mx) = toy_dir(24, 2);
        let (_dy, my) = toy_dir(24, 3);
        assert!(UnpairedSampler::new(&mx, &my, 25, 0).is_err());
        let mut s1 = UnpairedSampler::new(&mx, &my, 4, 9).unwrap();
        let mut s2 = UnpairedSampler::new(&mx, &my, 4, 9).unwrap();
        assert_eq!(s1.next_batch(), s2.next_batch());
    }

    #[test]
    fn sampler_pairing_indices_independent_chi_square() {
        let (_dx, mx) = toy_dir(8, 4);
        let (_dy, my) = toy_dir(8, 5);
        let mut s = UnpairedSampler::new(&mx, &my, 1, 3).unwrap();
        let idx = |ids: &[String], id: &str| ids.iter().position(|v| v == id).unwrap();
        let mut counts = [[0u32; 8]; 8];
        let n_draws = 10_000;
        for _ in 0..n_draws {
            let (xs, ys) = s.next_batch();
            counts[idx(&mx.ids, &xs[0])][idx(&my.ids, &ys[0])] += 1;
        }
        let expected = n_draws as f64 / 64.0;
        let chi2: f64 = counts
            .iter()
            .flatten()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // dof = 63, critical value at p = 0.01 is 92.01
        assert!(chi2 < 92.01, "chi-square {chi2} rejects independence");
    }

    #[test]
    fn load_batch_with_sidecars() {
        let (_dir, m) = toy_dir(12, 6);
        let ids: Vec<String> = m.ids[..3].to_vec();
        let b = load_batch(&m, &ids, 64, true, true, MissingSidecarPolicy::Strict).unwrap();
        assert_eq!(b.images.shape(), &[3, 3, 64, 64]);
        assert!(b.images.iter().all(|v| (-1.0..=1.0).contains(v)));
        let masks = b.masks.unwrap();
        assert_eq!(masks.shape(), &[3, 1, 64, 64]);
        let (lm, valid) = b.landmarks.unwrap();
        assert_eq!(lm.shape(), &[3, 5, 2]);
        assert!(valid.iter().all(|&v| v));
    }

    #[test]
    fn paired_manifest_roundtrip() {
        let dx = tempfile::tempdir().unwrap();
        let dy = tempfile::tempdir().unwrap();
        toy::make_toy_paired(dx.path(), dy.path(), 10, 64, 0).unwrap();
        let mut mx = ingest_directory(dx.path(), Domain::X).unwrap();
        let my = ingest_directory(dy.path(), Domain::Y).unwrap();
        pair_manifests(&mut mx, &my);
        let map = mx.paired_with.clone().unwrap();
        assert_eq!(map.len(), 10);
        mx.validate_paired().unwrap();
    }
}
