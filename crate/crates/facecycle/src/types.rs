//! Shared data model and value-range conventions.
//!
//! Images live in [-1, 1] NCHW everywhere inside the pipeline (generator
//! outputs pass through tanh); metrics convert to [0, 1] at the boundary.

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use ndarray::{Array2, Array4, ArrayD};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Translation domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::X => write!(f, "X"),
            Domain::Y => write!(f, "Y"),
        }
    }
}

pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [64, 128, 256];

/// Batch of RGB images in [-1, 1], shape [N, 3, H, W].
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pub data: Array4<f32>,
    pub domain: Domain,
}

impl ImageBatch {
    pub fn new(data: Array4<f32>, domain: Domain) -> Result<Self> {
        let s = data.shape();
        if s[1] != 3 {
            return Err(Error::Shape(format!("ImageBatch needs 3 channels, got {}", s[1])));
        }
        if !SUPPORTED_RESOLUTIONS.contains(&s[2]) || !SUPPORTED_RESOLUTIONS.contains(&s[3]) {
            return Err(Error::Shape(format!(
                "ImageBatch H/W must be one of {SUPPORTED_RESOLUTIONS:?}, got {}x{}",
                s[2], s[3]
            )));
        }
        for &v in data.iter() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Numeric(format!(
                    "ImageBatch value {v} outside [-1, 1]"
                )));
            }
        }
        Ok(ImageBatch { data, domain })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.data.shape()[2], self.data.shape()[3])
    }
}

/// Map [-1, 1] pixels to [0, 1] (the range metrics operate in).
pub fn to_unit_range<F: Scalar>(data: &ArrayD<F>) -> ArrayD<F> {
    let half = F::c(0.5);
    data.mapv(|v| (v + F::one()) * half)
}

/// Exact inverse of [`to_unit_range`].
pub fn from_unit_range<F: Scalar>(data: &ArrayD<F>) -> ArrayD<F> {
    let two = F::c(2.0);
    data.mapv(|v| v * two - F::one())
}

/// Cosine similarity of two vectors; errors on zero-norm inputs.
pub fn cosine_similarity<F: Scalar>(u: &[F], v: &[F]) -> Result<F> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine_similarity length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = F::zero();
    let mut nu = F::zero();
    let mut nv = F::zero();
    for (&a, &b) in u.iter().zip(v.iter()) {
        dot = dot + a * b;
        nu = nu + a * a;
        nv = nv + b * b;
    }
    if nu == F::zero() || nv == F::zero() {
        return Err(Error::Numeric("degenerate embedding".into()));
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// K facial landmarks in pixel coordinates, rows are (x, y).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: Array2<f64>,
}

impl LandmarkSet {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.shape()[1] != 2 {
            return Err(Error::Shape("LandmarkSet points must be [K, 2]".into()));
        }
        Ok(LandmarkSet { points })
    }

    pub fn k(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn validate_bounds(&self, w: usize, h: usize) -> Result<()> {
        for row in self.points.rows() {
            if row[0] < 0.0 || row[0] >= w as f64 || row[1] < 0.0 || row[1] >= h as f64 {
                return Err(Error::Data(format!(
                    "landmark ({}, {}) outside image bounds {}x{}",
                    row[0], row[1], w, h
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> LandmarkSet {
        LandmarkSet {
            points: self.points.mapv(|v| v * factor),
        }
    }
}

/// Per-pixel weights in [0, 1] prioritizing facial regions.
#[derive(Clone, Debug)]
pub struct ParsingMask {
    pub weights: Array2<f32>,
}

impl ParsingMask {
    pub fn new(weights: Array2<f32>) -> Result<Self> {
        for &v in weights.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Numeric(format!("mask weight {v} outside [0, 1]")));
            }
        }
        Ok(ParsingMask { weights })
    }

    pub fn ones(h: usize, w: usize) -> ParsingMask {
        ParsingMask {
            weights: Array2::ones((h, w)),
        }
    }
}

/// Unit-norm identity embedding.
#[derive(Clone, Debug)]
pub struct IdentityEmbedding {
    pub vector: Vec<f32>,
}

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_LANDMARK_COUNT: usize = 5;

/// Canonical ordering of loss components in reports and CSV logs.
pub const LOSS_COMPONENT_ORDER: [&str; 11] = [
    "gan_G_xy", "gan_G_yx", "gan_D_x", "gan_D_y", "cyc", "id", "perc", "sem_cyc", "lmk", "con",
    "paired",
];

/// Components that enter the generator total with their weights.
pub const GENERATOR_COMPONENTS: [&str; 9] = [
    "gan_G_xy", "gan_G_yx", "cyc", "id", "perc", "sem_cyc", "lmk", "con", "paired",
];

/// Named scalar map of loss components, their weights, and the weighted total.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub components: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.components {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("loss component {k} is non-finite: {v}")));
            }
        }
        if !self.total.is_finite() {
            return Err(Error::Numeric(format!("loss total is non-finite: {}", self.total)));
        }
        Ok(())
    }

    /// Recompute the generator-side weighted sum from stored parts.
    pub fn weighted_sum(&self) -> f64 {
        GENERATOR_COMPONENTS
            .iter()
            .filter_map(|name| {
                let c = self.components.get(*name)?;
                let w = self.weights.get(*name).copied().unwrap_or(1.0);
                Some(w * c)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, IxDyn};
    use proptest::prelude::*;

    #[test]
    fn unit_range_endpoints() {
        let all = |v: f32| ArrayD::from_elem(IxDyn(&[2, 2]), v);
        assert!(to_unit_range(&all(-1.0)).iter().all(|&v| v == 0.0));
        assert!(to_unit_range(&all(1.0)).iter().all(|&v| v == 1.0));
        assert!(to_unit_range(&all(0.0)).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn cosine_basic_cases() {
        let u = [1.0_f64, 2.0, 3.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let a = [1.0_f64, 0.0];
        let b = [0.0_f64, 1.0];
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let c = [-1.0_f64, -2.0, -3.0];
        assert!((cosine_similarity(&u, &c).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0_f64, 0.0], &u[..2]).is_err());
    }

    #[test]
    fn image_batch_rejects_bad_shapes_and_ranges() {
        let ok = Array4::<f32>::zeros((1, 3, 64, 64));
        assert!(ImageBatch::new(ok, Domain::X).is_ok());
        let bad_c = Array4::<f32>::zeros((1, 4, 64, 64));
        assert!(ImageBatch::new(bad_c, Domain::X).is_err());
        let bad_res = Array4::<f32>::zeros((1, 3, 48, 48));
        assert!(ImageBatch::new(bad_res, Domain::X).is_err());
        let mut bad_range = Array4::<f32>::zeros((1, 3, 64, 64));
        bad_range[[0, 0, 0, 0]] = 1.5;
        assert!(ImageBatch::new(bad_range, Domain::X).is_err());
    }

    #[test]
    fn landmark_bounds() {
        let lm = LandmarkSet::new(arr2(&[[10.0, 20.0], [63.0, 63.0]])).unwrap();
        assert!(lm.validate_bounds(64, 64).is_ok());
        assert!(lm.validate_bounds(32, 64).is_err());
    }

    proptest! {
        #[test]
        fn unit_range_roundtrip_within_ulp(vals in proptest::collection::vec(-1.0f32..=1.0, 1..64)) {
            let a = ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals).unwrap();
            let rt = from_unit_range(&to_unit_range(&a));
            for (x, y) in a.iter().zip(rt.iter()) {
                // worst case is one rounding of the (x + 1) intermediate,
                // whose magnitude reaches 2: ulp(2) = 2 * EPSILON
                prop_assert!((x - y).abs() <= 2.0 * f32::EPSILON, "roundtrip {x} -> {y}");
            }
        }

        #[test]
        fn cosine_scale_invariant(
            v in proptest::collection::vec(-5.0f64..5.0, 3..16),
            w in proptest::collection::vec(-5.0f64..5.0, 3..16),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            let n = v.len().min(w.len());
            let (v, w) = (&v[..n], &w[..n]);
            let nv: f64 = v.iter().map(|x| x * x).sum();
            let nw: f64 = w.iter().map(|x| x * x).sum();
            prop_assume!(nv > 1e-6 && nw > 1e-6);
            let base = cosine_similarity(v, w).unwrap();
            let vs: Vec<f64> = v.iter().map(|x| x * a).collect();
            let ws: Vec<f64> = w.iter().map(|x| x * b).collect();
            let scaled = cosine_similarity(&vs, &ws).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
