//! Spectral norm estimation and enforcement via power iteration.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};
use ndarray::{Array1, Array2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Persistent per-layer singular-vector estimates.
#[derive(Clone, Debug)]
pub struct SpectralState<F: Scalar> {
    pub u: Array1<F>,
    pub v: Array1<F>,
    pub sigma: F,
    pub n_power_iters: usize,
}

fn seeded_unit_vector<F: Scalar>(len: usize, rng: &mut ChaCha8Rng) -> Array1<F> {
    loop {
        let v: Array1<F> = Array1::from_iter(
            (0..len).map(|_| F::c(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))),
        );
        let n = v.iter().map(|&x| x * x).fold(F::zero(), |a, b| a + b).sqrt();
        if n > F::c(1e-12) {
            return v.mapv(|x| x / n);
        }
    }
}

fn l2norm<F: Scalar>(v: &Array1<F>) -> F {
    v.iter().map(|&x| x * x).fold(F::zero(), |a, b| a + b).sqrt()
}

/// One power-iteration update: v' = W^T W v / ||W^T W v||, sigma = ||W v'||.
pub fn power_iteration_step<F: Scalar>(
    w: &Array2<F>,
    v: &Array1<F>,
) -> Result<(Array1<F>, F)> {
    if w.shape()[1] != v.len() {
        return Err(Error::Shape(format!(
            "power_iteration_step: W cols {} vs v len {}",
            w.shape()[1],
            v.len()
        )));
    }
    let wv = w.dot(v);
    let wtwv = w.t().dot(&wv);
    let norm = l2norm(&wtwv);
    if norm <= F::zero() {
        return Err(Error::Numeric("v in null space; reinitialize".into()));
    }
    let v_next = wtwv.mapv(|x| x / norm);
    let sigma = l2norm(&w.dot(&v_next));
    Ok((v_next, sigma))
}

/// Run `iters` power-iteration steps from a seeded random unit vector.
/// Deterministic given (W, iters, seed); reseeds once on a null-space hit.
pub fn estimate_sigma<F: Scalar>(w: &Array2<F>, iters: usize, seed: u64) -> Result<F> {
    if iters == 0 {
        return Err(Error::Config("estimate_sigma needs iters >= 1".into()));
    }
    let mut attempt_seed = seed;
    for attempt in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let mut v = seeded_unit_vector::<F>(w.shape()[1], &mut rng);
        let mut sigma = F::zero();
        let mut failed = false;
        for _ in 0..iters {
            match power_iteration_step(w, &v) {
                Ok((vn, s)) => {
                    v = vn;
                    sigma = s;
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            return Ok(sigma);
        }
        if attempt == 0 {
            attempt_seed = seed.wrapping_add(0x9e3779b97f4a7c15);
        }
    }
    Err(Error::Numeric(
        "v in null space; reinitialize (reseed attempt also failed)".into(),
    ))
}

/// W / sigma. Errors when sigma <= 0.
pub fn normalize_weight<F: Scalar>(w: &Array2<F>, sigma: F) -> Result<Array2<F>> {
    if sigma <= F::zero() {
        return Err(Error::Numeric(format!(
            "normalize_weight: sigma must be positive, got {}",
            sigma.f64()
        )));
    }
    Ok(w.mapv(|x| x / sigma))
}

impl<F: Scalar> SpectralState<F> {
    /// Seeded isotropic Gaussian init, normalized; sigma starts at 1.
    pub fn init(rows: usize, cols: usize, seed: u64, n_power_iters: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = seeded_unit_vector(rows, &mut rng);
        let v = seeded_unit_vector(cols, &mut rng);
        SpectralState {
            u,
            v,
            sigma: F::one(),
            n_power_iters: n_power_iters.max(1),
        }
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.u.len() != rows || self.v.len() != cols {
            return Err(Error::Shape(format!(
                "SpectralState {}x{} does not match weight {}x{}",
                self.u.len(),
                self.v.len(),
                rows,
                cols
            )));
        }
        Ok(())
    }

    /// `n_power_iters` updates of (u, v, sigma) against the reshaped weight.
    pub fn update(&mut self, w: &Array2<F>) -> Result<()> {
        self.check_shape(w.shape()[0], w.shape()[1])?;
        for _ in 0..self.n_power_iters {
            let (v_next, sigma) = power_iteration_step(w, &self.v)?;
            let wv = w.dot(&v_next);
            let un = l2norm(&wv);
            if un > F::zero() {
                self.u = wv.mapv(|x| x / un);
            }
            self.v = v_next;
            self.sigma = sigma;
        }
        Ok(())
    }
}

/// Spectrally normalized effective weight for a layer forward.
///
/// `weight` is the raw parameter with arbitrary shape; it is flattened to
/// [rows, everything_else]. In training mode the state receives one power
/// iteration update first; in eval mode the stored estimate is reused.
/// With `detach_sigma` false (default), sigma = ||W v|| is recomputed through
/// the graph (singular vector constant) so the division is differentiable.
pub fn sn_effective_weight<F: Scalar>(
    weight: &Var<F>,
    state: &mut SpectralState<F>,
    training: bool,
    detach_sigma: bool,
) -> Result<Var<F>> {
    let shape = weight.shape();
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    state.check_shape(rows, cols)?;
    let wmat_data = weight
        .data()
        .to_owned()
        .into_shape_with_order(IxDyn(&[rows, cols]))
        .expect("weight reshape")
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    if training {
        state.update(&wmat_data)?;
    }
    if training && !detach_sigma {
        // sigma as a differentiable function of W with v held constant
        let wmat = weight.reshape(&[rows, cols]);
        let v_col = Var::leaf(
            state
                .v
                .clone()
                .into_shape_with_order(IxDyn(&[cols, 1]))
                .unwrap(),
        );
        let sigma = wmat.matmul(&v_col).square().sum_all().sqrt();
        let sigma_b = sigma.reshape(&[1, 1]);
        Ok(wmat.div_b(&sigma_b).reshape(&shape))
    } else {
        let sigma = state.sigma;
        if sigma <= F::zero() {
            return Err(Error::Numeric("spectral state sigma non-positive".into()));
        }
        Ok(weight.mul_scalar(F::one() / sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm_exact;
    use crate::tensor::gradcheck::check_grads;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn identity_keeps_vector_and_returns_one() {
        let w: Array2<f64> = Array2::eye(3);
        let v = Array1::from(vec![0.6, 0.8, 0.0]);
        let (vn, sigma) = power_iteration_step(&w, &v).unwrap();
        assert!((l2norm(&vn) - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((vn[i] - v[i]).abs() < 1e-12);
        }
        assert!((sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_eigenvector_input_stays_stuck() {
        let w = arr2(&[[3.0_f64, 0.0], [0.0, 1.0]]);
        let v = Array1::from(vec![0.0_f64, 1.0]);
        let (vn, sigma) = power_iteration_step(&w, &v).unwrap();
        assert!((vn[0]).abs() < 1e-15 && (vn[1] - 1.0).abs() < 1e-12);
        assert!((sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_matrix_converges_to_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array2::<f64>::from_shape_fn((16, 8), |_| rng.gen_range(-1.0..1.0));
        let mut v = seeded_unit_vector::<f64>(8, &mut rng);
        let mut sigma = 0.0;
        for _ in 0..100 {
            let (vn, s) = power_iteration_step(&w, &v).unwrap();
            v = vn;
            sigma = s;
        }
        let truth = spectral_norm_exact(&w).unwrap();
        assert!((sigma - truth).abs() / truth < 1e-4);
    }

    #[test]
    fn sigma_estimates_are_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Array2::<f64>::from_shape_fn((12, 10), |_| rng.gen_range(-1.0..1.0));
        let mut v = seeded_unit_vector::<f64>(10, &mut rng);
        let mut last = 0.0;
        for _ in 0..50 {
            let (vn, s) = power_iteration_step(&w, &v).unwrap();
            assert!(s >= last - 1e-12, "sigma decreased: {last} -> {s}");
            last = s;
            v = vn;
        }
    }

    #[test]
    fn zero_matrix_errors_after_reseed() {
        let w: Array2<f64> = Array2::zeros((4, 4));
        let err = estimate_sigma(&w, 10, 0).unwrap_err();
        assert!(err.to_string().contains("null space"));
    }

    #[test]
    fn diagonal_sigma_exact() {
        let w = arr2(&[[5.0_f64, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        for seed in [0u64, 1, 42] {
            let s = estimate_sigma(&w, 50, seed).unwrap();
            assert!((s - 5.0).abs() < 1e-6, "seed {seed}: {s}");
        }
    }

    #[test]
    fn normalize_weight_examples() {
        let w = arr2(&[[3.0_f64, 0.0], [0.0, 1.0]]);
        let n = normalize_weight(&w, 3.0).unwrap();
        assert!((n[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((n[[1, 1]] - 1.0 / 3.0).abs() < 1e-15);
        assert!(normalize_weight(&w, 0.0).is_err());
        // sigma = 1 is a fixed point
        let id: Array2<f64> = Array2::eye(2);
        let same = normalize_weight(&id, 1.0).unwrap();
        assert_eq!(same, id);
    }

    #[test]
    fn scaling_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array2::<f64>::from_shape_fn((9, 7), |_| rng.gen_range(-1.0..1.0));
        let s1 = estimate_sigma(&w, 100, 7).unwrap();
        let alpha = 3.5;
        let s2 = estimate_sigma(&w.mapv(|x| x * alpha), 100, 7).unwrap();
        assert!((s2 - alpha * s1).abs() <= 1e-6 * alpha);
    }

    #[test]
    fn determinism_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Array2::<f64>::from_shape_fn((20, 20), |_| rng.gen_range(-1.0..1.0));
        let a = estimate_sigma(&w, 40, 123).unwrap();
        let b = estimate_sigma(&w, 40, 123).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn normalized_gradient_matches_fd() {
        // d(W/sigma)/dW with singular vectors detached, division differentiable.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = ndarray::ArrayD::from_shape_fn(IxDyn(&[4, 4]), |_| rng.gen_range(-1.0..1.0));
        let w2 = w
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let mut state = SpectralState::<f64>::init(4, 4, 0, 1);
        for _ in 0..200 {
            state.update(&w2).unwrap();
        }
        let v = state.v.clone();
        check_grads(
            &[w],
            move |vars| {
                let wmat = vars[0].reshape(&[4, 4]);
                let v_col = Var::leaf(v.clone().into_shape_with_order(IxDyn(&[4, 1])).unwrap());
                let sigma = wmat.matmul(&v_col).square().sum_all().sqrt();
                // random-ish linear probe of the normalized weight
                wmat.div_b(&sigma.reshape(&[1, 1])).square().sum_all()
            },
            1e-5,
            1e-3,
        );
    }

    #[test]
    fn sn_effective_weight_scalar_layer() {
        // single 1x1 "convolution" weight w = 4 reshapes to [[4]]
        let w = Var::param(ndarray::ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 4.0_f64));
        let mut state = SpectralState::<f64>::init(1, 1, 0, 1);
        let eff = sn_effective_weight(&w, &mut state, true, false).unwrap();
        assert!((state.sigma - 4.0).abs() < 1e-12);
        assert!((eff.data()[[0, 0, 0, 0]] - 1.0).abs() < 1e-12);
    }
}
