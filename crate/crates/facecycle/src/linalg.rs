//! Dense symmetric eigendecomposition (cyclic Jacobi) and singular values.
//!
//! Matrices in this project stay small (feature dims <= 128), so a
//! dependency-free Jacobi solver is accurate and fast enough.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix: A = V diag(l) V^T.
/// Returns eigenvalues (descending) and eigenvectors as columns of V.
pub fn eigh_jacobi(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.shape()[0];
    if a.shape()[1] != n {
        return Err(Error::Shape("eigh_jacobi needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok((Array1::zeros(n), v));
    }
    let tol = 1e-14 * frob;
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/cols p and q of m.
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut eigvals: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
    eigvals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let vals = Array1::from_iter(eigvals.iter().map(|(val, _)| *val));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (col, (_, src)) in eigvals.iter().enumerate() {
        vecs.column_mut(col).assign(&v.column(*src));
    }
    for x in vals.iter() {
        if !x.is_finite() {
            return Err(Error::Numeric("eigh_jacobi produced non-finite eigenvalue".into()));
        }
    }
    Ok((vals, vecs))
}

/// Singular values of a general matrix, descending, via eigh of the Gram matrix.
pub fn singular_values(a: &Array2<f64>) -> Result<Array1<f64>> {
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    let gram = if rows >= cols {
        a.t().dot(a)
    } else {
        a.dot(&a.t())
    };
    let (vals, _) = eigh_jacobi(&gram)?;
    Ok(vals.mapv(|v| v.max(0.0).sqrt()))
}

/// Largest singular value.
pub fn spectral_norm_exact(a: &Array2<f64>) -> Result<f64> {
    let sv = singular_values(a)?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigh_reconstructs_symmetric_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [2usize, 5, 16, 33] {
            let b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
            let a = &b + &b.t(); // symmetric
            let (vals, vecs) = eigh_jacobi(&a).unwrap();
            let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
            let err: f64 = (&recon - &a).iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} reconstruction err {err}");
            // Orthonormality
            let vtv = vecs.t().dot(&vecs);
            let eye_err: f64 = (&vtv - &Array2::<f64>::eye(n)).iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(eye_err < 1e-10);
        }
    }

    #[test]
    fn singular_values_of_diagonal() {
        let a = arr2(&[[5.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 1.0]]);
        let sv = singular_values(&a).unwrap();
        assert!((sv[0] - 5.0).abs() < 1e-12);
        assert!((sv[1] - 2.0).abs() < 1e-12);
        assert!((sv[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_wide_and_tall_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Array2::from_shape_fn((6, 13), |_| rng.gen_range(-1.0..1.0));
        let s1 = spectral_norm_exact(&a).unwrap();
        let s2 = spectral_norm_exact(&a.t().to_owned()).unwrap();
        assert!((s1 - s2).abs() < 1e-10);
    }
}
