//! Central finite-difference verification of analytic gradients.

use super::{Arr, NoGrad, Scalar, Var};
use ndarray::ArrayD;

/// Central finite differences of a scalar-valued function w.r.t. each input.
pub fn finite_diff<F, Func>(inputs: &[Arr<F>], f: Func, h: F) -> Vec<Arr<F>>
where
    F: Scalar,
    Func: Fn(&[Var<F>]) -> Var<F>,
{
    let _guard = NoGrad::new();
    let eval = |arrs: &[Arr<F>]| -> F {
        let vars: Vec<Var<F>> = arrs.iter().map(|a| Var::leaf(a.clone())).collect();
        f(&vars).item()
    };
    let two_h = h + h;
    let mut grads = Vec::with_capacity(inputs.len());
    for (which, base) in inputs.iter().enumerate() {
        let mut g = ArrayD::<F>::zeros(base.raw_dim());
        let flat_len = base.len();
        for k in 0..flat_len {
            let mut plus: Vec<Arr<F>> = inputs.to_vec();
            let mut minus: Vec<Arr<F>> = inputs.to_vec();
            {
                let p = plus[which].as_slice_mut().unwrap();
                p[k] = p[k] + h;
                let m = minus[which].as_slice_mut().unwrap();
                m[k] = m[k] - h;
            }
            let d = (eval(&plus) - eval(&minus)) / two_h;
            g.as_slice_mut().unwrap()[k] = d;
        }
        grads.push(g);
    }
    grads
}

/// Max relative error between analytic and finite-difference gradients.
pub fn max_rel_error<F: Scalar>(analytic: &Arr<F>, fd: &Arr<F>, floor: F) -> F {
    let mut worst = F::zero();
    for (&a, &b) in analytic.iter().zip(fd.iter()) {
        let denom = a.abs().max(b.abs()).max(floor);
        let rel = (a - b).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Assert analytic gradients of `f` match central finite differences.
///
/// Gradients with magnitude below `floor` are compared against the floor to
/// avoid amplifying finite-difference noise near zero.
pub fn check_grads<F, Func>(inputs: &[Arr<F>], f: Func, h: f64, tol: f64)
where
    F: Scalar,
    Func: Fn(&[Var<F>]) -> Var<F>,
{
    let worst = grad_check_worst(inputs, &f, h);
    assert!(
        worst.f64() <= tol,
        "gradient check failed: max relative error {:.3e} > tol {:.1e}",
        worst.f64(),
        tol
    );
}

/// Worst relative error over all inputs (exposed for acceptance reporting).
pub fn grad_check_worst<F, Func>(inputs: &[Arr<F>], f: &Func, h: f64) -> F
where
    F: Scalar,
    Func: Fn(&[Var<F>]) -> Var<F>,
{
    let vars: Vec<Var<F>> = inputs.iter().map(|a| Var::param(a.clone())).collect();
    let out = f(&vars);
    assert_eq!(out.len(), 1, "gradient check target must be scalar");
    out.backward();
    let analytic: Vec<Arr<F>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| ArrayD::zeros(v.data().raw_dim())))
        .collect();
    let fd = finite_diff(inputs, f, F::c(h));
    let floor = F::c(1e-6);
    let mut worst = F::zero();
    for (a, b) in analytic.iter().zip(fd.iter()) {
        let e = max_rel_error(a, b, floor);
        if e > worst {
            worst = e;
        }
    }
    worst
}
