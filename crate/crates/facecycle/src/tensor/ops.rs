//! Differentiable primitive ops on [`Var`].

use super::{Arr, Scalar, Var};
use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn};

fn same_shape<F: Scalar>(a: &Var<F>, b: &Var<F>, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

/// Sum `g` down to `shape` over axes where `shape` has extent 1.
fn reduce_broadcast<F: Scalar>(g: &Arr<F>, shape: &[usize]) -> Arr<F> {
    let mut out = g.clone();
    for ax in 0..shape.len() {
        if shape[ax] == 1 && out.shape()[ax] != 1 {
            let summed = out.sum_axis(Axis(ax));
            out = summed.insert_axis(Axis(ax));
        }
    }
    out
}

impl<F: Scalar> Var<F> {
    // ---- elementwise binary (same shape) ----

    pub fn add(&self, rhs: &Var<F>) -> Var<F> {
        same_shape(self, rhs, "add");
        let data = &*self.data() + &*rhs.data();
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, rhs: &Var<F>) -> Var<F> {
        same_shape(self, rhs, "sub");
        let data = &*self.data() - &*rhs.data();
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g| vec![Some(g.clone()), Some(-g.clone())]),
        )
    }

    pub fn mul(&self, rhs: &Var<F>) -> Var<F> {
        same_shape(self, rhs, "mul");
        let data = &*self.data() * &*rhs.data();
        let (a, b) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g * &*b.data()), Some(g * &*a.data())]),
        )
    }

    pub fn div(&self, rhs: &Var<F>) -> Var<F> {
        same_shape(self, rhs, "div");
        let data = &*self.data() / &*rhs.data();
        let (a, b) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let bd = b.data();
                let da = g / &*bd;
                let db = -(g * &*a.data()) / (&*bd * &*bd);
                vec![Some(da), Some(db)]
            }),
        )
    }

    // ---- broadcast binary: rhs has the same ndim with some axes of extent 1 ----

    pub fn add_b(&self, rhs: &Var<F>) -> Var<F> {
        let data = &*self.data() + &*rhs.data();
        assert_eq!(data.shape(), self.data().shape(), "add_b: lhs must dominate");
        let rshape = rhs.shape();
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g.clone()), Some(reduce_broadcast(g, &rshape))]),
        )
    }

    pub fn mul_b(&self, rhs: &Var<F>) -> Var<F> {
        let data = &*self.data() * &*rhs.data();
        assert_eq!(data.shape(), self.data().shape(), "mul_b: lhs must dominate");
        let rshape = rhs.shape();
        let (a, b) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let da = g * &*b.data();
                let db = reduce_broadcast(&(g * &*a.data()), &rshape);
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn sub_b(&self, rhs: &Var<F>) -> Var<F> {
        let data = &*self.data() - &*rhs.data();
        assert_eq!(data.shape(), self.data().shape(), "sub_b: lhs must dominate");
        let rshape = rhs.shape();
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g.clone()), Some(-reduce_broadcast(g, &rshape))]),
        )
    }

    pub fn div_b(&self, rhs: &Var<F>) -> Var<F> {
        let data = &*self.data() / &*rhs.data();
        assert_eq!(data.shape(), self.data().shape(), "div_b: lhs must dominate");
        let rshape = rhs.shape();
        let (a, b) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let bd = b.data();
                let da = g / &*bd;
                let db = reduce_broadcast(&(-(g * &*a.data()) / (&*bd * &*bd)), &rshape);
                vec![Some(da), Some(db)]
            }),
        )
    }

    // ---- scalar ops ----

    pub fn add_scalar(&self, s: F) -> Var<F> {
        let data = self.data().mapv(|x| x + s);
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.clone())]),
        )
    }

    pub fn mul_scalar(&self, s: F) -> Var<F> {
        let data = self.data().mapv(|x| x * s);
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.mapv(|x| x * s))]),
        )
    }

    pub fn neg(&self) -> Var<F> {
        self.mul_scalar(F::c(-1.0))
    }

    // ---- unary maps ----

    pub fn square(&self) -> Var<F> {
        let x = self.clone();
        let data = self.data().mapv(|v| v * v);
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &x.data().mapv(|v| v + v))]),
        )
    }

    pub fn abs(&self) -> Var<F> {
        let x = self.clone();
        let data = self.data().mapv(|v| v.abs());
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &x.data().mapv(|v| v.signum()))]),
        )
    }

    pub fn exp(&self) -> Var<F> {
        let data = self.data().mapv(|v| v.exp());
        let y = data.clone();
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &y)]),
        )
    }

    pub fn ln(&self) -> Var<F> {
        let x = self.clone();
        let data = self.data().mapv(|v| v.ln());
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g / &*x.data())]),
        )
    }

    pub fn sqrt(&self) -> Var<F> {
        let data = self.data().mapv(|v| v.sqrt());
        let y = data.clone();
        let half = F::c(0.5);
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &y.mapv(|v| half / v))]),
        )
    }

    pub fn tanh(&self) -> Var<F> {
        let data = self.data().mapv(|v| v.tanh());
        let y = data.clone();
        let one = F::one();
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &y.mapv(|t| one - t * t))]),
        )
    }

    pub fn sigmoid(&self) -> Var<F> {
        let one = F::one();
        let data = self.data().mapv(|v| one / (one + (-v).exp()));
        let y = data.clone();
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &y.mapv(|s| s * (one - s)))]),
        )
    }

    pub fn relu(&self) -> Var<F> {
        let x = self.clone();
        let data = self.data().mapv(|v| if v > F::zero() { v } else { F::zero() });
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let m = x
                    .data()
                    .mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                vec![Some(g * &m)]
            }),
        )
    }

    pub fn leaky_relu(&self, slope: F) -> Var<F> {
        let x = self.clone();
        let data = self.data().mapv(|v| if v > F::zero() { v } else { v * slope });
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let m = x
                    .data()
                    .mapv(|v| if v > F::zero() { F::one() } else { slope });
                vec![Some(g * &m)]
            }),
        )
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Var<F> {
        let x = self.clone();
        let data = self
            .data()
            .mapv(|v| v.max(F::zero()) + (-v.abs()).exp().ln_1p());
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let one = F::one();
                let s = x.data().mapv(|v| one / (one + (-v).exp()));
                vec![Some(g * &s)]
            }),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self) -> Var<F> {
        let shape = self.shape();
        let s = self.data().sum();
        Var::from_op(
            ArrayD::from_elem(IxDyn(&[]), s),
            vec![self.clone()],
            Box::new(move |g| {
                let gv = *g.iter().next().expect("scalar grad");
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn mean_all(&self) -> Var<F> {
        let n = F::c(self.len() as f64);
        self.sum_all().mul_scalar(F::one() / n)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes_keep(&self, axes: &[usize]) -> Var<F> {
        let in_shape = self.shape();
        let mut data = self.data().clone();
        let mut sorted: Vec<usize> = axes.to_vec();
        sorted.sort_unstable();
        for &ax in &sorted {
            let summed = data.sum_axis(Axis(ax));
            data = summed.insert_axis(Axis(ax));
        }
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut full = Arr::zeros(IxDyn(&in_shape));
                full += &g.broadcast(IxDyn(&in_shape)).expect("broadcast grad");
                vec![Some(full)]
            }),
        )
    }

    pub fn mean_axes_keep(&self, axes: &[usize]) -> Var<F> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes_keep(axes).mul_scalar(F::one() / F::c(n as f64))
    }

    // ---- shape ops ----

    pub fn reshape(&self, shape: &[usize]) -> Var<F> {
        let in_shape = self.shape();
        let n_in: usize = in_shape.iter().product();
        let n_out: usize = shape.iter().product();
        assert_eq!(n_in, n_out, "reshape element count mismatch");
        let data = self
            .data()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape");
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.to_owned()
                        .into_shape_with_order(IxDyn(&in_shape))
                        .expect("reshape grad"),
                )]
            }),
        )
    }

    /// 2-D transpose.
    pub fn transpose2(&self) -> Var<F> {
        let xd = self.data();
        let d = xd.view().into_dimensionality::<Ix2>().expect("2-D");
        let data = d.t().to_owned().into_dyn();
        drop(xd);
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(|g| {
                let gt = g
                    .view()
                    .into_dimensionality::<Ix2>()
                    .expect("2-D grad")
                    .t()
                    .to_owned()
                    .into_dyn();
                vec![Some(gt)]
            }),
        )
    }

    /// Concatenate along `axis`.
    pub fn concat(vars: &[Var<F>], axis: usize) -> Var<F> {
        assert!(!vars.is_empty());
        let views: Vec<_> = vars.iter().map(|v| v.to_array()).collect();
        let view_refs: Vec<_> = views.iter().map(|a| a.view()).collect();
        let data = ndarray::concatenate(Axis(axis), &view_refs).expect("concat");
        let sizes: Vec<usize> = vars.iter().map(|v| v.shape()[axis]).collect();
        Var::from_op(
            data,
            vars.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0;
                for &sz in &sizes {
                    let sl = g
                        .slice_axis(Axis(axis), ndarray::Slice::from(start as isize..(start + sz) as isize))
                        .to_owned();
                    out.push(Some(sl));
                    start += sz;
                }
                out
            }),
        )
    }

    /// Slice `len` elements starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<F> {
        let in_shape = self.shape();
        let data = self
            .data()
            .slice_axis(Axis(axis), ndarray::Slice::from(start as isize..(start + len) as isize))
            .to_owned();
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut full = Arr::zeros(IxDyn(&in_shape));
                full.slice_axis_mut(
                    Axis(axis),
                    ndarray::Slice::from(start as isize..(start + len) as isize),
                )
                .assign(g);
                vec![Some(full)]
            }),
        )
    }

    // ---- linear algebra ----

    /// [m, k] x [k, n] -> [m, n]
    pub fn matmul(&self, rhs: &Var<F>) -> Var<F> {
        let ad = self.data();
        let bd = rhs.data();
        let a = ad.view().into_dimensionality::<Ix2>().expect("lhs 2-D");
        let b = bd.view().into_dimensionality::<Ix2>().expect("rhs 2-D");
        assert_eq!(a.shape()[1], b.shape()[0], "matmul inner dim");
        let mut data = a.dot(&b).into_dyn();
        if super::half_gemm_enabled() {
            data.mapv_inplace(F::quantize_half);
        }
        drop(ad);
        drop(bd);
        let (av, bv) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-D");
                let ad = av.data();
                let bd = bv.data();
                let a2 = ad.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = bd.view().into_dimensionality::<Ix2>().unwrap();
                let da = g2.dot(&b2.t()).into_dyn();
                let db = a2.t().dot(&g2).into_dyn();
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Batched matmul over leading axis: [B, m, k] x [B, k, n] -> [B, m, n].
    /// `trans_a`/`trans_b` transpose the per-sample matrices.
    pub fn bmm(&self, rhs: &Var<F>, trans_a: bool, trans_b: bool) -> Var<F> {
        let a = self.to_array();
        let b = rhs.to_array();
        assert_eq!(a.shape()[0], b.shape()[0], "bmm batch");
        let bsz = a.shape()[0];
        let per = |m: &Arr<F>, i: usize| -> Array2<F> {
            m.index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap()
                .to_owned()
        };
        let mut outs = Vec::with_capacity(bsz);
        for i in 0..bsz {
            let ai = per(&a, i);
            let bi = per(&b, i);
            let ae = if trans_a { ai.t().to_owned() } else { ai };
            let be = if trans_b { bi.t().to_owned() } else { bi };
            outs.push(ae.dot(&be));
        }
        let m = outs[0].shape()[0];
        let n = outs[0].shape()[1];
        let mut data = Arr::zeros(IxDyn(&[bsz, m, n]));
        for (i, o) in outs.iter().enumerate() {
            data.index_axis_mut(Axis(0), i).assign(&o.view().into_dyn());
        }
        let (av, bv) = (self.clone(), rhs.clone());
        Var::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let ad = av.to_array();
                let bd = bv.to_array();
                let mut da = Arr::zeros(ad.raw_dim());
                let mut db = Arr::zeros(bd.raw_dim());
                for i in 0..ad.shape()[0] {
                    let gi = g
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .to_owned();
                    let ai = ad
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .to_owned();
                    let bi = bd
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .to_owned();
                    // out = Ae . Be with Ae = a^ta, Be = b^tb
                    let (dai, dbi) = match (trans_a, trans_b) {
                        (false, false) => (gi.dot(&bi.t()), ai.t().dot(&gi)),
                        (false, true) => (gi.dot(&bi), gi.t().dot(&ai)),
                        (true, false) => (bi.dot(&gi.t()), ai.dot(&gi)),
                        (true, true) => (bi.t().dot(&gi.t()), gi.t().dot(&ai.t())),
                    };
                    da.index_axis_mut(Axis(0), i).assign(&dai.into_dyn());
                    db.index_axis_mut(Axis(0), i).assign(&dbi.into_dyn());
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    // ---- softmax family (last dim) ----

    pub fn softmax_lastdim(&self) -> Var<F> {
        let x = self.to_array();
        let last = x.ndim() - 1;
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|v| (v - mx).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let _ = last;
        let yc = y.clone();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = y * (g - sum(g*y, last))
                let mut dx = g * &yc;
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(yc.rows()) {
                    let dot: F = drow.sum();
                    ndarray::Zip::from(&mut drow).and(&yrow).for_each(|d, &yv| {
                        *d -= dot * yv;
                    });
                }
                vec![Some(dx)]
            }),
        )
    }

    /// log(sum(exp(x))) along the last dim, keeping it with extent 1.
    pub fn logsumexp_lastdim_keep(&self) -> Var<F> {
        let x = self.to_array();
        let nd = x.ndim();
        let mut out_shape = x.shape().to_vec();
        out_shape[nd - 1] = 1;
        let mut out = Arr::zeros(IxDyn(&out_shape));
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(x.rows()) {
            let mx = xrow.iter().cloned().fold(F::neg_infinity(), F::max);
            let s: F = xrow.iter().map(|&v| (v - mx).exp()).fold(F::zero(), |a, b| a + b);
            orow[0] = mx + s.ln();
        }
        let xc = x.clone();
        let outc = out.clone();
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = g * softmax(x)
                let mut dx = Arr::zeros(xc.raw_dim());
                for ((mut drow, xrow), (grow, orow)) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(xc.rows())
                    .zip(g.rows().into_iter().zip(outc.rows()))
                {
                    let lse = orow[0];
                    let gv = grow[0];
                    ndarray::Zip::from(&mut drow).and(&xrow).for_each(|d, &xv| {
                        *d = gv * (xv - lse).exp();
                    });
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Pick one element per row of a 2-D tensor: out[r] = x[r, idx[r]].
    pub fn gather_rows(&self, idx: &[usize]) -> Var<F> {
        let x = self.data();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("2-D");
        assert_eq!(x2.shape()[0], idx.len());
        let vals: Vec<F> = idx.iter().enumerate().map(|(r, &c)| x2[[r, c]]).collect();
        drop(x);
        let shape = self.shape();
        let idxc = idx.to_vec();
        Var::from_op(
            ArrayD::from_shape_vec(IxDyn(&[idxc.len()]), vals).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Arr::zeros(IxDyn(&shape));
                let mut dx2 = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                for (r, &c) in idxc.iter().enumerate() {
                    dx2[[r, c]] = g[[r]];
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Select rows along axis 0: out[i] = x[idx[i]].
    pub fn select_axis0(&self, idx: &[usize]) -> Var<F> {
        let x = self.to_array();
        let views: Vec<_> = idx.iter().map(|&i| x.index_axis(Axis(0), i)).collect();
        let data = ndarray::stack(Axis(0), &views).expect("select_axis0");
        let shape = self.shape();
        let idxc = idx.to_vec();
        Var::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Arr::zeros(IxDyn(&shape));
                for (i, &src) in idxc.iter().enumerate() {
                    let mut row = dx.index_axis_mut(Axis(0), src);
                    row += &g.index_axis(Axis(0), i);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Gather spatial positions: x [N,C,H,W], idx[n] = linear h*W+w positions.
    /// Returns [N, P, C].
    pub fn gather_spatial(&self, idx: &[Vec<usize>]) -> Var<F> {
        let x = self.to_array();
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(idx.len(), n);
        let p = idx[0].len();
        let mut out = Arr::zeros(IxDyn(&[n, p, c]));
        for ni in 0..n {
            for (pi, &lin) in idx[ni].iter().enumerate() {
                let (hi, wi) = (lin / w, lin % w);
                for ci in 0..c {
                    out[[ni, pi, ci]] = x[[ni, ci, hi, wi]];
                }
            }
        }
        let shape = vec![n, c, h, w];
        let idxc: Vec<Vec<usize>> = idx.to_vec();
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Arr::zeros(IxDyn(&shape));
                let w = shape[3];
                for ni in 0..shape[0] {
                    for (pi, &lin) in idxc[ni].iter().enumerate() {
                        let (hi, wi) = (lin / w, lin % w);
                        for ci in 0..shape[1] {
                            dx[[ni, ci, hi, wi]] += g[[ni, pi, ci]];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::Var;
    use crate::tensor::gradcheck::check_grads;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn elementwise_grads_match_fd() {
        let a = randn(&[3, 4], 1);
        let b = randn(&[3, 4], 2).mapv(|v| v + 2.5); // keep positive for div/ln
        check_grads(
            &[a.clone(), b.clone()],
            |vars| {
                let x = &vars[0];
                let y = &vars[1];
                x.mul(y).add(&x.div(y)).tanh().sum_all()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn softmax_grad_matches_fd() {
        let a = randn(&[4, 5], 3);
        check_grads(
            &[a],
            |vars| vars[0].softmax_lastdim().square().sum_all(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn matmul_grad_matches_fd() {
        let a = randn(&[3, 4], 4);
        let b = randn(&[4, 2], 5);
        check_grads(
            &[a, b],
            |vars| vars[0].matmul(&vars[1]).square().sum_all(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn bmm_transpose_variants_match_fd() {
        for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
            let a_shape = if ta { [2, 4, 3] } else { [2, 3, 4] };
            let b_shape = if tb { [2, 5, 4] } else { [2, 4, 5] };
            let a = randn(&a_shape, 6);
            let b = randn(&b_shape, 7);
            check_grads(
                &[a, b],
                move |vars| vars[0].bmm(&vars[1], ta, tb).square().sum_all(),
                1e-5,
                1e-6,
            );
        }
    }

    #[test]
    fn reductions_and_broadcast_match_fd() {
        let a = randn(&[2, 3, 4, 4], 8);
        let b = randn(&[2, 3, 1, 1], 9).mapv(|v| v + 3.0);
        check_grads(
            &[a, b],
            |vars| {
                let mu = vars[0].mean_axes_keep(&[2, 3]);
                vars[0].sub_b(&mu).div_b(&vars[1]).square().sum_all()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn gather_and_concat_match_fd() {
        let a = randn(&[2, 3, 4, 4], 10);
        let idx = vec![vec![0usize, 5, 15], vec![3, 7, 9]];
        check_grads(
            &[a],
            move |vars| {
                let g = vars[0].gather_spatial(&idx);
                let g2 = g.reshape(&[6, 3]);
                let parts = [g2.narrow(0, 0, 3), g2.narrow(0, 3, 3)];
                Var::concat(&parts, 1).square().sum_all()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn logsumexp_matches_direct() {
        let a = randn(&[3, 6], 11);
        let v = Var::leaf(a.clone());
        let lse = v.logsumexp_lastdim_keep();
        for r in 0..3 {
            let direct: f64 = a
                .index_axis(ndarray::Axis(0), r)
                .iter()
                .map(|x| x.exp())
                .sum::<f64>()
                .ln();
            assert!((lse.data()[[r, 0]] - direct).abs() < 1e-12);
        }
        check_grads(
            &[a],
            |vars| vars[0].logsumexp_lastdim_keep().square().sum_all(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn rng_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _: f64 = rng.gen();
    }
}
