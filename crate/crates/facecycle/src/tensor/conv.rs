//! Convolution, pooling, resampling and shift primitives for NCHW tensors.

use super::{Arr, Scalar, Var};
use ndarray::{Array2, Ix4, IxDyn};
use std::rc::Rc;

fn as4<F: Scalar>(v: &Var<F>, what: &str) -> (usize, usize, usize, usize) {
    let s = v.shape();
    assert_eq!(s.len(), 4, "{what}: expected 4-D NCHW tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Zero-pad spatial dims of a NCHW array.
fn pad_spatial<F: Scalar>(x: &Arr<F>, p: usize) -> Arr<F> {
    if p == 0 {
        return x.clone();
    }
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Arr::zeros(IxDyn(&[n, c, h + 2 * p, w + 2 * p]));
    out.slice_mut(ndarray::s![.., .., p..p + h, p..p + w])
        .assign(x);
    out
}

fn im2col<F: Scalar>(
    xp: &Arr<F>, // padded input
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Array2<F> {
    let s = xp.shape();
    let (n, c, _hp, wp) = (s[0], s[1], s[2], s[3]);
    let l = ho * wo;
    let mut cols = Array2::<F>::zeros((c * kh * kw, n * l));
    let xs = xp.as_slice().expect("standard layout");
    let plane = s[2] * s[3];
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let mut dst = cols.row_mut(row);
                let dsts = dst.as_slice_mut().expect("row slice");
                for ni in 0..n {
                    let base = ni * c * plane + ci * plane;
                    for oh in 0..ho {
                        let src_off = base + (oh * stride + i) * wp + j;
                        let dst_off = ni * l + oh * wo;
                        if stride == 1 {
                            dsts[dst_off..dst_off + wo]
                                .copy_from_slice(&xs[src_off..src_off + wo]);
                        } else {
                            for ow in 0..wo {
                                dsts[dst_off + ow] = xs[src_off + ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Arr<F> {
    let l = ho * wo;
    let mut dxp = Arr::<F>::zeros(IxDyn(&[n, c, hp, wp]));
    let dxs = dxp.as_slice_mut().expect("standard layout");
    let plane = hp * wp;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let src = dcols.row(row);
                let srcs = src.as_slice().expect("row slice");
                for ni in 0..n {
                    let base = ni * c * plane + ci * plane;
                    for oh in 0..ho {
                        let dst_off = base + (oh * stride + i) * wp + j;
                        let src_off = ni * l + oh * wo;
                        for ow in 0..wo {
                            dxs[dst_off + ow * stride] += srcs[src_off + ow];
                        }
                    }
                }
            }
        }
    }
    dxp
}

/// Reorder [Cout, N*L] gemm output into NCHW.
fn mat_to_nchw<F: Scalar>(m: &Array2<F>, n: usize, co: usize, ho: usize, wo: usize) -> Arr<F> {
    let l = ho * wo;
    let mut out = Arr::<F>::zeros(IxDyn(&[n, co, ho, wo]));
    let os = out.as_slice_mut().unwrap();
    let ms = m.as_slice().unwrap();
    for c in 0..co {
        for ni in 0..n {
            let src = c * n * l + ni * l;
            let dst = ni * co * l + c * l;
            os[dst..dst + l].copy_from_slice(&ms[src..src + l]);
        }
    }
    out
}

fn nchw_to_mat<F: Scalar>(x: &Arr<F>) -> Array2<F> {
    let s = x.shape();
    let (n, co, ho, wo) = (s[0], s[1], s[2], s[3]);
    let l = ho * wo;
    let mut m = Array2::<F>::zeros((co, n * l));
    let ms = m.as_slice_mut().unwrap();
    let xs = x.as_slice().expect("standard layout");
    for c in 0..co {
        for ni in 0..n {
            let dst = c * n * l + ni * l;
            let src = ni * co * l + c * l;
            ms[dst..dst + l].copy_from_slice(&xs[src..src + l]);
        }
    }
    m
}

impl<F: Scalar> Var<F> {
    /// 2-D convolution, zero padding. x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout].
    pub fn conv2d(&self, w: &Var<F>, b: Option<&Var<F>>, stride: usize, pad: usize) -> Var<F> {
        let (n, cin, h, wi) = as4(self, "conv2d input");
        let ws = w.shape();
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-D");
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert!(h + 2 * pad >= kh && wi + 2 * pad >= kw, "conv2d kernel larger than input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wi + 2 * pad - kw) / stride + 1;

        let xp = pad_spatial(&self.data(), pad);
        let cols = Rc::new(im2col(&xp, kh, kw, stride, ho, wo));
        let wmat = w
            .data()
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let mut out_mat = wmat.dot(&*cols);
        if super::half_gemm_enabled() {
            out_mat.mapv_inplace(F::quantize_half);
        }
        if let Some(bias) = b {
            let bd = bias.data();
            for (c, mut row) in out_mat.rows_mut().into_iter().enumerate() {
                let bv = bd[[c]];
                row.mapv_inplace(|v| v + bv);
            }
        }
        let out = mat_to_nchw(&out_mat, n, cout, ho, wo);

        let mut parents = vec![self.clone(), w.clone()];
        if let Some(bias) = b {
            parents.push(bias.clone());
        }
        let wv = w.clone();
        let has_bias = b.is_some();
        let colsc = Rc::clone(&cols);
        Var::from_op(
            out,
            parents,
            Box::new(move |g| {
                let dout_mat = nchw_to_mat(g); // [Cout, N*L]
                // dW = dOut . cols^T
                let dw = dout_mat
                    .dot(&colsc.t())
                    .into_shape_with_order((cout, cin, kh, kw))
                    .unwrap()
                    .into_dyn();
                // dX via col2im of W^T . dOut
                let wd = wv.data();
                let wmat = wd
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap()
                    .to_owned()
                    .into_shape_with_order((cout, cin * kh * kw))
                    .unwrap();
                let dcols = wmat.t().dot(&dout_mat);
                let dxp = col2im(&dcols, n, cin, h + 2 * pad, wi + 2 * pad, kh, kw, stride, ho, wo);
                let dx = if pad == 0 {
                    dxp
                } else {
                    dxp.slice(ndarray::s![.., .., pad..pad + h, pad..pad + wi])
                        .to_owned()
                        .into_dyn()
                };
                let mut grads = vec![Some(dx), Some(dw)];
                if has_bias {
                    let db = dout_mat.sum_axis(ndarray::Axis(1));
                    grads.push(Some(db.into_dyn()));
                }
                grads
            }),
        )
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&self) -> Var<F> {
        let (n, c, h, w) = as4(self, "avg_pool2");
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let quarter = F::c(0.25);
        let mut out = Arr::<F>::zeros(IxDyn(&[n, c, ho, wo]));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..ho {
                    for j in 0..wo {
                        let s = x[[ni, ci, 2 * i, 2 * j]]
                            + x[[ni, ci, 2 * i, 2 * j + 1]]
                            + x[[ni, ci, 2 * i + 1, 2 * j]]
                            + x[[ni, ci, 2 * i + 1, 2 * j + 1]];
                        out[[ni, ci, i, j]] = s * quarter;
                    }
                }
            }
        }
        drop(x);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Arr::<F>::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let gv = g[[ni, ci, i, j]] * quarter;
                                dx[[ni, ci, 2 * i, 2 * j]] += gv;
                                dx[[ni, ci, 2 * i, 2 * j + 1]] += gv;
                                dx[[ni, ci, 2 * i + 1, 2 * j]] += gv;
                                dx[[ni, ci, 2 * i + 1, 2 * j + 1]] += gv;
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(&self) -> Var<F> {
        let (n, c, h, w) = as4(self, "upsample_nearest2");
        let x = self.data();
        let mut out = Arr::<F>::zeros(IxDyn(&[n, c, 2 * h, 2 * w]));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = x[[ni, ci, i, j]];
                        out[[ni, ci, 2 * i, 2 * j]] = v;
                        out[[ni, ci, 2 * i, 2 * j + 1]] = v;
                        out[[ni, ci, 2 * i + 1, 2 * j]] = v;
                        out[[ni, ci, 2 * i + 1, 2 * j + 1]] = v;
                    }
                }
            }
        }
        drop(x);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Arr::<F>::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx[[ni, ci, i, j]] = g[[ni, ci, 2 * i, 2 * j]]
                                    + g[[ni, ci, 2 * i, 2 * j + 1]]
                                    + g[[ni, ci, 2 * i + 1, 2 * j]]
                                    + g[[ni, ci, 2 * i + 1, 2 * j + 1]];
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Integer translation with zero fill: out[y][x] = in[y-dy][x-dx].
    pub fn shift2d(&self, dx: isize, dy: isize) -> Var<F> {
        let (n, c, h, w) = as4(self, "shift2d");
        let x = self.data();
        let mut out = Arr::<F>::zeros(IxDyn(&[n, c, h, w]));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h as isize {
                    let sy = y - dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w as isize {
                        let sx = xx - dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[[ni, ci, y as usize, xx as usize]] =
                            x[[ni, ci, sy as usize, sx as usize]];
                    }
                }
            }
        }
        drop(x);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut din = Arr::<F>::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h as isize {
                            let sy = y - dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w as isize {
                                let sx = xx - dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                din[[ni, ci, sy as usize, sx as usize]] +=
                                    g[[ni, ci, y as usize, xx as usize]];
                            }
                        }
                    }
                }
                vec![Some(din)]
            }),
        )
    }
}

/// Plain (no-graph) conv2d forward on arrays; used by frozen toy encoders in
/// hot metric paths where no gradients are ever needed.
pub fn conv2d_forward<F: Scalar>(
    x: &Arr<F>,
    w: &Arr<F>,
    b: Option<&Arr<F>>,
    stride: usize,
    pad: usize,
) -> Arr<F> {
    let s = x.shape();
    let (n, cin, h, wi) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wi + 2 * pad - kw) / stride + 1;
    let xp = pad_spatial(x, pad);
    let cols = im2col(&xp, kh, kw, stride, ho, wo);
    let wmat = w
        .view()
        .into_dimensionality::<Ix4>()
        .unwrap()
        .to_owned()
        .into_shape_with_order((cout, cin * kh * kw))
        .unwrap();
    let mut out_mat = wmat.dot(&cols);
    if let Some(bias) = b {
        for (c, mut row) in out_mat.rows_mut().into_iter().enumerate() {
            let bv = bias[[c]];
            row.mapv_inplace(|v| v + bv);
        }
    }
    mat_to_nchw(&out_mat, n, cout, ho, wo)
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
    fn conv2d_matches_direct_computation() {
        // 1x1 input channel, known kernel: verify against a hand loop.
        let x = randn(&[2, 2, 5, 5], 1);
        let w = randn(&[3, 2, 3, 3], 2);
        let b = randn(&[3], 3);
        let out = Var::leaf(x.clone())
            .conv2d(&Var::leaf(w.clone()), Some(&Var::leaf(b.clone())), 2, 1)
            .to_array();
        // direct
        let (ho, wo) = (3, 3);
        for n in 0..2 {
            for co in 0..3 {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b[[co]];
                        for ci in 0..2 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let hh = (oh * 2 + i) as isize - 1;
                                    let ww = (ow * 2 + j) as isize - 1;
                                    if hh >= 0 && hh < 5 && ww >= 0 && ww < 5 {
                                        acc += x[[n, ci, hh as usize, ww as usize]]
                                            * w[[co, ci, i, j]];
                                    }
                                }
                            }
                        }
                        let got = out[[n, co, oh, ow]];
                        assert!((got - acc).abs() < 1e-12, "mismatch at {n},{co},{oh},{ow}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_grads_match_fd() {
        let x = randn(&[2, 2, 6, 6], 4);
        let w = randn(&[3, 2, 3, 3], 5);
        let b = randn(&[3], 6);
        check_grads(
            &[x, w, b],
            |vars| {
                vars[0]
                    .conv2d(&vars[1], Some(&vars[2]), 2, 1)
                    .square()
                    .sum_all()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn pool_upsample_shift_grads_match_fd() {
        let x = randn(&[1, 2, 4, 4], 7);
        check_grads(
            &[x.clone()],
            |vars| vars[0].avg_pool2().square().sum_all(),
            1e-5,
            1e-6,
        );
        check_grads(
            &[x.clone()],
            |vars| vars[0].upsample_nearest2().square().sum_all(),
            1e-5,
            1e-6,
        );
        check_grads(
            &[x],
            |vars| vars[0].shift2d(1, -2).square().sum_all(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn shift_semantics() {
        let x = randn(&[1, 1, 4, 8], 8);
        let out = Var::leaf(x.clone()).shift2d(3, 0).to_array();
        for y in 0..4 {
            for c in 0..3 {
                assert_eq!(out[[0, 0, y, c]], 0.0);
            }
            for c in 3..8 {
                assert_eq!(out[[0, 0, y, c]], x[[0, 0, y, c - 3]]);
            }
        }
    }
}
