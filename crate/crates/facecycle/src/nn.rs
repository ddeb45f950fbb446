//! Network building blocks: conv/linear layers (optionally spectrally
//! normalized), instance norm, AdaIN, residual blocks and self-attention.

use crate::error::{Error, Result};
use crate::spectral::{sn_effective_weight, SpectralState};
use crate::tensor::{Scalar, Var};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cell::RefCell;
use std::rc::Rc;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Named trainable parameters of a model, in registration order.
pub struct ParamSet<F: Scalar> {
    pub entries: Vec<(String, Var<F>)>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        ParamSet { entries: Vec::new() }
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn add(&mut self, name: impl Into<String>, var: &Var<F>) {
        self.entries.push((name.into(), var.clone()));
    }

    pub fn zero_grads(&self) {
        for (_, v) in &self.entries {
            v.zero_grad();
        }
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

/// Handles to persistent spectral states, for checkpoints.
pub type SnStateSet<F> = Vec<(String, Rc<RefCell<SpectralState<F>>>)>;

fn normal_init<F: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let dist = Normal::new(0.0, std).expect("normal");
    ArrayD::from_shape_fn(IxDyn(shape), |_| F::c(dist.sample(rng)))
}

pub const WEIGHT_INIT_STD: f64 = 0.02;

/// Seeded standard-normal style code of the given dimension.
pub fn random_style<F: Scalar>(dim: usize, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    normal_init(&[dim], 1.0, rng)
}

/// Plain 2-D convolution layer.
pub struct Conv2d<F: Scalar> {
    pub w: Var<F>,
    pub b: Option<Var<F>>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = Var::param(normal_init(&[cout, cin, k, k], WEIGHT_INIT_STD, rng));
        let b = bias.then(|| Var::param(ArrayD::zeros(IxDyn(&[cout]))));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, x: &Var<F>) -> Var<F> {
        x.conv2d(&self.w, self.b.as_ref(), self.stride, self.pad)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        out.add(format!("{prefix}.w"), &self.w);
        if let Some(b) = &self.b {
            out.add(format!("{prefix}.b"), b);
        }
    }
}

/// Spectrally normalized convolution: one power-iteration update per
/// training-mode forward, frozen state in eval mode.
pub struct SnConv2d<F: Scalar> {
    pub conv: Conv2d<F>,
    pub state: Rc<RefCell<SpectralState<F>>>,
    pub detach_sigma: bool,
}

impl<F: Scalar> SnConv2d<F> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        state_seed: u64,
    ) -> Self {
        let conv = Conv2d::new(cin, cout, k, stride, pad, bias, rng);
        let state = SpectralState::init(cout, cin * k * k, state_seed, 1);
        SnConv2d {
            conv,
            state: Rc::new(RefCell::new(state)),
            detach_sigma: false,
        }
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        let w_eff = sn_effective_weight(
            &self.conv.w,
            &mut self.state.borrow_mut(),
            training,
            self.detach_sigma,
        )?;
        Ok(x.conv2d(&w_eff, self.conv.b.as_ref(), self.conv.stride, self.conv.pad))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.conv.params(prefix, out);
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        out.push((prefix.to_string(), Rc::clone(&self.state)));
    }
}

/// Convolution that may or may not carry spectral normalization, so network
/// code keeps a single forward path.
pub enum ConvLayer<F: Scalar> {
    Plain(Conv2d<F>),
    Sn(SnConv2d<F>),
}

impl<F: Scalar> ConvLayer<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sn: bool,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        state_seed: u64,
    ) -> Self {
        if sn {
            ConvLayer::Sn(SnConv2d::new(cin, cout, k, stride, pad, bias, rng, state_seed))
        } else {
            ConvLayer::Plain(Conv2d::new(cin, cout, k, stride, pad, bias, rng))
        }
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        match self {
            ConvLayer::Plain(c) => Ok(c.forward(x)),
            ConvLayer::Sn(c) => c.forward(x, training),
        }
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        match self {
            ConvLayer::Plain(c) => c.params(prefix, out),
            ConvLayer::Sn(c) => c.params(prefix, out),
        }
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        if let ConvLayer::Sn(c) = self {
            c.sn_states(prefix, out);
        }
    }
}

/// Fully connected layer; input [N, in] -> [N, out].
pub struct Linear<F: Scalar> {
    pub w: Var<F>, // [out, in]
    pub b: Var<F>, // [out]
}

impl<F: Scalar> Linear<F> {
    pub fn new(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Var::param(normal_init(&[out, inp], WEIGHT_INIT_STD, rng)),
            b: Var::param(ArrayD::zeros(IxDyn(&[out]))),
        }
    }

    pub fn forward(&self, x: &Var<F>) -> Var<F> {
        let out = self.w.shape()[0];
        x.matmul(&self.w.transpose2()).add_b(&self.b.reshape(&[1, out]))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        out.add(format!("{prefix}.w"), &self.w);
        out.add(format!("{prefix}.b"), &self.b);
    }
}

/// Per-sample per-channel standardization over spatial positions.
pub fn instance_norm<F: Scalar>(x: &Var<F>) -> Var<F> {
    let mu = x.mean_axes_keep(&[2, 3]);
    let xc = x.sub_b(&mu);
    let var = xc.square().mean_axes_keep(&[2, 3]);
    let denom = var.add_scalar(F::c(INSTANCE_NORM_EPS)).sqrt();
    xc.div_b(&denom)
}

pub const ADAIN_EPS: f64 = 1e-5;

/// AdaIN: out = scale * (x - mu_c) / (sigma_c + eps) + shift, with statistics
/// per sample per channel over spatial positions. `scale`/`shift` are [C].
pub fn adain<F: Scalar>(x: &Var<F>, scale: &Var<F>, shift: &Var<F>) -> Var<F> {
    let c = x.shape()[1];
    let mu = x.mean_axes_keep(&[2, 3]);
    let xc = x.sub_b(&mu);
    let var = xc.square().mean_axes_keep(&[2, 3]);
    // tiny floor inside the sqrt keeps the gradient finite on constant inputs
    let sigma = var.add_scalar(F::c(1e-12)).sqrt();
    let denom = sigma.add_scalar(F::c(ADAIN_EPS));
    let normed = xc.div_b(&denom);
    normed
        .mul_b(&scale.reshape(&[1, c, 1, 1]))
        .add_b(&shift.reshape(&[1, c, 1, 1]))
}

pub const ATTENTION_MAX_POSITIONS: usize = 4096;

/// Lightweight residual self-attention (softmax over all positions, learned
/// output gate initialized to zero so the block starts as identity).
pub struct SelfAttention<F: Scalar> {
    pub wq: ConvLayer<F>,
    pub wk: ConvLayer<F>,
    pub wv: ConvLayer<F>,
    pub gamma: Var<F>,
}

impl<F: Scalar> SelfAttention<F> {
    pub fn new(channels: usize, sn: bool, rng: &mut ChaCha8Rng, seed: u64) -> Self {
        let cq = (channels / 8).max(1);
        SelfAttention {
            wq: ConvLayer::new(sn, channels, cq, 1, 1, 0, false, rng, seed),
            wk: ConvLayer::new(sn, channels, cq, 1, 1, 0, false, rng, seed.wrapping_add(1)),
            wv: ConvLayer::new(sn, channels, channels, 1, 1, 0, false, rng, seed.wrapping_add(2)),
            gamma: Var::param(ArrayD::zeros(IxDyn(&[1]))),
        }
    }

    pub fn forward(&self, x: &Var<F>, training: bool) -> Result<Var<F>> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let l = h * w;
        if l > ATTENTION_MAX_POSITIONS {
            return Err(Error::Config(format!(
                "self-attention map {h}x{w} exceeds {ATTENTION_MAX_POSITIONS} positions; \
                 move attention to a coarser scale in the generator config"
            )));
        }
        let q_full = self.wq.forward(x, training)?;
        let cq = q_full.shape()[1];
        let q = q_full.reshape(&[n, cq, l]);
        let k = self.wk.forward(x, training)?.reshape(&[n, cq, l]);
        let v = self.wv.forward(x, training)?.reshape(&[n, c, l]);
        // attn[i, j] = softmax_j(q_i . k_j)
        let logits = q.bmm(&k, true, false);
        let attn = logits.softmax_lastdim();
        // out[:, i] = sum_j attn[i, j] v[:, j]
        let agg = v.bmm(&attn, false, true).reshape(&[n, c, h, w]);
        let g = self.gamma.reshape(&[1, 1, 1, 1]);
        Ok(x.add(&agg.mul_b(&g)))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.wq.params(&format!("{prefix}.wq"), out);
        self.wk.params(&format!("{prefix}.wk"), out);
        self.wv.params(&format!("{prefix}.wv"), out);
        out.add(format!("{prefix}.gamma"), &self.gamma);
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        self.wq.sn_states(&format!("{prefix}.wq"), out);
        self.wk.sn_states(&format!("{prefix}.wk"), out);
        self.wv.sn_states(&format!("{prefix}.wv"), out);
    }
}

/// Residual block with two 3x3 convs; norm sites run either instance norm or
/// AdaIN driven by the style mapping.
pub struct ResBlock<F: Scalar> {
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub use_adain: bool,
}

impl<F: Scalar> ResBlock<F> {
    pub fn new(channels: usize, sn: bool, use_adain: bool, rng: &mut ChaCha8Rng, seed: u64) -> Self {
        ResBlock {
            conv1: ConvLayer::new(sn, channels, channels, 3, 1, 1, true, rng, seed),
            conv2: ConvLayer::new(sn, channels, channels, 3, 1, 1, true, rng, seed.wrapping_add(1)),
            use_adain,
        }
    }

    /// `styles` supplies (scale, shift) for the two norm sites when AdaIN is on.
    pub fn forward(
        &self,
        x: &Var<F>,
        training: bool,
        styles: Option<(&(Var<F>, Var<F>), &(Var<F>, Var<F>))>,
    ) -> Result<Var<F>> {
        let h1 = self.conv1.forward(x, training)?;
        let n1 = match (self.use_adain, styles) {
            (true, Some((s1, _))) => adain(&h1, &s1.0, &s1.1),
            _ => instance_norm(&h1),
        };
        let a1 = n1.relu();
        let h2 = self.conv2.forward(&a1, training)?;
        let n2 = match (self.use_adain, styles) {
            (true, Some((_, s2))) => adain(&h2, &s2.0, &s2.1),
            _ => instance_norm(&h2),
        };
        Ok(x.add(&n2))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet<F>) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
    }

    pub fn sn_states(&self, prefix: &str, out: &mut SnStateSet<F>) {
        self.conv1.sn_states(&format!("{prefix}.conv1"), out);
        self.conv2.sn_states(&format!("{prefix}.conv2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use crate::tensor::gradcheck::check_grads;
    use ndarray::IxDyn;
    use rand::Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut r = rng();
        let x = Var::leaf(ArrayD::from_shape_fn(IxDyn(&[2, 3, 8, 8]), |_| {
            r.gen_range(-2.0..2.0)
        }));
        let y = instance_norm(&x);
        let d = y.to_array();
        for n in 0..2 {
            for c in 0..3 {
                let ch = d.slice(ndarray::s![n, c, .., ..]);
                let mu: f64 = ch.iter().sum::<f64>() / 64.0;
                let var: f64 = ch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 64.0;
                assert!(mu.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn adain_contract() {
        let mut r = rng();
        let x = Var::leaf(ArrayD::from_shape_fn(IxDyn(&[1, 2, 6, 6]), |_| {
            r.gen_range(-2.0..2.0)
        }));
        // scale=1 shift=0 -> standardized
        let one = Var::leaf(ArrayD::ones(IxDyn(&[2])));
        let zero = Var::leaf(ArrayD::zeros(IxDyn(&[2])));
        let y = adain(&x, &one, &zero).to_array();
        let ch = y.slice(ndarray::s![0, 0, .., ..]);
        let mu: f64 = ch.iter().sum::<f64>() / 36.0;
        let sd: f64 = (ch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 36.0).sqrt();
        assert!(mu.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-4);
        // scale=0 -> shift broadcast
        let shift = Var::leaf(ArrayD::from_elem(IxDyn(&[2]), 0.7));
        let y2 = adain(&x, &zero, &shift).to_array();
        assert!(y2.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        // constant channel -> shift exactly
        let xc = Var::leaf(ArrayD::from_elem(IxDyn(&[1, 2, 6, 6]), 3.25));
        let y3 = adain(&xc, &one, &shift).to_array();
        assert!(y3.iter().all(|&v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn adain_grads_match_fd() {
        let mut r = rng();
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 2, 4, 4]), |_| r.gen_range(-1.0..1.0));
        let sc = ArrayD::from_shape_fn(IxDyn(&[2]), |_| r.gen_range(0.5..1.5));
        let sh = ArrayD::from_shape_fn(IxDyn(&[2]), |_| r.gen_range(-0.5..0.5));
        check_grads(
            &[x, sc, sh],
            |vars| adain(&vars[0], &vars[1], &vars[2]).square().sum_all(),
            1e-5,
            1e-4,
        );
    }

    #[test]
    fn attention_identity_at_init() {
        let mut r = rng();
        let attn = SelfAttention::<f64>::new(8, false, &mut r, 100);
        let x = Var::leaf(ArrayD::from_shape_fn(IxDyn(&[2, 8, 4, 4]), |_| {
            r.gen_range(-1.0..1.0)
        }));
        let y = attn.forward(&x, false).unwrap();
        assert_eq!(x.to_array(), y.to_array());
    }

    #[test]
    fn attention_uniform_logits_mean_pool() {
        // constant input -> q, k constant -> uniform weights -> agg = mean of v
        let mut r = rng();
        let mut attn = SelfAttention::<f64>::new(4, false, &mut r, 200);
        attn.gamma = Var::param(ArrayD::ones(IxDyn(&[1])));
        let x = Var::leaf(ArrayD::from_elem(IxDyn(&[1, 4, 3, 3]), 0.5));
        let y = attn.forward(&x, false).unwrap().to_array();
        // v is constant over positions too, so out = x + mean(v) per channel
        let v = attn.wv.forward(&x, false).unwrap().to_array();
        for c in 0..4 {
            let expect = 0.5 + v[[0, c, 0, 0]];
            for i in 0..3 {
                for j in 0..3 {
                    assert!((y[[0, c, i, j]] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_single_position() {
        let mut r = rng();
        let mut attn = SelfAttention::<f64>::new(4, false, &mut r, 300);
        attn.gamma = Var::param(ArrayD::from_elem(IxDyn(&[1]), 0.3));
        let x = Var::leaf(ArrayD::from_shape_fn(IxDyn(&[1, 4, 1, 1]), |_| {
            r.gen_range(-1.0..1.0)
        }));
        let y = attn.forward(&x, false).unwrap().to_array();
        let v = attn.wv.forward(&x, false).unwrap().to_array();
        for c in 0..4 {
            let expect = x.to_array()[[0, c, 0, 0]] + 0.3 * v[[0, c, 0, 0]];
            assert!((y[[0, c, 0, 0]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_oversize_guard() {
        let mut r = rng();
        let attn = SelfAttention::<f64>::new(2, false, &mut r, 400);
        let x = Var::leaf(ArrayD::zeros(IxDyn(&[1, 2, 128, 64]))); // 8192 positions
        let err = attn.forward(&x, false).unwrap_err();
        assert!(err.to_string().contains("coarser scale"));
    }

    #[test]
    fn attention_grads_match_fd() {
        let mut r = rng();
        let mut attn = SelfAttention::<f64>::new(4, false, &mut r, 500);
        attn.gamma = Var::param(ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 4, 3, 3]), |_| r.gen_range(-1.0..1.0));
        check_grads(
            &[x],
            move |vars| attn.forward(&vars[0], false).unwrap().square().sum_all(),
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn linear_shapes_and_grads() {
        let mut r = rng();
        let lin = Linear::<f64>::new(5, 3, &mut r);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 5]), |_| r.gen_range(-1.0..1.0));
        let y = lin.forward(&Var::leaf(x.clone()));
        assert_eq!(y.shape(), vec![2, 3]);
        check_grads(
            &[x],
            move |vars| lin.forward(&vars[0]).square().sum_all(),
            1e-5,
            1e-6,
        );
    }
}
