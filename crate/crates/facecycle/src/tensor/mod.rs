//! Minimal reverse-mode autodiff over `ndarray`, generic over f32/f64.
//!
//! A [`Var`] wraps a dynamic-dim array plus an optional backward closure.
//! Graphs are built define-by-run and freed when the root value drops.
//! Training runs in f32; gradient verification runs the same ops in f64.

mod conv;
pub mod gradcheck;
mod ops;

pub use conv::*;

use ndarray::{ArrayD, IxDyn};
use num_traits::FromPrimitive;
use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

/// Element type for all tensor math.
pub trait Scalar: ndarray::NdFloat + FromPrimitive + Send + Sync + 'static {
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant conversion")
    }
    fn f64(self) -> f64;
    /// Round through half precision under emulated mixed precision; identity
    /// for f64.
    fn quantize_half(self) -> Self {
        self
    }
}

impl Scalar for f32 {
    fn f64(self) -> f64 {
        self as f64
    }
    fn quantize_half(self) -> f32 {
        round_through_f16(self)
    }
}
impl Scalar for f64 {
    fn f64(self) -> f64 {
        self
    }
}

pub type Arr<F> = ArrayD<F>;

type GradFn<F> = Box<dyn Fn(&Arr<F>) -> Vec<Option<Arr<F>>>>;

struct BackwardOp<F: Scalar> {
    parents: Vec<Var<F>>,
    grad_fn: GradFn<F>,
}

struct Node<F: Scalar> {
    data: RefCell<Arr<F>>,
    grad: RefCell<Option<Arr<F>>>,
    requires_grad: Cell<bool>,
    op: RefCell<Option<BackwardOp<F>>>,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static HALF_GEMM: Cell<bool> = const { Cell::new(false) };
}

/// Round an f32 through IEEE half precision (round-to-nearest-even).
pub fn round_through_f16(x: f32) -> f32 {
    let bits = x.to_bits();
    let sign = bits >> 31;
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = bits & 0x7f_ffff;
    if exp == 0xff {
        return x; // inf / nan pass through
    }
    let unbiased = exp - 127;
    if unbiased > 15 {
        return if sign == 1 { f32::NEG_INFINITY } else { f32::INFINITY };
    }
    if unbiased < -24 {
        return if sign == 1 { -0.0 } else { 0.0 };
    }
    if unbiased < -14 {
        // subnormal half: quantize the significand to the representable grid
        let shift = -14 - unbiased; // 1..=10 extra bits dropped
        let mant = (1 << 23) | frac; // implicit one
        let drop = 13 + shift;
        let kept = mant >> drop;
        let rem = mant & ((1u32 << drop) - 1);
        let half = 1u32 << (drop - 1);
        let kept = if rem > half || (rem == half && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        };
        let val = kept as f32 * (2.0f32).powi(unbiased + drop as i32 - 23);
        return if sign == 1 { -val } else { val };
    }
    // normal half: keep 10 fraction bits with round-to-nearest-even
    let drop = 13u32;
    let kept = frac >> drop;
    let rem = frac & ((1 << drop) - 1);
    let half = 1u32 << (drop - 1);
    let mut kept = kept as u64;
    let mut exp_out = exp as u64;
    if rem > half || (rem == half && kept & 1 == 1) {
        kept += 1;
        if kept == 1 << 10 {
            kept = 0;
            exp_out += 1;
        }
    }
    let out_bits = ((sign as u64) << 31 | exp_out << 23 | kept << drop) as u32;
    f32::from_bits(out_bits)
}

/// Enable/disable emulated mixed precision: conv and matmul outputs are
/// rounded through f16 while spectral-norm power iteration and loss
/// reductions stay in full precision.
pub struct HalfGemmGuard(bool);

impl HalfGemmGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = HALF_GEMM.with(|g| g.replace(enabled));
        HalfGemmGuard(prev)
    }
}

impl Drop for HalfGemmGuard {
    fn drop(&mut self) {
        HALF_GEMM.with(|g| g.set(self.0));
    }
}

pub fn half_gemm_enabled() -> bool {
    HALF_GEMM.with(|g| g.get())
}

/// RAII guard disabling graph recording on the current thread.
pub struct NoGrad(bool);

impl NoGrad {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGrad(prev)
    }
}

impl Default for NoGrad {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGrad {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Shared handle to a node in the autodiff graph.
pub struct Var<F: Scalar> {
    node: Rc<Node<F>>,
}

impl<F: Scalar> Clone for Var<F> {
    fn clone(&self) -> Self {
        Var {
            node: Rc::clone(&self.node),
        }
    }
}

impl<F: Scalar> Var<F> {
    /// Constant leaf: no gradient is ever accumulated here.
    pub fn leaf(data: Arr<F>) -> Self {
        Var {
            node: Rc::new(Node {
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                op: RefCell::new(None),
            }),
        }
    }

    /// Trainable leaf: gradients accumulate into `grad` on backward.
    pub fn param(data: Arr<F>) -> Self {
        let v = Var::leaf(data);
        v.node.requires_grad.set(true);
        v
    }

    pub fn scalar_value(v: F) -> Self {
        Var::leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Interior node. The backward closure maps d(out) to per-parent gradients.
    /// Recording is skipped when grads are disabled or no parent needs them.
    pub fn from_op(data: Arr<F>, parents: Vec<Var<F>>, grad_fn: GradFn<F>) -> Self {
        let record = grad_enabled() && parents.iter().any(|p| p.needs_grad());
        let v = Var::leaf(data);
        if record {
            *v.node.op.borrow_mut() = Some(BackwardOp { parents, grad_fn });
        }
        v
    }

    fn needs_grad(&self) -> bool {
        self.node.requires_grad.get() || self.node.op.borrow().is_some()
    }

    pub fn requires_grad(&self) -> bool {
        self.needs_grad()
    }

    pub fn data(&self) -> Ref<'_, Arr<F>> {
        self.node.data.borrow()
    }

    pub fn to_array(&self) -> Arr<F> {
        self.node.data.borrow().clone()
    }

    /// Replace the stored data in place (used by optimizers on leaves).
    pub fn set_data(&self, data: Arr<F>) {
        *self.node.data.borrow_mut() = data;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.data.borrow().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.node.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        let d = self.node.data.borrow();
        debug_assert_eq!(d.len(), 1, "item() on non-scalar");
        *d.iter().next().expect("empty tensor")
    }

    pub fn grad(&self) -> Option<Arr<F>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn accumulate_grad(&self, g: &Arr<F>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += g,
            None => *slot = Some(g.clone()),
        }
    }

    /// New constant leaf sharing this node's current values.
    pub fn detach(&self) -> Var<F> {
        Var::leaf(self.node.data.borrow().clone())
    }

    /// Reverse pass seeded with ones (use on scalar losses).
    pub fn backward(&self) {
        let seed = Arr::ones(self.node.data.borrow().raw_dim());
        self.backward_with(seed);
    }

    pub fn backward_with(&self, seed: Arr<F>) {
        assert_eq!(
            seed.shape(),
            self.node.data.borrow().shape(),
            "backward seed shape mismatch"
        );
        // Iterative post-order topological sort over recorded ops.
        let mut topo: Vec<Var<F>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Var<F>, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&v.node) as usize;
            if expanded {
                topo.push(v);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((v.clone(), true));
            if let Some(op) = v.node.op.borrow().as_ref() {
                for p in &op.parents {
                    if p.node.op.borrow().is_some() || p.node.requires_grad.get() {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        self.accumulate_grad(&seed);
        for v in topo.iter().rev() {
            let grad_out = match v.node.grad.borrow().as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let op_ref = v.node.op.borrow();
            let Some(op) = op_ref.as_ref() else { continue };
            let pgrads = (op.grad_fn)(&grad_out);
            debug_assert_eq!(pgrads.len(), op.parents.len());
            for (p, pg) in op.parents.iter().zip(pgrads) {
                if let Some(pg) = pg {
                    if p.needs_grad() {
                        debug_assert_eq!(
                            pg.shape(),
                            p.node.data.borrow().shape(),
                            "gradient shape mismatch"
                        );
                        p.accumulate_grad(&pg);
                    }
                }
            }
        }
    }
}

impl<F: Scalar> std::fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}
