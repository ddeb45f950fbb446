//! Training schedule: TTUR phase, learning-rate decay, progressive resizing,
//! EMA and global-norm clipping.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Arr, Scalar};
use serde::{Deserialize, Serialize};

fn default_total_iters() -> usize {
    2000
}
fn default_ttur_phase() -> f64 {
    0.25
}
fn default_ttur_ratio() -> usize {
    2
}
fn default_lr0() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_ema() -> f64 {
    0.999
}
fn default_clip() -> f64 {
    10.0
}
fn default_resize_switch() -> f64 {
    0.5
}
fn default_resolutions() -> Vec<usize> {
    vec![128, 256]
}
fn default_batch() -> usize {
    4
}
fn default_accum() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub total_iters: usize,
    /// Fraction of training with `ttur_ratio` D updates per G update.
    pub ttur_phase_frac: f64,
    pub ttur_ratio: usize,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub ema_decay: f64,
    pub clip_max_norm: f64,
    pub resize_switch_frac: f64,
    /// One entry trains at a fixed resolution; two entries switch at
    /// `resize_switch_frac`.
    pub resolutions: Vec<usize>,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step (loss scaled by 1/n).
    pub grad_accum: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_iters: default_total_iters(),
            ttur_phase_frac: default_ttur_phase(),
            ttur_ratio: default_ttur_ratio(),
            lr0: default_lr0(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            ema_decay: default_ema(),
            clip_max_norm: default_clip(),
            resize_switch_frac: default_resize_switch(),
            resolutions: default_resolutions(),
            batch_size: default_batch(),
            grad_accum: default_accum(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::Config("total_iters must be positive".into()));
        }
        if !(self.ttur_phase_frac > 0.0 && self.ttur_phase_frac < 1.0) {
            return Err(Error::Config("ttur_phase_frac must be in (0, 1)".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0, 1)".into()));
        }
        if !(self.clip_max_norm > 0.0) {
            return Err(Error::Config("clip_max_norm must be positive".into()));
        }
        if self.resolutions.is_empty() || self.resolutions.len() > 2 {
            return Err(Error::Config("resolutions must have 1 or 2 entries".into()));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("batch_size and grad_accum must be positive".into()));
        }
        Ok(())
    }

    /// (d_steps, g_steps) at an iteration; the TTUR phase boundary is
    /// exclusive at floor(ttur_phase_frac * total_iters).
    pub fn ttur_steps(&self, iter: usize) -> (usize, usize) {
        let boundary = (self.ttur_phase_frac * self.total_iters as f64).floor() as usize;
        if iter < boundary {
            (self.ttur_ratio, 1)
        } else {
            (1, 1)
        }
    }

    /// Constant lr0 for the first half, then linear to zero at total_iters.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let half = self.total_iters as f64 / 2.0;
        let it = iter as f64;
        if it < half {
            self.lr0
        } else {
            self.lr0 * (1.0 - (it - half) / half)
        }
    }

    /// Input resolution at an iteration under progressive resizing.
    pub fn current_resolution(&self, iter: usize) -> usize {
        if self.resolutions.len() == 1 {
            return self.resolutions[0];
        }
        let switch = (self.resize_switch_frac * self.total_iters as f64).floor() as usize;
        if iter < switch {
            self.resolutions[0]
        } else {
            self.resolutions[1]
        }
    }

    /// Expected optimizer update counts over a whole run.
    pub fn expected_update_counts(&self) -> (usize, usize) {
        let boundary = (self.ttur_phase_frac * self.total_iters as f64).floor() as usize;
        let d = self.ttur_ratio * boundary + (self.total_iters - boundary);
        (d, self.total_iters)
    }
}

/// Shadow parameter copies tracked with exponential decay.
pub struct EmaShadow<F: Scalar> {
    pub named: Vec<(String, Arr<F>)>,
    pub decay: f64,
}

impl<F: Scalar> EmaShadow<F> {
    pub fn new(params: &ParamSet<F>, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("ema decay must be in [0, 1), got {decay}")));
        }
        Ok(EmaShadow {
            named: params
                .entries
                .iter()
                .map(|(n, p)| (n.clone(), p.to_array()))
                .collect(),
            decay,
        })
    }

    /// shadow' = decay * shadow + (1 - decay) * live, elementwise.
    pub fn update(&mut self, params: &ParamSet<F>) {
        ema_update_arrays(
            &mut self.named,
            &params
                .entries
                .iter()
                .map(|(n, p)| (n.clone(), p.to_array()))
                .collect::<Vec<_>>(),
            self.decay,
        );
    }

    /// Swap shadow values into the live parameters, returning the previous
    /// live values so they can be restored.
    pub fn apply_to(&self, params: &ParamSet<F>) -> Vec<(String, Arr<F>)> {
        let saved: Vec<(String, Arr<F>)> = params
            .entries
            .iter()
            .map(|(n, p)| (n.clone(), p.to_array()))
            .collect();
        for ((_, p), (_, shadow)) in params.entries.iter().zip(&self.named) {
            p.set_data(shadow.clone());
        }
        saved
    }
}

/// Elementwise EMA update on named arrays.
pub fn ema_update_arrays<F: Scalar>(
    shadow: &mut [(String, Arr<F>)],
    live: &[(String, Arr<F>)],
    decay: f64,
) {
    let d = F::c(decay);
    let one_minus = F::c(1.0 - decay);
    for ((_, s), (_, l)) in shadow.iter_mut().zip(live) {
        ndarray::Zip::from(s).and(l).for_each(|sv, &lv| {
            *sv = d * *sv + one_minus * lv;
        });
    }
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm. The norm and scale factor are accumulated in
/// f64 regardless of the parameter precision.
pub fn clip_global_norm<F: Scalar>(
    params: &ParamSet<F>,
    max_norm: f64,
    group: &str,
) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config("clip_global_norm: max_norm must be positive".into()));
    }
    let mut sumsq = 0.0f64;
    for (name, p) in &params.entries {
        if let Some(g) = p.grad() {
            for &v in g.iter() {
                let v = v.f64();
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in group '{group}' (parameter '{name}')"
                    )));
                }
                sumsq += v * v;
            }
        }
    }
    let norm = sumsq.sqrt();
    if norm > max_norm {
        let scale = F::c(max_norm / norm);
        for (_, p) in &params.entries {
            if let Some(mut g) = p.grad() {
                g.mapv_inplace(|v| v * scale);
                p.zero_grad();
                p.accumulate_grad(&g);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Var;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ttur_boundary_rule() {
        let s = TrainSchedule {
            total_iters: 1000,
            ..Default::default()
        };
        assert_eq!(s.ttur_steps(0), (2, 1));
        assert_eq!(s.ttur_steps(249), (2, 1));
        assert_eq!(s.ttur_steps(250), (1, 1)); // boundary exclusive
        assert_eq!(s.ttur_steps(999), (1, 1));
        assert_eq!(s.expected_update_counts(), (2 * 250 + 750, 1000));
    }

    #[test]
    fn lr_piecewise_linear() {
        let s = TrainSchedule {
            total_iters: 1000,
            lr0: 2e-4,
            ..Default::default()
        };
        let probes = [(0usize, 2e-4), (499, 2e-4), (500, 2e-4), (750, 1e-4), (999, 4e-7)];
        for (it, expect) in probes {
            let got = s.lr_at(it);
            assert!(
                (got - expect).abs() < 1e-9,
                "iter {it}: lr {got} vs {expect}"
            );
        }
    }

    #[test]
    fn resolution_switch() {
        let s = TrainSchedule {
            total_iters: 100,
            resolutions: vec![128, 256],
            ..Default::default()
        };
        assert_eq!(s.current_resolution(0), 128);
        assert_eq!(s.current_resolution(49), 128);
        assert_eq!(s.current_resolution(50), 256);
        let single = TrainSchedule {
            resolutions: vec![64],
            ..Default::default()
        };
        assert_eq!(single.current_resolution(0), 64);
        assert_eq!(single.current_resolution(1999), 64);
    }

    #[test]
    fn ema_geometric_closed_form() {
        // constant live value w for k steps: shadow = w + (s0 - w) * decay^k
        let p = Var::param(ArrayD::from_elem(IxDyn(&[3]), 2.0_f64));
        let mut set = ParamSet::default();
        set.add("p", &p);
        let mut ema = EmaShadow::new(&set, 0.9).unwrap();
        // shadow starts at live = 2.0; reset it to 5.0 to have s0 != w
        ema.named[0].1.fill(5.0);
        for _ in 0..10 {
            ema.update(&set);
        }
        let expect = 2.0 + (5.0 - 2.0) * 0.9f64.powi(10);
        for v in ema.named[0].1.iter() {
            assert!((v - expect).abs() < 1e-9);
        }
        // decay = 0 copies live immediately
        let mut ema0 = EmaShadow::new(&set, 0.0).unwrap();
        ema0.named[0].1.fill(7.0);
        ema0.update(&set);
        assert!(ema0.named[0].1.iter().all(|v| (*v - 2.0).abs() < 1e-12));
        // decay = 1 rejected
        assert!(EmaShadow::new(&set, 1.0).is_err());
    }

    #[test]
    fn ema_random_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut shadow = vec![(
            "a".to_string(),
            ArrayD::<f64>::from_shape_fn(IxDyn(&[4, 3]), |_| rng.gen_range(-1.0..1.0)),
        )];
        let live = vec![(
            "a".to_string(),
            ArrayD::from_shape_fn(IxDyn(&[4, 3]), |_| rng.gen_range(-1.0..1.0)),
        )];
        let before = shadow[0].1.clone();
        ema_update_arrays(&mut shadow, &live, 0.73);
        for ((s, b), l) in shadow[0].1.iter().zip(before.iter()).zip(live[0].1.iter()) {
            assert!((s - (0.73 * b + 0.27 * l)).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_cases() {
        let p = Var::param(ArrayD::<f64>::zeros(IxDyn(&[2])));
        let mut set = ParamSet::default();
        set.add("p", &p);
        // norm below max: unchanged
        p.accumulate_grad(&ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.6, 0.8]).unwrap());
        let norm = clip_global_norm(&set, 10.0, "g").unwrap();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(p.grad().unwrap()[[0]], 0.6);
        // (3, 4) with max 1 -> (0.6, 0.8)
        p.zero_grad();
        p.accumulate_grad(&ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0, 4.0]).unwrap());
        clip_global_norm(&set, 1.0, "g").unwrap();
        let g = p.grad().unwrap();
        assert!((g[[0]] - 0.6).abs() < 1e-12 && (g[[1]] - 0.8).abs() < 1e-12);
        // random pytree: post-norm exactly max within 1e-6
        let q = Var::param(ArrayD::<f64>::zeros(IxDyn(&[7, 5])));
        set.add("q", &q);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        p.zero_grad();
        p.accumulate_grad(&ArrayD::from_shape_fn(IxDyn(&[2]), |_| rng.gen_range(-3.0..3.0)));
        q.accumulate_grad(&ArrayD::from_shape_fn(IxDyn(&[7, 5]), |_| rng.gen_range(-3.0..3.0)));
        clip_global_norm(&set, 2.0, "g").unwrap();
        let mut sumsq = 0.0;
        for (_, v) in &set.entries {
            sumsq += v.grad().unwrap().iter().map(|x| x * x).sum::<f64>();
        }
        assert!((sumsq.sqrt() - 2.0).abs() < 1e-6);
        // non-finite gradient errors with the group name
        q.zero_grad();
        q.accumulate_grad(&ArrayD::from_elem(IxDyn(&[7, 5]), f64::INFINITY));
        let err = clip_global_norm(&set, 1.0, "discriminator").unwrap_err();
        assert!(err.to_string().contains("discriminator"));
    }
}
