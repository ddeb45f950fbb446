//! Adam optimizer over a registered parameter set.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Arr, Scalar, Var};
use ndarray::ArrayD;

pub struct Adam<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    params: Vec<(String, Var<F>)>,
    m: Vec<Arr<F>>,
    v: Vec<Arr<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamSet<F>, beta1: f64, beta2: f64) -> Self {
        let m = params
            .entries
            .iter()
            .map(|(_, p)| ArrayD::zeros(p.data().raw_dim()))
            .collect();
        let v = params
            .entries
            .iter()
            .map(|(_, p)| ArrayD::zeros(p.data().raw_dim()))
            .collect();
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            params: params.entries.clone(),
            m,
            v,
        }
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// One update with the given learning rate. Parameters without a gradient
    /// this step are left untouched.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = F::c(self.beta1);
        let b2 = F::c(self.beta2);
        let one = F::one();
        let bc1 = F::c(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::c(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::c(lr);
        let eps = F::c(self.eps);
        for (i, (name, p)) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter '{name}'"
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(&g).for_each(|mv, &gv| {
                *mv = b1 * *mv + (one - b1) * gv;
            });
            ndarray::Zip::from(&mut *v).and(&g).for_each(|vv, &gv| {
                *vv = b2 * *vv + (one - b2) * gv * gv;
            });
            let mut data = p.to_array();
            ndarray::Zip::from(&mut data)
                .and(&*m)
                .and(&*v)
                .for_each(|d, &mv, &vv| {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *d = *d - lr * mhat / (vhat.sqrt() + eps);
                });
            p.set_data(data);
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Moment buffers for checkpointing, keyed like the parameters.
    pub fn state(&self) -> (u64, Vec<(String, Arr<F>)>, Vec<(String, Arr<F>)>) {
        let m = self
            .params
            .iter()
            .zip(&self.m)
            .map(|((n, _), a)| (n.clone(), a.clone()))
            .collect();
        let v = self
            .params
            .iter()
            .zip(&self.v)
            .map(|((n, _), a)| (n.clone(), a.clone()))
            .collect();
        (self.t, m, v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<(String, Arr<F>)>, v: Vec<(String, Arr<F>)>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        self.t = t;
        for (i, (name, arr)) in m.into_iter().enumerate() {
            if name != self.params[i].0 {
                return Err(Error::Checkpoint(format!(
                    "optimizer m-state key mismatch: {name} vs {}",
                    self.params[i].0
                )));
            }
            self.m[i] = arr;
        }
        for (i, (name, arr)) in v.into_iter().enumerate() {
            if name != self.params[i].0 {
                return Err(Error::Checkpoint(format!(
                    "optimizer v-state key mismatch: {name} vs {}",
                    self.params[i].0
                )));
            }
            self.v[i] = arr;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn adam_descends_quadratic() {
        let p = Var::param(ArrayD::from_elem(IxDyn(&[2]), 5.0_f64));
        let mut set = ParamSet::default();
        set.add("p", &p);
        let mut opt = Adam::new(&set, 0.9, 0.999);
        for _ in 0..300 {
            set.zero_grads();
            let loss = p.square().sum_all();
            loss.backward();
            opt.step(0.05).unwrap();
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn adam_rejects_non_finite_grads() {
        let p = Var::param(ArrayD::from_elem(IxDyn(&[1]), 1.0_f64));
        let mut set = ParamSet::default();
        set.add("theta", &p);
        let mut opt = Adam::new(&set, 0.5, 0.999);
        p.accumulate_grad(&ArrayD::from_elem(IxDyn(&[1]), f64::NAN));
        let err = opt.step(0.1).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
