use ndarray::{ArrayD, Zip};

use super::{Module, Scalar};
use crate::{Error, Result};

/// First and second moment estimates, one pair per parameter in
/// [`Module::params`] order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<F> {
    pub t: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<F>,
}

impl<F: Scalar> Default for Adam<F> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState {
                t: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }
}

impl<F: Scalar> Adam<F> {
    /// Applies one update from the gradients currently stored in `model`.
    pub fn step<M: Module<F> + ?Sized>(&mut self, model: &mut M, lr: f64) -> Result<()> {
        let mut params = model.params_mut();
        if self.state.m.is_empty() {
            self.state.m = params.iter().map(|(_, p)| ArrayD::zeros(p.value.raw_dim())).collect();
            self.state.v = self.state.m.clone();
        }
        if self.state.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, model has {}",
                self.state.m.len(),
                params.len()
            )));
        }
        self.state.t += 1;
        let t = self.state.t as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = F::one() - F::c(self.beta1.powi(t));
        let c2 = F::one() - F::c(self.beta2.powi(t));
        let (lr, eps) = (F::c(lr), F::c(self.eps));
        for (k, (name, p)) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            if m.shape() != p.value.shape() {
                return Err(Error::Shape(format!("optimizer moment shape differs for {name}")));
            }
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w = *w - lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// `lr0 · factor^floor(step / interval)`.
pub fn decayed_lr(lr0: f64, factor: f64, interval: u64, step: u64) -> f64 {
    if interval == 0 {
        return lr0;
    }
    lr0 * factor.powi((step / interval) as i32)
}
