use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Module, Param, Scalar};

/// `y = x Wᵀ + b` over a batch of rows.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Param::zeros(&[output, input]),
            b: Param::zeros(&[output]),
        }
    }

    /// Uniform weights in `±gain/sqrt(input)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (input as f64).sqrt();
        Self {
            w: Param::uniform(&[output, input], bound, rng),
            b: Param::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        x.dot(&self.w.mat().t()) + &self.b.vec()
    }

    /// Accumulates weight gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>) -> Array2<F> {
        self.accumulate(x, dy);
        dy.dot(&self.w.mat())
    }

    /// Like [`Linear::backward`] without the input gradient.
    pub fn accumulate(&mut self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>) {
        let gw = dy.t().dot(&x);
        self.w.grad_mat().zip_mut_with(&gw, |g, &d| *g = *g + d);
        let gb = dy.sum_axis(Axis(0));
        self.b.grad_vec().zip_mut_with(&gb, |g, &d| *g = *g + d);
    }

    pub fn cast<G: Scalar>(&self) -> Linear<G> {
        Linear {
            w: self.w.cast(),
            b: self.b.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}
