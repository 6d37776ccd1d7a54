//! Small hand-written neural network layers on top of `ndarray`.
//!
//! Every layer is generic over the scalar type so the same code runs in `f32`
//! for training and in `f64` for finite-difference checks. Layers keep their
//! gradients next to their weights; backward passes accumulate into them.

mod adam;
mod conv;
mod linear;
mod lstm;

pub use adam::{decayed_lr, Adam, AdamState};
pub use conv::{
    avg_pool2, avg_pool2_backward, conv_output_size, relu, relu_backward, Conv2d, ConvCache,
};
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache, LstmState};

use std::fmt::{Debug, Display};

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;

/// Numeric element type of the models.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn c(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + NumAssign
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            F::c(rng.random_range(-bound..=bound))
        });
        Self::new(value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn mat(&self) -> ArrayView2<'_, F> {
        self.value.view().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    pub fn vec(&self) -> ArrayView1<'_, F> {
        self.value.view().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    pub fn grad_mat(&mut self) -> ArrayViewMut2<'_, F> {
        self.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    pub fn grad_vec(&mut self) -> ArrayViewMut1<'_, F> {
        self.grad.view_mut().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    /// Same values in another scalar type; the gradient is reset.
    pub fn cast<G: Scalar>(&self) -> Param<G> {
        Param::new(self.value.mapv(|v| G::from(v).unwrap()))
    }
}

/// Anything that owns named parameters.
pub trait Module<F: Scalar> {
    fn params(&self) -> Vec<(String, &Param<F>)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Euclidean norm of all gradients taken together.
    fn grad_norm(&self) -> F {
        let sq = self
            .params()
            .iter()
            .flat_map(|(_, p)| p.grad.iter())
            .fold(F::zero(), |acc, &g| acc + g * g);
        sq.sqrt()
    }

    fn scale_grads(&mut self, s: F) {
        for (_, p) in self.params_mut() {
            p.grad.mapv_inplace(|g| g * s);
        }
    }

    fn grads_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, p)| p.grad.iter().all(|g| g.is_finite()))
    }
}

pub(crate) fn with_prefix<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(n, p)| (format!("{prefix}/{n}"), p))
        .collect()
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
