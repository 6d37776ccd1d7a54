//! Gaussian attention window over the characters of a text.

use ndarray::{Array2, ArrayView2};

use crate::nn::Scalar;
use crate::{Error, Result};

/// Window mixture size.
pub const WINDOW_COMPONENTS: usize = 5;

/// Window parameters and output for one sequence at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Weight of character positions `u = 1..=U`.
    pub phi: Vec<f64>,
    pub w: Vec<f64>,
}

impl WindowState {
    /// State before the first step: all locations at zero, empty window.
    pub fn initial(components: usize, vocab: usize) -> Self {
        Self {
            alpha: vec![0.0; components],
            beta: vec![0.0; components],
            kappa: vec![0.0; components],
            phi: Vec::new(),
            w: vec![0.0; vocab],
        }
    }

    pub fn max_kappa(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One window update from the 3K raw outputs `(α̂, β̂, κ̂)`:
/// `α = exp α̂`, `β = exp β̂`, `κ = κ_prev + exp κ̂`,
/// `φ(u) = Σ_k α_k exp(−β_k (κ_k − u)²)`, `w = Σ_u φ(u) C[u]`.
///
/// `text` lists the character indices of `C`'s one-hot rows.
pub fn window_from_raw(
    raw: &[f64],
    kappa_prev: &[f64],
    text: &[usize],
    vocab: usize,
) -> Result<WindowState> {
    let k = kappa_prev.len();
    if raw.len() != 3 * k {
        return Err(Error::Shape(format!(
            "window needs {} raw values for {k} components, got {}",
            3 * k,
            raw.len()
        )));
    }
    if text.is_empty() {
        return Err(Error::Contract("attention window over an empty text".into()));
    }
    let alpha: Vec<f64> = raw[..k].iter().map(|v| v.exp()).collect();
    let beta: Vec<f64> = raw[k..2 * k].iter().map(|v| v.exp()).collect();
    let kappa: Vec<f64> = raw[2 * k..]
        .iter()
        .zip(kappa_prev)
        .map(|(v, kp)| kp + v.exp())
        .collect();
    let phi: Vec<f64> = (1..=text.len())
        .map(|u| {
            (0..k)
                .map(|j| alpha[j] * (-beta[j] * (kappa[j] - u as f64).powi(2)).exp())
                .sum()
        })
        .collect();
    let mut w = vec![0.0; vocab];
    for (&c, &p) in text.iter().zip(&phi) {
        w[c] += p;
    }
    Ok(WindowState {
        alpha,
        beta,
        kappa,
        phi,
        w,
    })
}

/// Batched window step; rows of `raw` are sequences.
#[derive(Clone, Debug)]
pub(crate) struct WindowBatch<F> {
    pub alpha: Array2<F>,
    pub beta: Array2<F>,
    pub kappa: Array2<F>,
    pub increment: Array2<F>,
    pub w: Array2<F>,
}

pub(crate) fn window_forward<F: Scalar>(
    raw: ArrayView2<'_, F>,
    kappa_prev: ArrayView2<'_, F>,
    texts: &[&[usize]],
    vocab: usize,
) -> WindowBatch<F> {
    let (b, k) = kappa_prev.dim();
    let alpha = Array2::from_shape_fn((b, k), |(i, j)| raw[[i, j]].exp());
    let beta = Array2::from_shape_fn((b, k), |(i, j)| raw[[i, k + j]].exp());
    let increment = Array2::from_shape_fn((b, k), |(i, j)| raw[[i, 2 * k + j]].exp());
    let kappa = &kappa_prev + &increment;
    let mut w = Array2::zeros((b, vocab));
    for (i, text) in texts.iter().enumerate() {
        for (u0, &c) in text.iter().enumerate() {
            let u = F::c((u0 + 1) as f64);
            let mut phi = F::zero();
            for j in 0..k {
                let d = kappa[[i, j]] - u;
                phi = phi + alpha[[i, j]] * (-beta[[i, j]] * d * d).exp();
            }
            w[[i, c]] = w[[i, c]] + phi;
        }
    }
    WindowBatch {
        alpha,
        beta,
        kappa,
        increment,
        w,
    }
}

/// Returns `(d raw, d κ_prev)` given the gradients at `w` and at `κ`.
pub(crate) fn window_backward<F: Scalar>(
    step: &WindowBatch<F>,
    texts: &[&[usize]],
    dw: ArrayView2<'_, F>,
    dkappa: ArrayView2<'_, F>,
) -> (Array2<F>, Array2<F>) {
    let (b, k) = step.kappa.dim();
    let mut draw = Array2::zeros((b, 3 * k));
    let mut dk = dkappa.to_owned();
    let two = F::c(2.0);
    for (i, text) in texts.iter().enumerate() {
        for (u0, &c) in text.iter().enumerate() {
            let dphi = dw[[i, c]];
            if dphi == F::zero() {
                continue;
            }
            let u = F::c((u0 + 1) as f64);
            for j in 0..k {
                let d = step.kappa[[i, j]] - u;
                let e = (-step.beta[[i, j]] * d * d).exp();
                let a = step.alpha[[i, j]];
                // α = exp α̂ so dα̂ = dα·α; likewise for β.
                draw[[i, j]] = draw[[i, j]] + dphi * e * a;
                draw[[i, k + j]] = draw[[i, k + j]] - dphi * a * e * d * d * step.beta[[i, j]];
                dk[[i, j]] = dk[[i, j]] - dphi * a * e * two * step.beta[[i, j]] * d;
            }
        }
    }
    for i in 0..b {
        for j in 0..k {
            draw[[i, 2 * k + j]] = dk[[i, j]] * step.increment[[i, j]];
        }
    }
    (draw, dk)
}
