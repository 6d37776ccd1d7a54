//! 3×3 convolutions and 2×2 average pooling on `(C, B, H, W)` tensors.

use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use super::{Module, Param, Scalar};

/// 3×3 convolution, padding 1, stride `(height, width)`.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    /// `(C_out, C_in·9)`, columns ordered `(c_in, ky, kx)`.
    pub w: Param<F>,
    pub b: Param<F>,
    pub stride: (usize, usize),
}

/// The unfolded input kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<F> {
    col: Array2<F>,
    input_dim: (usize, usize, usize, usize),
}

pub fn conv_output_size(input: usize, stride: usize) -> usize {
    (input - 1) / stride + 1
}

impl<F: Scalar> Conv2d<F> {
    pub fn zeros(c_in: usize, c_out: usize, stride: (usize, usize)) -> Self {
        Self {
            w: Param::zeros(&[c_out, c_in * 9]),
            b: Param::zeros(&[c_out]),
            stride,
        }
    }

    /// He-style uniform init for a ReLU that follows, zero bias.
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (c_in * 9) as f64).sqrt();
        Self {
            w: Param::uniform(&[c_out, c_in * 9], bound, rng),
            b: Param::zeros(&[c_out]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1] / 9
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_dim(&self, h: usize, w: usize) -> (usize, usize) {
        (conv_output_size(h, self.stride.0), conv_output_size(w, self.stride.1))
    }

    pub fn forward(&self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (c_in, b, h, w) = x.dim();
        assert_eq!(c_in, self.in_channels(), "conv input channels");
        let (ho, wo) = self.output_dim(h, w);
        let col = im2col(x, self.stride, ho, wo);
        let mut out = self.w.mat().dot(&col);
        for (mut row, &bias) in out.outer_iter_mut().zip(self.b.vec().iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let out = out
            .into_shape_with_order((self.out_channels(), b, ho, wo))
            .expect("contiguous conv output");
        let cache = ConvCache {
            col,
            input_dim: (c_in, b, h, w),
        };
        (out, cache)
    }

    /// Accumulates weight gradients; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        dout: &Array4<F>,
        cache: &ConvCache<F>,
        input_grad: bool,
    ) -> Option<Array4<F>> {
        let c_out = self.out_channels();
        let n = dout.len() / c_out;
        let d2 = dout
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c_out, n))
            .expect("contiguous gradient");
        let gw = d2.dot(&cache.col.t());
        self.w.grad_mat().zip_mut_with(&gw, |g, &d| *g = *g + d);
        let gb = d2.sum_axis(Axis(1));
        self.b.grad_vec().zip_mut_with(&gb, |g, &d| *g = *g + d);
        if !input_grad {
            return None;
        }
        let dcol = self.w.mat().t().dot(&d2);
        let (_, _, ho, wo) = dout.dim();
        Some(col2im(&dcol, cache.input_dim, self.stride, ho, wo))
    }

    pub fn cast<G: Scalar>(&self) -> Conv2d<G> {
        Conv2d {
            w: self.w.cast(),
            b: self.b.cast(),
            stride: self.stride,
        }
    }
}

impl<F: Scalar> Module<F> for Conv2d<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

/// Source index along one axis for output position `o` and kernel tap `k`.
#[inline]
fn tap(o: usize, stride: usize, k: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k).checked_sub(1)?;
    (i < len).then_some(i)
}

fn im2col<F: Scalar>(x: &Array4<F>, stride: (usize, usize), ho: usize, wo: usize) -> Array2<F> {
    let (c_in, b, h, w) = x.dim();
    let n = b * ho * wo;
    let mut col = Array2::zeros((c_in * 9, n));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("fresh array");
    for ci in 0..c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    for oy in 0..ho {
                        let Some(iy) = tap(oy, stride.0, ky, h) else {
                            continue;
                        };
                        let src = ((ci * b + bi) * h + iy) * w;
                        let dst = row + (bi * ho + oy) * wo;
                        for ox in 0..wo {
                            if let Some(ix) = tap(ox, stride.1, kx, w) {
                                cs[dst + ox] = xs[src + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: Scalar>(
    dcol: &Array2<F>,
    dim: (usize, usize, usize, usize),
    stride: (usize, usize),
    ho: usize,
    wo: usize,
) -> Array4<F> {
    let (c_in, b, h, w) = dim;
    let n = b * ho * wo;
    let mut dx = Array4::zeros(dim);
    let ds = dx.as_slice_mut().expect("fresh array");
    let cs = dcol.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    for ci in 0..c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    for oy in 0..ho {
                        let Some(iy) = tap(oy, stride.0, ky, h) else {
                            continue;
                        };
                        let dst = ((ci * b + bi) * h + iy) * w;
                        let src = row + (bi * ho + oy) * wo;
                        for ox in 0..wo {
                            if let Some(ix) = tap(ox, stride.1, kx, w) {
                                ds[dst + ix] = ds[dst + ix] + cs[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (c, b, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::c(0.25);
    Array4::from_shape_fn((c, b, ho, wo), |(ci, bi, y, xx)| {
        let (y0, x0) = (2 * y, 2 * xx);
        (x[[ci, bi, y0, x0]] + x[[ci, bi, y0, x0 + 1]] + x[[ci, bi, y0 + 1, x0]]
            + x[[ci, bi, y0 + 1, x0 + 1]])
            * quarter
    })
}

pub fn avg_pool2_backward<F: Scalar>(
    dout: &Array4<F>,
    input_dim: (usize, usize, usize, usize),
) -> Array4<F> {
    let mut dx = Array4::zeros(input_dim);
    let quarter = F::c(0.25);
    for ((ci, bi, y, xx), &d) in dout.indexed_iter() {
        let g = d * quarter;
        for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            dx[[ci, bi, 2 * y + dy, 2 * xx + dxx]] = g;
        }
    }
    dx
}

pub fn relu<F: Scalar>(mut x: Array4<F>) -> Array4<F> {
    x.mapv_inplace(|v| v.max(F::zero()));
    x
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<F: Scalar>(mut dout: Array4<F>, activated: &Array4<F>) -> Array4<F> {
    dout.zip_mut_with(activated, |d, &a| {
        if a <= F::zero() {
            *d = F::zero();
        }
    });
    dout
}
