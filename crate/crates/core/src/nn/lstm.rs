use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{sigmoid, Module, Param, Scalar};

/// Hidden and cell state for a batch, each `(B, H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F> {
    pub h: Array2<F>,
    pub c: Array2<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }
}

/// Everything one step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    c_prev: Array2<F>,
    i: Array2<F>,
    f: Array2<F>,
    g: Array2<F>,
    o: Array2<F>,
    tc: Array2<F>,
}

/// Single-layer LSTM cell, gates packed as `[i | f | g | o]`.
#[derive(Clone, Debug)]
pub struct Lstm<F> {
    pub wx: Param<F>,
    pub wh: Param<F>,
    pub b: Param<F>,
}

impl<F: Scalar> Lstm<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Param::zeros(&[4 * hidden, input]),
            wh: Param::zeros(&[4 * hidden, hidden]),
            b: Param::zeros(&[4 * hidden]),
        }
    }

    /// Weights uniform in `±1/sqrt(hidden)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: Param::uniform(&[4 * hidden, input], bound, rng),
            wh: Param::uniform(&[4 * hidden, hidden], bound, rng),
            b: Param::zeros(&[4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.wx.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.shape()[1]
    }

    pub fn step(&self, x: ArrayView2<'_, F>, state: &LstmState<F>) -> (LstmState<F>, LstmCache<F>) {
        let h = self.hidden_size();
        let z = x.dot(&self.wx.mat().t()) + state.h.dot(&self.wh.mat().t()) + &self.b.vec();
        let i = z.slice(s![.., 0..h]).mapv(sigmoid);
        let f = z.slice(s![.., h..2 * h]).mapv(sigmoid);
        let g = z.slice(s![.., 2 * h..3 * h]).mapv(|v| v.tanh());
        let o = z.slice(s![.., 3 * h..]).mapv(sigmoid);
        let c = &f * &state.c + &i * &g;
        let tc = c.mapv(|v| v.tanh());
        let hn = &o * &tc;
        let cache = LstmCache {
            x: x.to_owned(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tc,
        };
        (LstmState { h: hn, c }, cache)
    }

    /// Backward through one step given the gradients arriving at its outputs.
    /// Returns `(dx, dh_prev, dc_prev)` and accumulates weight gradients.
    pub fn step_backward(
        &mut self,
        cache: &LstmCache<F>,
        dh: ArrayView2<'_, F>,
        dc_next: ArrayView2<'_, F>,
    ) -> (Array2<F>, Array2<F>, Array2<F>) {
        let hs = self.hidden_size();
        let (b, _) = dh.dim();
        let one = F::one();
        let mut dz = Array2::zeros((b, 4 * hs));
        let mut dc_prev = Array2::zeros((b, hs));
        let mut dc = Array2::zeros((b, hs));
        Zip::from(&mut dc)
            .and(&dh)
            .and(&dc_next)
            .and(&cache.o)
            .and(&cache.tc)
            .for_each(|dc, &dh, &dcn, &o, &tc| *dc = dcn + dh * o * (one - tc * tc));
        Zip::from(dz.slice_mut(s![.., 0..hs]))
            .and(&dc)
            .and(&cache.i)
            .and(&cache.g)
            .for_each(|dzi, &dc, &i, &g| *dzi = dc * g * i * (one - i));
        Zip::from(dz.slice_mut(s![.., hs..2 * hs]))
            .and(&mut dc_prev)
            .and(&dc)
            .and(&cache.f)
            .and(&cache.c_prev)
            .for_each(|dzf, dcp, &dc, &f, &cp| {
                *dzf = dc * cp * f * (one - f);
                *dcp = dc * f;
            });
        Zip::from(dz.slice_mut(s![.., 2 * hs..3 * hs]))
            .and(&dc)
            .and(&cache.i)
            .and(&cache.g)
            .for_each(|dzg, &dc, &i, &g| *dzg = dc * i * (one - g * g));
        Zip::from(dz.slice_mut(s![.., 3 * hs..]))
            .and(&dh)
            .and(&cache.o)
            .and(&cache.tc)
            .for_each(|dzo, &dh, &o, &tc| {
                *dzo = dh * tc * o * (one - o);
            });

        let gwx = dz.t().dot(&cache.x);
        self.wx.grad_mat().zip_mut_with(&gwx, |g, &d| *g = *g + d);
        let gwh = dz.t().dot(&cache.h_prev);
        self.wh.grad_mat().zip_mut_with(&gwh, |g, &d| *g = *g + d);
        let gb = dz.sum_axis(Axis(0));
        self.b.grad_vec().zip_mut_with(&gb, |g, &d| *g = *g + d);

        let dx = dz.dot(&self.wx.mat());
        let dh_prev = dz.dot(&self.wh.mat());
        (dx, dh_prev, dc_prev)
    }

    pub fn cast<G: Scalar>(&self) -> Lstm<G> {
        Lstm {
            wx: self.wx.cast(),
            wh: self.wh.cast(),
            b: self.b.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for Lstm<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        vec![
            ("wx".into(), &self.wx),
            ("wh".into(), &self.wh),
            ("b".into(), &self.b),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        vec![
            ("wx".into(), &mut self.wx),
            ("wh".into(), &mut self.wh),
            ("b".into(), &mut self.b),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_half_gates() {
        let l = Lstm::<f64>::zeros(3, 2);
        let mut st = LstmState::zeros(1, 2);
        st.c = array![[1.0, -2.0]];
        let (next, _) = l.step(array![[1.0, 2.0, 3.0]].view(), &st);
        // f = 0.5, g = 0, o = 0.5
        assert_eq!(next.c, array![[0.5, -1.0]]);
        assert!((next.h[[0, 0]] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }

    /// Loss = sum of h over a 3-step unroll plus the final c; checked against
    /// central differences on every weight and on the input.
    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lstm = Lstm::<f64>::init(2, 3, &mut rng);
        lstm.b = Param::uniform(&[12], 0.5, &mut rng);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|t| array![[0.3 * t as f64 - 0.2, 0.5], [-0.4, 0.1 * t as f64]])
            .collect();

        fn loss(l: &Lstm<f64>, xs: &[Array2<f64>]) -> f64 {
            let mut st = LstmState::zeros(2, 3);
            let mut total = 0.0;
            for x in xs {
                st = l.step(x.view(), &st).0;
                total += st.h.sum();
            }
            total + st.c.sum()
        }

        let mut st = LstmState::zeros(2, 3);
        let mut caches = Vec::new();
        for x in &xs {
            let (n, c) = lstm.step(x.view(), &st);
            caches.push(c);
            st = n;
        }
        let mut dh = Array2::<f64>::zeros((2, 3));
        let mut dc = Array2::<f64>::ones((2, 3));
        let mut dx0 = Array2::zeros((2, 2));
        for (t, c) in caches.iter().enumerate().rev() {
            dh += 1.0;
            let (dx, dhp, dcp) = lstm.step_backward(c, dh.view(), dc.view());
            if t == 0 {
                dx0 = dx;
            }
            dh = dhp;
            dc = dcp;
        }

        let eps = 1e-6;
        let names: Vec<String> = lstm.params().into_iter().map(|(n, _)| n).collect();
        for (k, name) in names.iter().enumerate() {
            let n = lstm.params()[k].1.value.len();
            for j in 0..n {
                let mut plus = lstm.clone();
                plus.params_mut()[k].1.value.as_slice_mut().unwrap()[j] += eps;
                let mut minus = lstm.clone();
                minus.params_mut()[k].1.value.as_slice_mut().unwrap()[j] -= eps;
                let fd = (loss(&plus, &xs) - loss(&minus, &xs)) / (2.0 * eps);
                let an = lstm.params()[k].1.grad.as_slice().unwrap()[j];
                assert!((fd - an).abs() < 1e-7, "{name}[{j}]: fd {fd} vs {an}");
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                let mut p = xs.clone();
                p[0][[r, c]] += eps;
                let mut m = xs.clone();
                m[0][[r, c]] -= eps;
                let fd = (loss(&lstm, &p) - loss(&lstm, &m)) / (2.0 * eps);
                assert!((fd - dx0[[r, c]]).abs() < 1e-7);
            }
        }
    }
}
