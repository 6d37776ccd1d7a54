use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdn::{mdn_split, raw_size, MdnParams, MIXTURES};
use super::{head_grad, input_row, teacher_inputs, StrokeGenerator};
use crate::data::TextEncoding;
use crate::nn::{with_prefix, Linear, Lstm, LstmCache, LstmState, Module, Param, Scalar};
use crate::stroke::OffsetPoint;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    /// Hidden sizes of the three stacked LSTMs.
    pub hidden: [usize; 3],
    pub mixtures: usize,
}

impl PredictionConfig {
    /// LSTMs of 512, 256 and 512 units, 20 mixture components.
    pub fn full() -> Self {
        Self {
            hidden: [512, 256, 512],
            mixtures: MIXTURES,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden: [32, 16, 32],
            mixtures: 5,
        }
    }

    pub fn tiny() -> Self {
        Self {
            hidden: [4, 4, 4],
            mixtures: 2,
        }
    }

    /// Input widths of the three LSTMs: the point, then hidden ⊕ point.
    pub fn input_widths(&self) -> [usize; 3] {
        [3, self.hidden[0] + 3, self.hidden[1] + 3]
    }

    pub fn head_input(&self) -> usize {
        self.hidden.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.mixtures == 0 {
            return Err(Error::InvalidConfig(
                "prediction network sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Three stacked LSTMs with skip connections from the input point and a
/// mixture head reading all three hidden states.
#[derive(Clone, Debug)]
pub struct PredictionNet<F> {
    config: PredictionConfig,
    pub lstm1: Lstm<F>,
    pub lstm2: Lstm<F>,
    pub lstm3: Lstm<F>,
    pub fc: Linear<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionState<F> {
    pub l1: LstmState<F>,
    pub l2: LstmState<F>,
    pub l3: LstmState<F>,
}

struct StepCache<F> {
    c1: LstmCache<F>,
    c2: LstmCache<F>,
    c3: LstmCache<F>,
    head_in: Array2<F>,
}

impl<F: Scalar> PredictionNet<F> {
    pub fn new<R: Rng + ?Sized>(config: PredictionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [i1, i2, i3] = config.input_widths();
        let [h1, h2, h3] = config.hidden;
        Ok(Self {
            lstm1: Lstm::init(i1, h1, rng),
            lstm2: Lstm::init(i2, h2, rng),
            lstm3: Lstm::init(i3, h3, rng),
            fc: Linear::init(config.head_input(), raw_size(config.mixtures), 1.0, rng),
            config,
        })
    }

    pub fn zeros(config: PredictionConfig) -> Result<Self> {
        config.validate()?;
        let [i1, i2, i3] = config.input_widths();
        let [h1, h2, h3] = config.hidden;
        Ok(Self {
            lstm1: Lstm::zeros(i1, h1),
            lstm2: Lstm::zeros(i2, h2),
            lstm3: Lstm::zeros(i3, h3),
            fc: Linear::zeros(config.head_input(), raw_size(config.mixtures)),
            config,
        })
    }

    pub fn config(&self) -> &PredictionConfig {
        &self.config
    }

    pub fn initial_state(&self, batch: usize) -> PredictionState<F> {
        let [h1, h2, h3] = self.config.hidden;
        PredictionState {
            l1: LstmState::zeros(batch, h1),
            l2: LstmState::zeros(batch, h2),
            l3: LstmState::zeros(batch, h3),
        }
    }

    fn step_batch(
        &self,
        x: ArrayView2<'_, F>,
        st: &PredictionState<F>,
    ) -> (Array2<F>, PredictionState<F>, StepCache<F>) {
        let (l1, c1) = self.lstm1.step(x, &st.l1);
        let in2 = concatenate(Axis(1), &[l1.h.view(), x]).expect("equal batch");
        let (l2, c2) = self.lstm2.step(in2.view(), &st.l2);
        let in3 = concatenate(Axis(1), &[l2.h.view(), x]).expect("equal batch");
        let (l3, c3) = self.lstm3.step(in3.view(), &st.l3);
        let head_in =
            concatenate(Axis(1), &[l1.h.view(), l2.h.view(), l3.h.view()]).expect("equal batch");
        let raw = self.fc.forward(head_in.view());
        (
            raw,
            PredictionState { l1, l2, l3 },
            StepCache { c1, c2, c3, head_in },
        )
    }

    /// Raw head output for one point, advancing `state` (batch of one).
    pub fn raw_step(&self, x: &OffsetPoint, state: &PredictionState<F>) -> (Vec<f64>, PredictionState<F>) {
        let xin = input_row::<F>(x);
        let (raw, next, _) = self.step_batch(xin.view(), state);
        (raw.row(0).iter().map(|v| v.to_f64().unwrap()).collect(), next)
    }

    /// One step of the network: the distribution of the next point.
    pub fn gp_forward(
        &self,
        x: &OffsetPoint,
        state: &PredictionState<F>,
    ) -> Result<(MdnParams, PredictionState<F>)> {
        let (raw, next) = self.raw_step(x, state);
        Ok((mdn_split(&raw, self.config.mixtures)?, next))
    }

    pub fn cast<G: Scalar>(&self) -> PredictionNet<G> {
        PredictionNet {
            config: self.config.clone(),
            lstm1: self.lstm1.cast(),
            lstm2: self.lstm2.cast(),
            lstm3: self.lstm3.cast(),
            fc: self.fc.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for PredictionNet<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = with_prefix("lstm1", self.lstm1.params());
        out.extend(with_prefix("lstm2", self.lstm2.params()));
        out.extend(with_prefix("lstm3", self.lstm3.params()));
        out.extend(with_prefix("fc", self.fc.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = with_prefix("lstm1", self.lstm1.params_mut());
        out.extend(with_prefix("lstm2", self.lstm2.params_mut()));
        out.extend(with_prefix("lstm3", self.lstm3.params_mut()));
        out.extend(with_prefix("fc", self.fc.params_mut()));
        out
    }
}

impl<F: Scalar> StrokeGenerator<F> for PredictionNet<F> {
    type State = PredictionState<F>;

    fn mixtures(&self) -> usize {
        self.config.mixtures
    }

    fn needs_text(&self) -> bool {
        false
    }

    fn start(&self, _text: Option<&TextEncoding>) -> Result<Self::State> {
        Ok(self.initial_state(1))
    }

    fn next_raw(
        &self,
        x: &OffsetPoint,
        state: &mut Self::State,
        _text: Option<&TextEncoding>,
    ) -> Result<Vec<f64>> {
        let (raw, next) = self.raw_step(x, state);
        *state = next;
        Ok(raw)
    }

    fn finished(&self, _state: &Self::State, _text: Option<&TextEncoding>) -> bool {
        false
    }

    fn sequence_nll(
        &mut self,
        seqs: &[Vec<OffsetPoint>],
        _texts: &[Option<TextEncoding>],
        weights: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let inputs = teacher_inputs::<F>(seqs)?;
        let b = seqs.len();
        let mut st = self.initial_state(b);
        let mut nll = vec![0.0; b];
        let mut caches = Vec::with_capacity(inputs.len());
        let mut draws = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let (raw, next, cache) = self.step_batch(x.view(), &st);
            st = next;
            let d = head_grad(&raw, seqs, t, self.config.mixtures, weights, &mut nll)?;
            if weights.is_some() {
                caches.push(cache);
                draws.push(d);
            }
        }
        if weights.is_none() {
            return Ok(nll);
        }

        let [h1, h2, h3] = self.config.hidden;
        let mut dh1 = Array2::zeros((b, h1));
        let mut dc1 = Array2::zeros((b, h1));
        let mut dh2 = Array2::zeros((b, h2));
        let mut dc2 = Array2::zeros((b, h2));
        let mut dh3 = Array2::zeros((b, h3));
        let mut dc3 = Array2::zeros((b, h3));
        for (cache, draw) in caches.iter().zip(&draws).rev() {
            let dcat = self.fc.backward(cache.head_in.view(), draw.view());
            dh3 += &dcat.slice(s![.., h1 + h2..]);
            let (dx3, p3, q3) = self.lstm3.step_backward(&cache.c3, dh3.view(), dc3.view());
            dh2 += &dcat.slice(s![.., h1..h1 + h2]);
            dh2 += &dx3.slice(s![.., ..h2]);
            let (dx2, p2, q2) = self.lstm2.step_backward(&cache.c2, dh2.view(), dc2.view());
            dh1 += &dcat.slice(s![.., ..h1]);
            dh1 += &dx2.slice(s![.., ..h1]);
            let (_, p1, q1) = self.lstm1.step_backward(&cache.c1, dh1.view(), dc1.view());
            (dh1, dc1, dh2, dc2, dh3, dc3) = (p1, q1, p2, q2, p3, q3);
        }
        Ok(nll)
    }
}
