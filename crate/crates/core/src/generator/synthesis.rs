use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdn::{mdn_split, raw_size, MdnParams, MIXTURES};
use super::window::{window_backward, window_forward, window_from_raw, WindowBatch, WindowState, WINDOW_COMPONENTS};
use super::{head_grad, input_row, teacher_inputs, StrokeGenerator};
use crate::data::{TextEncoding, VOCAB_SIZE};
use crate::nn::{with_prefix, Linear, Lstm, LstmCache, LstmState, Module, Param, Scalar};
use crate::stroke::OffsetPoint;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub hidden: [usize; 2],
    pub mixtures: usize,
    pub window_components: usize,
    pub vocab: usize,
}

impl SynthesisConfig {
    /// Two 512-unit LSTMs, a 5-component window, 20 mixture components.
    pub fn full() -> Self {
        Self {
            hidden: [512, 512],
            mixtures: MIXTURES,
            window_components: WINDOW_COMPONENTS,
            vocab: VOCAB_SIZE,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden: [32, 32],
            mixtures: 5,
            window_components: WINDOW_COMPONENTS,
            vocab: VOCAB_SIZE,
        }
    }

    pub fn tiny() -> Self {
        Self {
            hidden: [4, 4],
            mixtures: 2,
            window_components: 2,
            vocab: VOCAB_SIZE,
        }
    }

    /// `[LSTM1 input, LSTM2 input]`: point ⊕ window, point ⊕ h1 ⊕ window.
    pub fn input_widths(&self) -> [usize; 2] {
        [3 + self.vocab, 3 + self.hidden[0] + self.vocab]
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.mixtures == 0 || self.window_components == 0 || self.vocab == 0 {
            return Err(Error::InvalidConfig(
                "synthesis network sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Text-conditioned generator: LSTM1 drives an attention window over the
/// characters, LSTM2 reads the point, LSTM1's state and the window vector.
#[derive(Clone, Debug)]
pub struct SynthesisNet<F> {
    config: SynthesisConfig,
    pub lstm1: Lstm<F>,
    /// Window parameters from LSTM1's hidden state.
    pub fc1: Linear<F>,
    pub lstm2: Lstm<F>,
    pub fc2: Linear<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisState<F> {
    pub l1: LstmState<F>,
    pub l2: LstmState<F>,
    /// Window locations `(B, K)`.
    pub kappa: Array2<F>,
    /// Previous window vectors `(B, V)`.
    pub w: Array2<F>,
    text_len: usize,
}

impl<F: Scalar> SynthesisState<F> {
    pub fn max_kappa(&self) -> f64 {
        self.kappa
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()))
    }
}

struct StepCache<F> {
    c1: LstmCache<F>,
    c2: LstmCache<F>,
    h1: Array2<F>,
    h2: Array2<F>,
    win: WindowBatch<F>,
}

fn text_indices(texts: &[Option<TextEncoding>], batch: usize) -> Result<Vec<&[usize]>> {
    if texts.len() != batch {
        return Err(Error::Contract(format!(
            "synthesis needs one text per sequence: {} texts, {batch} sequences",
            texts.len()
        )));
    }
    texts
        .iter()
        .map(|t| match t {
            Some(t) if !t.is_empty() => Ok(t.indices()),
            _ => Err(Error::Contract("synthesis sequence without text".into())),
        })
        .collect()
}

impl<F: Scalar> SynthesisNet<F> {
    pub fn new<R: Rng + ?Sized>(config: SynthesisConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [i1, i2] = config.input_widths();
        let [h1, h2] = config.hidden;
        Ok(Self {
            lstm1: Lstm::init(i1, h1, rng),
            fc1: Linear::init(h1, 3 * config.window_components, 0.5, rng),
            lstm2: Lstm::init(i2, h2, rng),
            fc2: Linear::init(h2, raw_size(config.mixtures), 1.0, rng),
            config,
        })
    }

    pub fn zeros(config: SynthesisConfig) -> Result<Self> {
        config.validate()?;
        let [i1, i2] = config.input_widths();
        let [h1, h2] = config.hidden;
        Ok(Self {
            lstm1: Lstm::zeros(i1, h1),
            fc1: Linear::zeros(h1, 3 * config.window_components),
            lstm2: Lstm::zeros(i2, h2),
            fc2: Linear::zeros(h2, raw_size(config.mixtures)),
            config,
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    pub fn initial_state(&self, batch: usize, text_len: usize) -> SynthesisState<F> {
        let [h1, h2] = self.config.hidden;
        SynthesisState {
            l1: LstmState::zeros(batch, h1),
            l2: LstmState::zeros(batch, h2),
            kappa: Array2::zeros((batch, self.config.window_components)),
            w: Array2::zeros((batch, self.config.vocab)),
            text_len,
        }
    }

    fn step_batch(
        &self,
        x: ArrayView2<'_, F>,
        texts: &[&[usize]],
        st: &SynthesisState<F>,
    ) -> (Array2<F>, SynthesisState<F>, StepCache<F>) {
        let in1 = concatenate(Axis(1), &[x, st.w.view()]).expect("equal batch");
        let (l1, c1) = self.lstm1.step(in1.view(), &st.l1);
        let wraw = self.fc1.forward(l1.h.view());
        let win = window_forward(wraw.view(), st.kappa.view(), texts, self.config.vocab);
        let in2 = concatenate(Axis(1), &[x, l1.h.view(), win.w.view()]).expect("equal batch");
        let (l2, c2) = self.lstm2.step(in2.view(), &st.l2);
        let raw = self.fc2.forward(l2.h.view());
        let next = SynthesisState {
            l1: l1.clone(),
            l2: l2.clone(),
            kappa: win.kappa.clone(),
            w: win.w.clone(),
            text_len: st.text_len,
        };
        let cache = StepCache {
            c1,
            c2,
            h1: l1.h,
            h2: l2.h,
            win,
        };
        (raw, next, cache)
    }

    /// Raw head output for one point of one sequence.
    pub fn raw_step(
        &self,
        x: &OffsetPoint,
        text: &TextEncoding,
        state: &SynthesisState<F>,
    ) -> Result<(Vec<f64>, SynthesisState<F>)> {
        if text.is_empty() {
            return Err(Error::Contract("synthesis needs a non-empty text".into()));
        }
        if text.len() != state.text_len || state.kappa.nrows() != 1 {
            return Err(Error::Contract(format!(
                "window state built for {} characters, text has {}",
                state.text_len,
                text.len()
            )));
        }
        let xin = input_row::<F>(x);
        let (raw, next, _) = self.step_batch(xin.view(), &[text.indices()], state);
        Ok((raw.row(0).iter().map(|v| v.to_f64().unwrap()).collect(), next))
    }

    /// One step of the network: the distribution of the next point.
    pub fn gs_forward(
        &self,
        x: &OffsetPoint,
        text: &TextEncoding,
        state: &SynthesisState<F>,
    ) -> Result<(MdnParams, SynthesisState<F>)> {
        let (raw, next) = self.raw_step(x, text, state)?;
        Ok((mdn_split(&raw, self.config.mixtures)?, next))
    }

    /// Window update from an LSTM1 hidden state.
    pub fn window_step(&self, h1: &[f64], prev: &WindowState, text: &TextEncoding) -> Result<WindowState> {
        if h1.len() != self.config.hidden[0] {
            return Err(Error::Shape(format!(
                "window reads {} hidden units, got {}",
                self.config.hidden[0],
                h1.len()
            )));
        }
        let h = Array1::from_iter(h1.iter().map(|&v| F::c(v))).insert_axis(Axis(0));
        let raw: Vec<f64> = self
            .fc1
            .forward(h.view())
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect();
        window_from_raw(&raw, &prev.kappa, text.indices(), self.config.vocab)
    }

    pub fn cast<G: Scalar>(&self) -> SynthesisNet<G> {
        SynthesisNet {
            config: self.config.clone(),
            lstm1: self.lstm1.cast(),
            fc1: self.fc1.cast(),
            lstm2: self.lstm2.cast(),
            fc2: self.fc2.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for SynthesisNet<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = with_prefix("lstm1", self.lstm1.params());
        out.extend(with_prefix("fc1", self.fc1.params()));
        out.extend(with_prefix("lstm2", self.lstm2.params()));
        out.extend(with_prefix("fc2", self.fc2.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = with_prefix("lstm1", self.lstm1.params_mut());
        out.extend(with_prefix("fc1", self.fc1.params_mut()));
        out.extend(with_prefix("lstm2", self.lstm2.params_mut()));
        out.extend(with_prefix("fc2", self.fc2.params_mut()));
        out
    }
}

impl<F: Scalar> StrokeGenerator<F> for SynthesisNet<F> {
    type State = SynthesisState<F>;

    fn mixtures(&self) -> usize {
        self.config.mixtures
    }

    fn needs_text(&self) -> bool {
        true
    }

    fn start(&self, text: Option<&TextEncoding>) -> Result<Self::State> {
        match text {
            Some(t) if !t.is_empty() => Ok(self.initial_state(1, t.len())),
            _ => Err(Error::Contract("synthesis sampling needs a non-empty text".into())),
        }
    }

    fn next_raw(&self, x: &OffsetPoint, state: &mut Self::State, text: Option<&TextEncoding>) -> Result<Vec<f64>> {
        let text = text.ok_or_else(|| Error::Contract("synthesis needs a text".into()))?;
        let (raw, next) = self.raw_step(x, text, state)?;
        *state = next;
        Ok(raw)
    }

    fn finished(&self, state: &Self::State, text: Option<&TextEncoding>) -> bool {
        let u = text.map_or(0, |t| t.len());
        state.max_kappa() > (u + 1) as f64
    }

    fn sequence_nll(
        &mut self,
        seqs: &[Vec<OffsetPoint>],
        texts: &[Option<TextEncoding>],
        weights: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let inputs = teacher_inputs::<F>(seqs)?;
        let b = seqs.len();
        let idx = text_indices(texts, b)?;
        let mut st = self.initial_state(b, 0);
        let mut nll = vec![0.0; b];
        let mut caches = Vec::with_capacity(inputs.len());
        let mut draws = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let (raw, next, cache) = self.step_batch(x.view(), &idx, &st);
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

        let [h1, h2] = self.config.hidden;
        let (k, v) = (self.config.window_components, self.config.vocab);
        let mut dh1 = Array2::zeros((b, h1));
        let mut dc1 = Array2::zeros((b, h1));
        let mut dh2 = Array2::zeros((b, h2));
        let mut dc2 = Array2::zeros((b, h2));
        let mut dw_next = Array2::zeros((b, v));
        let mut dkappa = Array2::zeros((b, k));
        for (cache, draw) in caches.iter().zip(&draws).rev() {
            dh2 += &self.fc2.backward(cache.h2.view(), draw.view());
            let (dx2, p2, q2) = self.lstm2.step_backward(&cache.c2, dh2.view(), dc2.view());
            dh1 += &dx2.slice(s![.., 3..3 + h1]);
            let dw = &dx2.slice(s![.., 3 + h1..]) + &dw_next;
            let (dwraw, dkp) = window_backward(&cache.win, &idx, dw.view(), dkappa.view());
            dh1 += &self.fc1.backward(cache.h1.view(), dwraw.view());
            let (dx1, p1, q1) = self.lstm1.step_backward(&cache.c1, dh1.view(), dc1.view());
            dw_next = dx1.slice(s![.., 3..]).to_owned();
            dkappa = dkp;
            (dh1, dc1, dh2, dc2) = (p1, q1, p2, q2);
        }
        Ok(nll)
    }
}
