//! Mixture-density stroke generators.
//!
//! [`PredictionNet`] writes free-form ink; [`SynthesisNet`] writes a given
//! text through an attention window over its characters. Both emit, per
//! step, a raw vector that [`mdn`] turns into a distribution over the next
//! pen offset.

pub mod mdn;
mod prediction;
mod synthesis;
pub mod window;

pub use mdn::{
    apply_bias, mdn_nll, mdn_nll_grad, mdn_split, raw_size, sample_next, MdnParams, MIXTURES,
};
pub use prediction::{PredictionConfig, PredictionNet, PredictionState};
pub use synthesis::{SynthesisConfig, SynthesisNet, SynthesisState};
pub use window::{window_from_raw, WindowState, WINDOW_COMPONENTS};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, TextEncoding};
use crate::nn::{Adam, Module, Param, Scalar};
use crate::stroke::{HandwritingSample, OffsetPoint};
use crate::{Error, Result};

/// Which generator a run trains or samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Prediction,
    Synthesis,
}

/// Common interface of the two generators.
pub trait StrokeGenerator<F: Scalar>: Module<F> {
    type State;

    fn mixtures(&self) -> usize;

    fn needs_text(&self) -> bool;

    fn start(&self, text: Option<&TextEncoding>) -> Result<Self::State>;

    /// Feeds one point and returns the raw head output for the next one.
    fn next_raw(
        &self,
        x: &OffsetPoint,
        state: &mut Self::State,
        text: Option<&TextEncoding>,
    ) -> Result<Vec<f64>>;

    /// Early stop signal checked after every sampled point.
    fn finished(&self, state: &Self::State, text: Option<&TextEncoding>) -> bool;

    /// Teacher-forced NLL summed over each sequence's points. With weights,
    /// also accumulates the gradient of `Σ_b weights[b]·NLL_b`.
    fn sequence_nll(
        &mut self,
        seqs: &[Vec<OffsetPoint>],
        texts: &[Option<TextEncoding>],
        weights: Option<&[f64]>,
    ) -> Result<Vec<f64>>;
}

pub(crate) fn input_row<F: Scalar>(x: &OffsetPoint) -> Array2<F> {
    let [a, b, c] = x.as_array();
    Array2::from_shape_vec((1, 3), vec![F::c(a), F::c(b), F::c(c)]).expect("three values")
}

/// Inputs per time step: the start token, then each target shifted by one.
pub(crate) fn teacher_inputs<F: Scalar>(seqs: &[Vec<OffsetPoint>]) -> Result<Vec<Array2<F>>> {
    if seqs.is_empty() {
        return Err(Error::InvalidInput("empty sequence batch".into()));
    }
    if seqs.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("batch contains an empty sequence".into()));
    }
    let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut inputs = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let mut x = Array2::zeros((seqs.len(), 3));
        for (b, seq) in seqs.iter().enumerate() {
            let p = if t == 0 {
                OffsetPoint::START
            } else if t <= seq.len() {
                seq[t - 1]
            } else {
                continue;
            };
            for (k, v) in p.as_array().into_iter().enumerate() {
                x[[b, k]] = F::c(v);
            }
        }
        inputs.push(x);
    }
    Ok(inputs)
}

/// Per-step head loss; padded positions contribute nothing.
pub(crate) fn head_grad<F: Scalar>(
    raw: &Array2<F>,
    seqs: &[Vec<OffsetPoint>],
    t: usize,
    mixtures: usize,
    weights: Option<&[f64]>,
    nll: &mut [f64],
) -> Result<Array2<F>> {
    let mut d = Array2::zeros(if weights.is_some() { raw.dim() } else { (0, 0) });
    for (b, seq) in seqs.iter().enumerate() {
        let Some(target) = seq.get(t) else {
            continue;
        };
        let row: Vec<f64> = raw.row(b).iter().map(|v| v.to_f64().unwrap()).collect();
        let (v, g) = mdn_nll_grad(&row, mixtures, target)?;
        nll[b] += v;
        if let Some(w) = weights {
            for (k, gk) in g.into_iter().enumerate() {
                d[[b, k]] = F::c(gk * w[b]);
            }
        }
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub bias: f64,
    pub seed: u64,
    /// Length cap for unconditioned sampling.
    pub max_points: usize,
    /// Length budget per character for text-conditioned sampling.
    pub points_per_char: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            bias: 0.0,
            seed: 0,
            max_points: 700,
            points_per_char: 25,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling bias must be >= 0, got {}",
                self.bias
            )));
        }
        if self.max_points == 0 || self.points_per_char == 0 {
            return Err(Error::InvalidConfig("sampling length limits must be positive".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// A sampled sequence and its log-probability under the unbiased model.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub sample: HandwritingSample,
    pub offsets: Vec<OffsetPoint>,
    pub log_prob: f64,
}

/// Samples one sequence starting from the pen-lift token at the origin.
///
/// Points are drawn from the biased distribution, while `log_prob` sums the
/// unbiased log-density of each drawn point. Text-conditioned sampling stops
/// after `points_per_char · U` points or once every window location has
/// passed `U + 1`.
pub fn sample_sequence<F, G, R>(
    net: &G,
    text: Option<&TextEncoding>,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated>
where
    F: Scalar,
    G: StrokeGenerator<F>,
    R: Rng + ?Sized,
{
    config.validate()?;
    let text = if net.needs_text() { text } else { None };
    let mut state = net.start(text)?;
    let cap = match text {
        Some(t) => config.points_per_char * t.len(),
        None => config.max_points,
    };
    let m = net.mixtures();
    let mut x = OffsetPoint::START;
    let mut offsets = Vec::with_capacity(cap);
    let mut log_prob = 0.0;
    while offsets.len() < cap {
        let raw = net.next_raw(&x, &mut state, text)?;
        let next = sample_next(&apply_bias(&raw, m, config.bias)?, rng);
        log_prob -= mdn_nll_grad(&raw, m, &next)?.0;
        offsets.push(next);
        x = next;
        if net.finished(&state, text) {
            break;
        }
    }
    let mut sample = HandwritingSample::from_offsets(&offsets, (0.0, 0.0))?;
    if let Some(t) = text {
        sample.set_text(Some(t.to_string()));
    }
    Ok(Generated {
        sample,
        offsets,
        log_prob,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    /// Mean NLL per point before the update.
    pub nll: f64,
    pub points: usize,
}

/// One maximum-likelihood step on the mean per-point teacher-forced NLL.
pub fn pretrain_step<F, G>(
    net: &mut G,
    batch: &Batch,
    opt: &mut Adam<F>,
    lr: f64,
    step: u64,
) -> Result<PretrainMetrics>
where
    F: Scalar,
    G: StrokeGenerator<F>,
{
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let points: usize = batch.sequences.iter().map(Vec::len).sum();
    let w = vec![1.0 / points.max(1) as f64; batch.len()];
    net.zero_grad();
    let nll = net.sequence_nll(&batch.sequences, &batch.texts, Some(&w))?;
    let mean = nll.iter().sum::<f64>() / points.max(1) as f64;
    if !mean.is_finite() || !net.grads_finite() {
        return Err(Error::Divergence {
            step,
            message: format!("generator NLL {mean}"),
        });
    }
    opt.step(net, lr)?;
    Ok(PretrainMetrics { nll: mean, points })
}

/// Mean per-point teacher-forced NLL without touching gradients.
pub fn mean_nll<F, G>(net: &mut G, seqs: &[Vec<OffsetPoint>], texts: &[Option<TextEncoding>]) -> Result<f64>
where
    F: Scalar,
    G: StrokeGenerator<F>,
{
    let points: usize = seqs.iter().map(Vec::len).sum();
    let nll = net.sequence_nll(seqs, texts, None)?;
    Ok(nll.iter().sum::<f64>() / points.max(1) as f64)
}

/// Either generator behind one type.
#[derive(Clone, Debug)]
pub enum Generator<F> {
    Prediction(PredictionNet<F>),
    Synthesis(SynthesisNet<F>),
}

#[derive(Clone, Debug)]
pub enum GeneratorState<F> {
    Prediction(PredictionState<F>),
    Synthesis(SynthesisState<F>),
}

impl<F: Scalar> Generator<F> {
    pub fn mode(&self) -> GenMode {
        match self {
            Self::Prediction(_) => GenMode::Prediction,
            Self::Synthesis(_) => GenMode::Synthesis,
        }
    }

    pub fn cast<G: Scalar>(&self) -> Generator<G> {
        match self {
            Self::Prediction(n) => Generator::Prediction(n.cast()),
            Self::Synthesis(n) => Generator::Synthesis(n.cast()),
        }
    }
}

impl<F: Scalar> Module<F> for Generator<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        match self {
            Self::Prediction(n) => n.params(),
            Self::Synthesis(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        match self {
            Self::Prediction(n) => n.params_mut(),
            Self::Synthesis(n) => n.params_mut(),
        }
    }
}

impl<F: Scalar> StrokeGenerator<F> for Generator<F> {
    type State = GeneratorState<F>;

    fn mixtures(&self) -> usize {
        match self {
            Self::Prediction(n) => n.mixtures(),
            Self::Synthesis(n) => n.mixtures(),
        }
    }

    fn needs_text(&self) -> bool {
        matches!(self, Self::Synthesis(_))
    }

    fn start(&self, text: Option<&TextEncoding>) -> Result<Self::State> {
        Ok(match self {
            Self::Prediction(n) => GeneratorState::Prediction(n.start(text)?),
            Self::Synthesis(n) => GeneratorState::Synthesis(n.start(text)?),
        })
    }

    fn next_raw(
        &self,
        x: &OffsetPoint,
        state: &mut Self::State,
        text: Option<&TextEncoding>,
    ) -> Result<Vec<f64>> {
        match (self, state) {
            (Self::Prediction(n), GeneratorState::Prediction(s)) => n.next_raw(x, s, text),
            (Self::Synthesis(n), GeneratorState::Synthesis(s)) => n.next_raw(x, s, text),
            _ => Err(Error::Contract("generator state of the wrong kind".into())),
        }
    }

    fn finished(&self, state: &Self::State, text: Option<&TextEncoding>) -> bool {
        match (self, state) {
            (Self::Synthesis(n), GeneratorState::Synthesis(s)) => n.finished(s, text),
            _ => false,
        }
    }

    fn sequence_nll(
        &mut self,
        seqs: &[Vec<OffsetPoint>],
        texts: &[Option<TextEncoding>],
        weights: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        match self {
            Self::Prediction(n) => n.sequence_nll(seqs, texts, weights),
            Self::Synthesis(n) => n.sequence_nll(seqs, texts, weights),
        }
    }
}
