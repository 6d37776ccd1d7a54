//! CNN-LSTM real/fake classifier over signature rasters.
//!
//! The convolutional stack squeezes the 128-pixel height down to a single row
//! and the width by a factor of 16; each remaining column is one LSTM step.
//! The last hidden state goes through a two-layer head to a single logit.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    avg_pool2, avg_pool2_backward, conv_output_size, relu, relu_backward, sigmoid, softplus,
    with_prefix, Adam, Conv2d, ConvCache, Linear, Lstm, LstmCache, LstmState, Module, Param,
    Scalar,
};
use crate::psf::{PsfRaster, PSF_CHANNELS, RASTER_HEIGHT};
use crate::{Error, Result};

/// One convolution row: 3×3 kernel, padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// Followed by a 2×2, stride-2 average pool.
    pub pool: bool,
}

impl ConvSpec {
    const fn new(channels: usize, stride_h: usize, pool: bool) -> Self {
        Self {
            channels,
            stride_h,
            stride_w: 1,
            pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_height: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
}

impl DiscriminatorConfig {
    /// The full-size network: six convolutions (32, 64, 128, 256, 128, 256
    /// channels), LSTM 256, head 128.
    pub fn full() -> Self {
        Self::with_channels([32, 64, 128, 256, 128, 256], 256, 128)
    }

    /// Same layer layout with narrow channels, sized for CPU tests and quick
    /// experiments.
    pub fn desk() -> Self {
        Self::with_channels([4, 8, 16, 16, 16, 16], 16, 16)
    }

    /// 8×8 input, one LSTM unit; small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_height: 8,
            input_channels: PSF_CHANNELS,
            convs: vec![ConvSpec::new(2, 1, true), ConvSpec::new(3, 2, true)],
            lstm_hidden: 1,
            fc_hidden: 2,
        }
    }

    pub fn with_channels(ch: [usize; 6], lstm_hidden: usize, fc_hidden: usize) -> Self {
        Self {
            input_height: RASTER_HEIGHT,
            input_channels: PSF_CHANNELS,
            convs: vec![
                ConvSpec::new(ch[0], 1, true),
                ConvSpec::new(ch[1], 1, true),
                ConvSpec::new(ch[2], 1, false),
                ConvSpec::new(ch[3], 2, true),
                ConvSpec::new(ch[4], 2, false),
                ConvSpec::new(ch[5], 2, true),
            ],
            lstm_hidden,
            fc_hidden,
        }
    }

    /// Total width reduction of the convolutional stack.
    pub fn width_factor(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.stride_w * if c.pool { 2 } else { 1 })
            .product()
    }

    pub fn feature_size(&self) -> usize {
        self.convs.last().map_or(self.input_channels, |c| c.channels)
    }

    fn output_height(&self) -> usize {
        self.convs.iter().fold(self.input_height, |h, c| {
            let h = conv_output_size(h, c.stride_h);
            if c.pool {
                h / 2
            } else {
                h
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.input_height > 0
            && self.input_channels > 0
            && self.lstm_hidden > 0
            && self.fc_hidden > 0
            && self
                .convs
                .iter()
                .all(|c| c.channels > 0 && c.stride_h > 0 && c.stride_w > 0);
        if !positive {
            return Err(Error::InvalidConfig(
                "discriminator sizes and strides must be positive".into(),
            ));
        }
        if self.output_height() != 1 {
            return Err(Error::InvalidConfig(format!(
                "conv stack maps height {} to {}, expected 1",
                self.input_height,
                self.output_height()
            )));
        }
        Ok(())
    }

    /// Number of LSTM steps for an input of this width.
    pub fn columns(&self, width: usize) -> Result<usize> {
        let f = self.width_factor();
        if width == 0 || width % f != 0 {
            return Err(Error::Shape(format!(
                "raster width {width} is not a positive multiple of {f}"
            )));
        }
        Ok(width / f)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<F> {
    config: DiscriminatorConfig,
    pub convs: Vec<Conv2d<F>>,
    pub lstm: Lstm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

struct ConvTrace<F> {
    cache: ConvCache<F>,
    activated: Array4<F>,
}

struct Trace<F> {
    convs: Vec<ConvTrace<F>>,
    cnn_dim: (usize, usize, usize, usize),
    lstm: Vec<LstmCache<F>>,
    head_in: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Scalar> Discriminator<F> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.convs.len());
        let mut c_in = config.input_channels;
        for spec in &config.convs {
            convs.push(Conv2d::init(c_in, spec.channels, (spec.stride_h, spec.stride_w), rng));
            c_in = spec.channels;
        }
        let lstm = Lstm::init(c_in, config.lstm_hidden, rng);
        let fc1 = Linear::init(config.lstm_hidden, config.fc_hidden, 6f64.sqrt(), rng);
        let fc2 = Linear::init(config.fc_hidden, 1, 1.0, rng);
        Ok(Self {
            config,
            convs,
            lstm,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Stacks equal-width rasters into a `(7, B, 128, W)` batch.
    pub fn batch_tensor(rasters: &[PsfRaster]) -> Result<Array4<F>> {
        let Some(first) = rasters.first() else {
            return Err(Error::InvalidInput("empty raster batch".into()));
        };
        let w = first.width();
        if let Some(r) = rasters.iter().find(|r| r.width() != w) {
            return Err(Error::Contract(format!(
                "raster widths differ within a batch: {w} and {}",
                r.width()
            )));
        }
        let mut out = Array4::zeros((PSF_CHANNELS, rasters.len(), RASTER_HEIGHT, w));
        for (b, r) in rasters.iter().enumerate() {
            for ((x, y, c), &v) in r.data().indexed_iter() {
                out[[c, b, y, x]] = F::from(v).unwrap();
            }
        }
        Ok(out)
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (c, b, h, w) = x.dim();
        if c != self.config.input_channels || h != self.config.input_height || b == 0 {
            return Err(Error::Shape(format!(
                "discriminator expects ({}, B>0, {}, W), got {:?}",
                self.config.input_channels,
                self.config.input_height,
                x.dim()
            )));
        }
        self.config.columns(w)?;
        Ok(())
    }

    fn run_cnn(&self, x: &Array4<F>, keep: bool) -> (Array4<F>, Vec<ConvTrace<F>>) {
        let mut traces = Vec::new();
        let mut a = x.clone();
        for (conv, spec) in self.convs.iter().zip(&self.config.convs) {
            let (z, cache) = conv.forward(&a);
            let act = relu(z);
            a = if spec.pool { avg_pool2(&act) } else { act.clone() };
            if keep {
                traces.push(ConvTrace {
                    cache,
                    activated: act,
                });
            }
        }
        (a, traces)
    }

    /// Column features `(B, T, C)` for a batch tensor.
    pub fn encode(&self, x: &Array4<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let (out, _) = self.run_cnn(x, false);
        Ok(out
            .index_axis(Axis(2), 0)
            .permuted_axes([1, 2, 0])
            .to_owned())
    }

    /// The encoded matrix of one raster, one row per column step.
    pub fn cnn_encode(&self, raster: &PsfRaster) -> Result<Array2<F>> {
        let x = Self::batch_tensor(std::slice::from_ref(raster))?;
        Ok(self.encode(&x)?.index_axis(Axis(0), 0).to_owned())
    }

    fn forward_trace(&self, x: &Array4<F>, keep: bool) -> Result<(Array1<F>, Option<Trace<F>>)> {
        self.check_input(x)?;
        let (cnn, convs) = self.run_cnn(x, keep);
        let (_, b, _, t) = cnn.dim();
        let mut state = LstmState::zeros(b, self.config.lstm_hidden);
        let mut lstm = Vec::new();
        for step in 0..t {
            let col = cnn.slice(s![.., .., 0, step]).reversed_axes();
            let (next, cache) = self.lstm.step(col, &state);
            state = next;
            if keep {
                lstm.push(cache);
            }
        }
        let hidden = self.fc1.forward(state.h.view()).mapv(|v| v.max(F::zero()));
        let logits = self.fc2.forward(hidden.view()).column(0).to_owned();
        let trace = keep.then(|| Trace {
            convs,
            cnn_dim: cnn.dim(),
            lstm,
            head_in: state.h,
            hidden,
        });
        Ok((logits, trace))
    }

    pub fn logits(&self, x: &Array4<F>) -> Result<Array1<F>> {
        Ok(self.forward_trace(x, false)?.0)
    }

    /// Genuineness probabilities for a batch tensor.
    pub fn forward(&self, x: &Array4<F>) -> Result<Vec<f64>> {
        Ok(self
            .logits(x)?
            .iter()
            .map(|&z| probability(z.to_f64().unwrap()))
            .collect())
    }

    /// Probability that one raster is genuine.
    pub fn d_forward(&self, raster: &PsfRaster) -> Result<f64> {
        let x = Self::batch_tensor(std::slice::from_ref(raster))?;
        Ok(self.forward(&x)?[0])
    }

    /// Probabilities for rasters of any mix of widths, in input order.
    pub fn probabilities(&self, rasters: &[PsfRaster]) -> Result<Vec<f64>> {
        let mut by_width: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in rasters.iter().enumerate() {
            by_width.entry(r.width()).or_default().push(i);
        }
        let mut out = vec![0.0; rasters.len()];
        for idx in by_width.values() {
            let group: Vec<PsfRaster> = idx.iter().map(|&i| rasters[i].clone()).collect();
            let p = self.forward(&Self::batch_tensor(&group)?)?;
            for (&i, v) in idx.iter().zip(p) {
                out[i] = v;
            }
        }
        Ok(out)
    }

    /// Adds `Σ_b scale · BCE(logit_b, target_b)` gradients to the parameters
    /// and returns the unscaled per-example losses and probabilities.
    pub fn accumulate_bce(
        &mut self,
        x: &Array4<F>,
        targets: &[f64],
        scale: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (logits, trace) = self.forward_trace(x, true)?;
        let trace = trace.expect("trace requested");
        if targets.len() != logits.len() {
            return Err(Error::Shape(format!(
                "{} targets for a batch of {}",
                targets.len(),
                logits.len()
            )));
        }
        let mut losses = Vec::with_capacity(targets.len());
        let mut probs = Vec::with_capacity(targets.len());
        let mut dz = Array2::zeros((targets.len(), 1));
        for (b, (&z, &y)) in logits.iter().zip(targets).enumerate() {
            let zf = z.to_f64().unwrap();
            losses.push(softplus(zf) - y * zf);
            let p = sigmoid(zf);
            probs.push(probability(zf));
            dz[[b, 0]] = F::c(scale * (p - y));
        }
        self.backward(&trace, dz);
        Ok((losses, probs))
    }

    fn backward(&mut self, trace: &Trace<F>, dz: Array2<F>) {
        let mut dhid = self.fc2.backward(trace.hidden.view(), dz.view());
        dhid.zip_mut_with(&trace.hidden, |d, &a| {
            if a <= F::zero() {
                *d = F::zero();
            }
        });
        let mut dh = self.fc1.backward(trace.head_in.view(), dhid.view());
        let mut dc = Array2::zeros(dh.raw_dim());
        let mut dcnn = Array4::zeros(trace.cnn_dim);
        for (t, cache) in trace.lstm.iter().enumerate().rev() {
            let (dx, dhp, dcp) = self.lstm.step_backward(cache, dh.view(), dc.view());
            dcnn.slice_mut(s![.., .., 0, t]).assign(&dx.t());
            dh = dhp;
            dc = dcp;
        }
        let mut grad = dcnn;
        for k in (0..self.convs.len()).rev() {
            let ct = &trace.convs[k];
            if self.config.convs[k].pool {
                grad = avg_pool2_backward(&grad, ct.activated.dim());
            }
            grad = relu_backward(grad, &ct.activated);
            match self.convs[k].backward(&grad, &ct.cache, k > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> Discriminator<G> {
        Discriminator {
            config: self.config.clone(),
            convs: self.convs.iter().map(Conv2d::cast).collect(),
            lstm: self.lstm.cast(),
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for Discriminator<F> {
    fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = Vec::new();
        for (k, c) in self.convs.iter().enumerate() {
            out.extend(with_prefix(&format!("conv{}", k + 1), c.params()));
        }
        out.extend(with_prefix("lstm", self.lstm.params()));
        out.extend(with_prefix("fc1", self.fc1.params()));
        out.extend(with_prefix("fc2", self.fc2.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = Vec::new();
        for (k, c) in self.convs.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("conv{}", k + 1), c.params_mut()));
        }
        out.extend(with_prefix("lstm", self.lstm.params_mut()));
        out.extend(with_prefix("fc1", self.fc1.params_mut()));
        out.extend(with_prefix("fc2", self.fc2.params_mut()));
        out
    }
}

/// Sigmoid kept strictly inside `(0, 1)`.
fn probability(z: f64) -> f64 {
    sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Training target for a label under one-sided smoothing.
pub fn smoothed_target(real: bool, smoothing: f64) -> f64 {
    if real {
        1.0 - smoothing
    } else {
        0.0
    }
}

fn check_smoothing(smoothing: f64) -> Result<()> {
    if !(0.0..0.5).contains(&smoothing) {
        return Err(Error::InvalidConfig(format!(
            "label smoothing must be in [0, 0.5), got {smoothing}"
        )));
    }
    Ok(())
}

/// Mean binary cross entropy with one-sided label smoothing.
pub fn d_loss(probabilities: &[f64], labels: &[bool], smoothing: f64) -> Result<f64> {
    check_smoothing(smoothing)?;
    if probabilities.len() != labels.len() || probabilities.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &real) in probabilities.iter().zip(labels) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Numeric(format!("probability {p} outside (0, 1)")));
        }
        let y = smoothed_target(real, smoothing);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / probabilities.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DStepMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub acc_real: f64,
    pub acc_fake: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

/// Fraction classified correctly at threshold 0.5.
pub fn accuracy(probabilities: &[f64], real: bool) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    let hits = probabilities.iter().filter(|&&p| (p >= 0.5) == real).count();
    hits as f64 / probabilities.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Loss and gradients of the smoothed BCE over real and fake rasters, each
/// group batched by width. Parameters' gradients are reset first.
pub fn d_loss_grad<F: Scalar>(
    disc: &mut Discriminator<F>,
    real: &[PsfRaster],
    fake: &[PsfRaster],
    smoothing: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_smoothing(smoothing)?;
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidInput("real and fake batches must be non-empty".into()));
    }
    disc.zero_grad();
    let n = (real.len() + fake.len()) as f64;
    let mut total = 0.0;
    let mut probs = [Vec::new(), Vec::new()];
    for (set, is_real) in [(real, true), (fake, false)] {
        let mut by_width: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in set.iter().enumerate() {
            by_width.entry(r.width()).or_default().push(i);
        }
        let mut out = vec![0.0; set.len()];
        for idx in by_width.values() {
            let group: Vec<PsfRaster> = idx.iter().map(|&i| set[i].clone()).collect();
            let x = Discriminator::<F>::batch_tensor(&group)?;
            let targets = vec![smoothed_target(is_real, smoothing); idx.len()];
            let (losses, p) = disc.accumulate_bce(&x, &targets, 1.0 / n)?;
            total += losses.iter().sum::<f64>();
            for (&i, p) in idx.iter().zip(p) {
                out[i] = p;
            }
        }
        probs[usize::from(!is_real)] = out;
    }
    let [pr, pf] = probs;
    Ok((total / n, pr, pf))
}

/// One supervised optimizer step on real-vs-fake BCE.
pub fn d_train_step<F: Scalar>(
    disc: &mut Discriminator<F>,
    real: &[PsfRaster],
    fake: &[PsfRaster],
    opt: &mut Adam<F>,
    lr: f64,
    smoothing: f64,
    step: u64,
) -> Result<DStepMetrics> {
    let (loss, pr, pf) = d_loss_grad(disc, real, fake, smoothing)?;
    if !loss.is_finite() || !disc.grads_finite() {
        return Err(Error::Divergence {
            step,
            message: format!("discriminator loss {loss}"),
        });
    }
    opt.step(disc, lr)?;
    let acc_real = accuracy(&pr, true);
    let acc_fake = accuracy(&pf, false);
    let n = (pr.len() + pf.len()) as f64;
    Ok(DStepMetrics {
        loss,
        accuracy: (acc_real * pr.len() as f64 + acc_fake * pf.len() as f64) / n,
        acc_real,
        acc_fake,
        mean_real: mean(&pr),
        mean_fake: mean(&pf),
    })
}
