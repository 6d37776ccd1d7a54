//! Adversarial training: discriminator steps on real versus generated
//! rasters, generator steps driven by the discriminator's score.
//!
//! The generator cannot be differentiated through sampling and
//! rasterization, so [`g_adv_step`] uses the score-function estimator
//! `∇E[r] = E[(r - b)·∇log p]` with a running-mean baseline `b`.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::data::{encode_text, Batch, TextEncoding, Vocabulary};
use crate::discriminator::{d_train_step, DStepMetrics, Discriminator, DiscriminatorConfig};
use crate::generator::{
    mdn_nll_grad, mdn_split, pretrain_step, sample_next, sample_sequence, GenMode, Generated,
    Generator, PredictionConfig, PredictionNet, SamplerConfig, StrokeGenerator, SynthesisConfig,
    SynthesisNet,
};
use crate::nn::{decayed_lr, Adam, AdamState, Module, Param, Scalar};
use crate::psf::{normalize_psf, psf_pipeline_fit, PsfConfig, PsfRaster, SizeBuckets};
use crate::stroke::{write_jsonl, HandwritingSample};
use crate::{Error, Result};

/// Bias used from `from_step` on, until the next stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStage {
    pub from_step: u64,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    /// Learning rates are multiplied by this once per `decay_interval` steps.
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Real targets become `1 - label_smoothing`; fakes stay at 0.
    pub label_smoothing: f64,
    /// Sampling bias for fakes during training. Empty means unbiased.
    pub bias_schedule: Vec<BiasStage>,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub buckets: SizeBuckets,
    pub baseline_momentum: f64,
    pub checkpoint_every: u64,
    pub sample_every: u64,
    pub samples_per_dump: usize,
    /// Cap on teacher-forced sequence length.
    pub max_len: usize,
    pub validation_fraction: f64,
    pub psf: PsfConfig,
    pub sampler: SamplerConfig,
    pub discriminator: DiscriminatorConfig,
    pub prediction: PredictionConfig,
    pub synthesis: SynthesisConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-3,
            lr_d: 1e-3,
            decay_factor: 0.97,
            decay_interval: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            bias_schedule: Vec::new(),
            batch_size: 16,
            steps: 10_000,
            seed: 0,
            buckets: SizeBuckets::default(),
            baseline_momentum: 0.9,
            checkpoint_every: 1000,
            sample_every: 1000,
            samples_per_dump: 4,
            max_len: crate::data::DEFAULT_MAX_LEN,
            validation_fraction: crate::data::DEFAULT_VALIDATION_FRACTION,
            psf: PsfConfig::default(),
            sampler: SamplerConfig::default(),
            discriminator: DiscriminatorConfig::full(),
            prediction: PredictionConfig::full(),
            synthesis: SynthesisConfig::full(),
        }
    }
}

impl TrainConfig {
    /// Narrow networks and short sequences that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            steps: 200,
            checkpoint_every: 100,
            sample_every: 100,
            samples_per_dump: 2,
            max_len: 300,
            buckets: SizeBuckets::new(vec![64, 128, 256]).expect("valid buckets"),
            sampler: SamplerConfig {
                max_points: 120,
                ..SamplerConfig::default()
            },
            discriminator: DiscriminatorConfig::desk(),
            prediction: PredictionConfig::desk(),
            synthesis: SynthesisConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_g > 0.0) || !(self.lr_d > 0.0) {
            return bad(format!("learning rates must be positive: {} {}", self.lr_g, self.lr_d));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay factor must be in (0, 1], got {}", self.decay_factor));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must be in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label smoothing must be in [0, 0.5), got {}", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return bad("baseline momentum must be in [0, 1)".into());
        }
        if self.bias_schedule.iter().any(|s| !(s.bias >= 0.0)) {
            return bad("scheduled biases must be >= 0".into());
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return bad("batch size and max length must be positive".into());
        }
        SizeBuckets::new(self.buckets.widths().to_vec())?;
        for &w in self.buckets.widths() {
            self.discriminator.columns(w)?;
        }
        self.sampler.validate()?;
        self.discriminator.validate()?;
        Ok(())
    }

    /// Bias of the last schedule stage that has started, 0 before any.
    pub fn bias_at(&self, step: u64) -> f64 {
        self.bias_schedule
            .iter()
            .filter(|s| s.from_step <= step)
            .max_by_key(|s| s.from_step)
            .map_or(0.0, |s| s.bias)
    }

    pub fn lr_g_at(&self, step: u64) -> f64 {
        decayed_lr(self.lr_g, self.decay_factor, self.decay_interval, step)
    }

    pub fn lr_d_at(&self, step: u64) -> f64 {
        decayed_lr(self.lr_d, self.decay_factor, self.decay_interval, step)
    }

    fn adam<F: Scalar>(&self) -> Adam<F> {
        Adam {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            ..Adam::default()
        }
    }
}

/// Generated fakes ready for the discriminator.
#[derive(Clone, Debug)]
pub struct FakeBatch {
    pub rasters: Vec<PsfRaster>,
    /// Unbiased log-probability of each sampled sequence.
    pub log_probs: Vec<f64>,
    pub generated: Vec<Generated>,
    pub texts: Vec<Option<TextEncoding>>,
}

/// Raster for a sample on a canvas of `width`; ink with no height becomes a
/// blank canvas.
pub fn raster_or_blank(sample: &HandwritingSample, psf: &PsfConfig, width: usize) -> Result<PsfRaster> {
    match psf_pipeline_fit(sample, psf, width) {
        Err(Error::DegenerateGeometry(_)) => normalize_psf(&PsfRaster::zeros(width), &psf.effective_scales()),
        r => r,
    }
}

/// Samples one sequence per entry of `texts` and rasterizes it. With
/// `width`, every raster uses that canvas; otherwise each snaps to its own
/// bucket.
pub fn make_fake_batch<F, G, R>(
    net: &G,
    texts: &[Option<TextEncoding>],
    sampler: &SamplerConfig,
    psf: &PsfConfig,
    buckets: &SizeBuckets,
    width: Option<usize>,
    rng: &mut R,
) -> Result<FakeBatch>
where
    F: Scalar,
    G: StrokeGenerator<F>,
    R: Rng + ?Sized,
{
    let mut batch = FakeBatch {
        rasters: Vec::with_capacity(texts.len()),
        log_probs: Vec::with_capacity(texts.len()),
        generated: Vec::with_capacity(texts.len()),
        texts: texts.to_vec(),
    };
    for text in texts {
        let g = sample_sequence(net, text.as_ref(), sampler, rng)?;
        let w = match width {
            Some(w) => w,
            None => match buckets.bucket_for(&g.sample) {
                Err(Error::DegenerateGeometry(_)) => buckets.widths()[0],
                r => r?,
            },
        };
        batch.rasters.push(raster_or_blank(&g.sample, psf, w)?);
        batch.log_probs.push(g.log_prob);
        batch.generated.push(g);
    }
    Ok(batch)
}

/// One supervised discriminator step on equally sized real and fake rasters.
pub fn d_adv_step<F: Scalar>(
    disc: &mut Discriminator<F>,
    real: &[PsfRaster],
    fake: &[PsfRaster],
    opt: &mut Adam<F>,
    lr: f64,
    smoothing: f64,
    step: u64,
) -> Result<DStepMetrics> {
    let mut widths = real.iter().chain(fake).map(PsfRaster::width);
    if let Some(w) = widths.next() {
        if let Some(other) = widths.find(|&v| v != w) {
            return Err(Error::Contract(format!(
                "real and fake rasters must share one width bucket, found {w} and {other}"
            )));
        }
    }
    d_train_step(disc, real, fake, opt, lr, smoothing, step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GStepMetrics {
    pub reward_mean: f64,
    /// Baseline the rewards were centred on.
    pub baseline: f64,
    pub raw_grad_norm: f64,
    /// Norm after rescaling: 1, or 0 when the step was skipped.
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Global gradient norm accumulated in double precision.
pub fn global_grad_norm<F: Scalar, M: Module<F> + ?Sized>(model: &M) -> f64 {
    model
        .params()
        .iter()
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| {
            let g = g.to_f64().unwrap();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Score-function generator update.
///
/// Minimizes `mean_i (r_i - b)·NLL_i`, i.e. raises the log-probability of
/// fakes the discriminator rated above the baseline. The gradient is
/// rescaled to unit norm before the optimizer step; an exactly zero gradient
/// skips the step. `baseline` starts at the first batch mean and then
/// follows `b ← m·b + (1-m)·mean(r)` after each step.
#[allow(clippy::too_many_arguments)]
pub fn g_adv_step<F, G>(
    net: &mut G,
    fake: &FakeBatch,
    rewards: &[f64],
    baseline: &mut Option<f64>,
    momentum: f64,
    opt: &mut Adam<F>,
    lr: f64,
    step: u64,
) -> Result<GStepMetrics>
where
    F: Scalar,
    G: StrokeGenerator<F>,
{
    let n = rewards.len();
    if n == 0 || n != fake.generated.len() {
        return Err(Error::Shape(format!(
            "{n} rewards for {} generated sequences",
            fake.generated.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Divergence {
            step,
            message: "non-finite discriminator reward".into(),
        });
    }
    let reward_mean = rewards.iter().sum::<f64>() / n as f64;
    let b = baseline.unwrap_or(reward_mean);
    let weights: Vec<f64> = rewards.iter().map(|r| (r - b) / n as f64).collect();
    let seqs: Vec<_> = fake.generated.iter().map(|g| g.offsets.clone()).collect();
    net.zero_grad();
    let nll = net.sequence_nll(&seqs, &fake.texts, Some(&weights))?;
    let raw = global_grad_norm(net);
    if nll.iter().any(|v| !v.is_finite()) || !raw.is_finite() {
        return Err(Error::Divergence {
            step,
            message: format!("generator gradient norm {raw}"),
        });
    }
    let skipped = raw == 0.0;
    let mut grad_norm = 0.0;
    if !skipped {
        net.scale_grads(F::c(1.0 / raw));
        grad_norm = global_grad_norm(net);
        opt.step(net, lr)?;
    }
    *baseline = Some(momentum * b + (1.0 - momentum) * reward_mean);
    Ok(GStepMetrics {
        reward_mean,
        baseline: b,
        raw_grad_norm: raw,
        grad_norm,
        skipped,
    })
}

/// Monte Carlo score-function estimate of `∇ E[reward(x)]` with respect to
/// one raw mixture-density output, from `draws` samples of the next point.
pub fn score_function_estimate<R, Fr>(
    raw: &[f64],
    mixtures: usize,
    draws: usize,
    baseline: f64,
    mut reward: Fr,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    Fr: FnMut(&crate::stroke::OffsetPoint) -> f64,
{
    let params = mdn_split(raw, mixtures)?;
    let mut acc = vec![0.0; raw.len()];
    for _ in 0..draws {
        let x = sample_next(&params, rng);
        let (_, g) = mdn_nll_grad(raw, mixtures, &x)?;
        let c = reward(&x) - baseline;
        // ∇log p = -∇NLL
        for (a, gk) in acc.iter_mut().zip(g) {
            *a -= c * gk;
        }
    }
    acc.iter_mut().for_each(|a| *a /= draws.max(1) as f64);
    Ok(acc)
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed adversarial iterations.
    pub step: u64,
    /// Completed pretraining steps.
    pub pretrain_step: u64,
    pub disc: Discriminator<f32>,
    pub gen: Generator<f32>,
    pub opt_d: Adam<f32>,
    pub opt_g: Adam<f32>,
    pub baseline: Option<f64>,
    pub rng: ChaCha8Rng,
}

fn new_generator<R: Rng + ?Sized>(config: &TrainConfig, mode: GenMode, rng: &mut R) -> Result<Generator<f32>> {
    Ok(match mode {
        GenMode::Prediction => Generator::Prediction(PredictionNet::new(config.prediction.clone(), rng)?),
        GenMode::Synthesis => Generator::Synthesis(SynthesisNet::new(config.synthesis.clone(), rng)?),
    })
}

fn gen_prefix(mode: GenMode) -> &'static str {
    match mode {
        GenMode::Prediction => "Gp",
        GenMode::Synthesis => "Gs",
    }
}

impl TrainState {
    /// Fresh models initialized from `config.seed`.
    pub fn new(config: TrainConfig, mode: GenMode) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let disc = Discriminator::new(config.discriminator.clone(), &mut init)?;
        let gen = new_generator(&config, mode, &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            opt_d: config.adam(),
            opt_g: config.adam(),
            config,
            step: 0,
            pretrain_step: 0,
            disc,
            gen,
            baseline: None,
            rng,
        })
    }

    pub fn mode(&self) -> GenMode {
        self.gen.mode()
    }

    /// Starts the adversarial phase from a pretrained generator: a fresh
    /// discriminator and optimizers, iteration counter and baseline reset.
    pub fn begin_adversarial(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        let arch_changed = match self.mode() {
            GenMode::Prediction => config.prediction != self.config.prediction,
            GenMode::Synthesis => config.synthesis != self.config.synthesis,
        };
        if arch_changed {
            return Err(Error::InvalidConfig(
                "generator architecture differs from the pretrained checkpoint".into(),
            ));
        }
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        init.set_stream(2);
        self.disc = Discriminator::new(config.discriminator.clone(), &mut init)?;
        self.opt_d = config.adam();
        self.opt_g = config.adam();
        self.rng = ChaCha8Rng::seed_from_u64(config.seed);
        self.rng.set_stream(3);
        self.config = config;
        self.step = 0;
        self.baseline = None;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mode = self.mode();
        let state = json!({
            "mode": mode,
            "pretrain_step": self.pretrain_step,
            "baseline": self.baseline,
            "opt_d_t": self.opt_d.state.t,
            "opt_g_t": self.opt_g.state.t,
            "rng": {
                "seed": hex(&self.rng.get_seed()),
                "stream": self.rng.get_stream(),
                "word_pos": self.rng.get_word_pos().to_string(),
            },
        });
        let mut ckpt = Checkpoint::new(self.step, serde_json::to_value(&self.config)?, state);
        push_module(&mut ckpt, "D", &self.disc);
        push_module(&mut ckpt, gen_prefix(mode), &self.gen);
        push_moments(&mut ckpt, "optD", &self.disc, &self.opt_d.state);
        push_moments(&mut ckpt, "optG", &self.gen, &self.opt_g.state);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_owned());
        let config: TrainConfig = serde_json::from_value(ckpt.config.clone())?;
        let s = &ckpt.state;
        let mode: GenMode = serde_json::from_value(s["mode"].clone())?;
        let mut state = Self::new(config, mode)?;
        state.step = ckpt.step;
        state.pretrain_step = s["pretrain_step"].as_u64().ok_or_else(|| corrupt("missing pretrain_step"))?;
        state.baseline = s["baseline"].as_f64();
        let expected = load_module(ckpt, "D", &mut state.disc)? + load_module(ckpt, gen_prefix(mode), &mut state.gen)?;
        let t_d = s["opt_d_t"].as_u64().ok_or_else(|| corrupt("missing opt_d_t"))?;
        let t_g = s["opt_g_t"].as_u64().ok_or_else(|| corrupt("missing opt_g_t"))?;
        let moments = load_moments(ckpt, "optD", &state.disc, t_d, &mut state.opt_d.state)?
            + load_moments(ckpt, "optG", &state.gen, t_g, &mut state.opt_g.state)?;
        if expected + moments != ckpt.tensors.len() {
            return Err(corrupt(&format!(
                "checkpoint holds {} tensors, the model uses {}",
                ckpt.tensors.len(),
                expected + moments
            )));
        }
        let rng = &s["rng"];
        let seed = unhex(rng["seed"].as_str().unwrap_or("")).ok_or_else(|| corrupt("bad rng seed"))?;
        state.rng = ChaCha8Rng::from_seed(seed);
        state.rng.set_stream(rng["stream"].as_u64().ok_or_else(|| corrupt("bad rng stream"))?);
        let pos: u128 = rng["word_pos"]
            .as_str()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| corrupt("bad rng position"))?;
        state.rng.set_word_pos(pos);
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn push_module<M: Module<f32>>(ckpt: &mut Checkpoint, prefix: &str, m: &M) {
    for (name, p) in m.params() {
        ckpt.push(format!("{prefix}/{name}"), p.value.clone());
    }
}

fn push_moments<M: Module<f32>>(ckpt: &mut Checkpoint, prefix: &str, m: &M, st: &AdamState<f32>) {
    if st.m.is_empty() {
        return;
    }
    for ((name, _), (mm, vv)) in m.params().iter().zip(st.m.iter().zip(&st.v)) {
        ckpt.push(format!("{prefix}/m/{name}"), mm.clone());
        ckpt.push(format!("{prefix}/v/{name}"), vv.clone());
    }
}

fn load_module<M: Module<f32>>(ckpt: &Checkpoint, prefix: &str, m: &mut M) -> Result<usize> {
    let mut n = 0;
    for (name, p) in m.params_mut() {
        let shape = p.value.shape().to_vec();
        *p = Param::new(ckpt.expect(&format!("{prefix}/{name}"), &shape)?.clone());
        n += 1;
    }
    Ok(n)
}

fn load_moments<M: Module<f32>>(
    ckpt: &Checkpoint,
    prefix: &str,
    m: &M,
    t: u64,
    st: &mut AdamState<f32>,
) -> Result<usize> {
    st.t = t;
    st.m.clear();
    st.v.clear();
    if !ckpt.has_prefix(&format!("{prefix}/")) {
        if t != 0 {
            return Err(Error::CorruptCheckpoint(format!("{prefix} moments missing")));
        }
        return Ok(0);
    }
    for (name, p) in m.params() {
        let get = |kind: &str| -> Result<ArrayD<f32>> {
            Ok(ckpt.expect(&format!("{prefix}/{kind}/{name}"), p.value.shape())?.clone())
        };
        st.m.push(get("m")?);
        st.v.push(get("v")?);
    }
    Ok(2 * st.m.len())
}

/// Samples eligible for `mode`: synthesis needs a non-empty transcription.
pub fn training_pool(samples: &[HandwritingSample], mode: GenMode) -> Vec<HandwritingSample> {
    samples
        .iter()
        .filter(|s| mode == GenMode::Prediction || s.text().is_some_and(|t| !t.is_empty()))
        .cloned()
        .collect()
}

fn choose<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

fn append_line(path: &Path, line: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(line)?)?;
    Ok(())
}

/// Checkpoint file name for a step.
pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub step: u64,
    pub nll: f64,
    pub lr: f64,
}

/// Maximum-likelihood pretraining of the generator for `steps` batches
/// drawn from `data`. With `out`, appends to `metrics.jsonl` and writes
/// checkpoints there.
pub fn pretrain(
    state: &mut TrainState,
    data: &[HandwritingSample],
    steps: u64,
    out: Option<&Path>,
) -> Result<Vec<PretrainReport>> {
    let pool = training_pool(data, state.mode());
    if pool.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no samples usable for {:?} pretraining",
            state.mode()
        )));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let end = state.pretrain_step + steps;
    let mut reports = Vec::with_capacity(steps as usize);
    while state.pretrain_step < end {
        let step = state.pretrain_step;
        let idx = choose(&mut state.rng, pool.len(), state.config.batch_size);
        let batch = Batch::gather(&pool, &idx, state.config.max_len);
        let lr = state.config.lr_g_at(step);
        let m = match pretrain_step(&mut state.gen, &batch, &mut state.opt_g, lr, step) {
            Ok(m) => m,
            Err(e) => return Err(halt(state, out, e)),
        };
        state.pretrain_step += 1;
        let report = PretrainReport { step, nll: m.nll, lr };
        if let Some(dir) = out {
            append_line(&dir.join("metrics.jsonl"), &report)?;
            let every = state.config.checkpoint_every;
            if every > 0 && state.pretrain_step % every == 0 && state.pretrain_step < end {
                state.save(&dir.join(checkpoint_name(state.pretrain_step)))?;
            }
        }
        reports.push(report);
    }
    if let Some(dir) = out {
        state.save(&dir.join(checkpoint_name(state.pretrain_step)))?;
    }
    Ok(reports)
}

fn halt(state: &TrainState, out: Option<&Path>, e: Error) -> Error {
    if let (Some(dir), Error::Divergence { step, .. }) = (out, &e) {
        let path = dir.join(format!("diverged_{step:06}.ckpt"));
        if let Err(save) = state.save(&path) {
            return Error::Divergence {
                step: *step,
                message: format!("{e}; saving checkpoint also failed: {save}"),
            };
        }
    }
    e
}

/// One line of the adversarial metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub step: u64,
    pub d_loss: f64,
    pub g_reward_mean: f64,
    pub d_acc_real: f64,
    pub d_acc_fake: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub metrics: MetricLine,
    pub d: DStepMetrics,
    pub g: GStepMetrics,
    pub width: usize,
}

/// Runs `iterations` adversarial iterations, each one discriminator step
/// then one generator step.
///
/// Every iteration draws fresh reals from `data` and fresh fakes from the
/// current generator; in synthesis mode the fakes are written from the
/// reals' transcriptions. Reals and fakes share one canvas: the widest
/// bucket among the drawn reals. With `out`, metrics, checkpoints and
/// sample dumps go there; a divergence saves the state before returning
/// the error.
pub fn gan_loop(
    state: &mut TrainState,
    data: &[HandwritingSample],
    iterations: u64,
    out: Option<&Path>,
) -> Result<Vec<IterationReport>> {
    let mode = state.mode();
    let mut pool = Vec::new();
    let mut buckets = Vec::new();
    for s in training_pool(data, mode) {
        // Flat lines cannot be height-normalized and never make it to D.
        if let Ok(w) = state.config.buckets.bucket_for(&s) {
            buckets.push(w);
            pool.push(s);
        }
    }
    if pool.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no samples usable for {mode:?} adversarial training"
        )));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("samples"))?;
    }
    let end = state.step + iterations;
    let mut reports = Vec::with_capacity(iterations as usize);
    while state.step < end {
        let report = match iteration(state, &pool, &buckets) {
            Ok(r) => r,
            Err(e) => return Err(halt(state, out, e)),
        };
        state.step += 1;
        if let Some(dir) = out {
            append_line(&dir.join("metrics.jsonl"), &report.metrics)?;
            let c = &state.config;
            if c.sample_every > 0 && state.step % c.sample_every == 0 {
                dump_samples(state, &pool, dir)?;
            }
            if c.checkpoint_every > 0 && state.step % c.checkpoint_every == 0 && state.step < end {
                state.save(&dir.join(checkpoint_name(state.step)))?;
            }
        }
        reports.push(report);
    }
    if let Some(dir) = out {
        state.save(&dir.join(checkpoint_name(state.step)))?;
    }
    Ok(reports)
}

fn iteration(state: &mut TrainState, pool: &[HandwritingSample], buckets: &[usize]) -> Result<IterationReport> {
    let step = state.step;
    let c = state.config.clone();
    let (lr_g, lr_d) = (c.lr_g_at(step), c.lr_d_at(step));
    let idx = choose(&mut state.rng, pool.len(), c.batch_size);
    let width = idx.iter().map(|&i| buckets[i]).max().expect("non-empty batch");
    let real = idx
        .iter()
        .map(|&i| raster_or_blank(&pool[i], &c.psf, width))
        .collect::<Result<Vec<_>>>()?;
    let texts: Vec<Option<TextEncoding>> = match state.mode() {
        GenMode::Prediction => vec![None; idx.len()],
        GenMode::Synthesis => idx
            .iter()
            .map(|&i| pool[i].text().map(|t| encode_text(t, &Vocabulary)))
            .collect(),
    };
    let sampler = SamplerConfig {
        bias: c.bias_at(step),
        ..c.sampler.clone()
    };
    let fake = make_fake_batch(&state.gen, &texts, &sampler, &c.psf, &c.buckets, Some(width), &mut state.rng)?;
    let d = d_adv_step(&mut state.disc, &real, &fake.rasters, &mut state.opt_d, lr_d, c.label_smoothing, step)?;
    let rewards = state.disc.probabilities(&fake.rasters)?;
    let g = g_adv_step(
        &mut state.gen,
        &fake,
        &rewards,
        &mut state.baseline,
        c.baseline_momentum,
        &mut state.opt_g,
        lr_g,
        step,
    )?;
    Ok(IterationReport {
        metrics: MetricLine {
            step,
            d_loss: d.loss,
            g_reward_mean: g.reward_mean,
            d_acc_real: d.acc_real,
            d_acc_fake: d.acc_fake,
            lr_g,
            lr_d,
        },
        d,
        g,
        width,
    })
}

// Uses its own rng so dumping does not perturb the training stream.
fn dump_samples(state: &TrainState, pool: &[HandwritingSample], dir: &Path) -> Result<()> {
    let c = &state.config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ state.step.rotate_left(32));
    let mut samples = Vec::with_capacity(c.samples_per_dump);
    for k in 0..c.samples_per_dump {
        let text = match state.mode() {
            GenMode::Prediction => None,
            GenMode::Synthesis => pool[k % pool.len()].text().map(|t| encode_text(t, &Vocabulary)),
        };
        samples.push(sample_sequence(&state.gen, text.as_ref(), &c.sampler, &mut rng)?.sample);
    }
    let f = fs::File::create(dir.join("samples").join(format!("step_{:06}.jsonl", state.step)))?;
    write_jsonl(std::io::BufWriter::new(f), &samples)
}
