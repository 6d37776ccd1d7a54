//! `hwgan` command-line tool.

mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hwgan::data::{encode_text, load_iam, DatasetSplit, Vocabulary};
use hwgan::eval::{eval_report, render_png, render_svg};
use hwgan::generator::{sample_sequence, GenMode, SamplerConfig};
use hwgan::stroke::{read_jsonl, write_jsonl, HandwritingSample};
use hwgan::trainer::{gan_loop, pretrain, BiasStage, TrainState};

use config::{CliConfig, Preset};

/// Environment variable naming the default cache directory.
pub const CACHE_ENV: &str = "HWGAN_CACHE_DIR";

const CACHE_FILE: &str = "iam.jsonl";
const STATS_FILE: &str = "stats.json";

#[derive(Parser, Debug)]
#[command(name = "hwgan", version, about = "Adversarial handwriting generation for digital ink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an IAM-OnDB tree into the sample cache.
    Preprocess(PreprocessArgs),
    /// Maximum-likelihood pretraining of a generator.
    Pretrain(TrainArgs),
    /// Adversarial training from a pretrained generator.
    TrainGan(GanArgs),
    /// Draw samples from a checkpoint and render them.
    Sample(SampleArgs),
    /// Spacing-uniformity report over a directory of samples.
    Eval(EvalArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Prediction,
    Synthesis,
}

impl From<Mode> for GenMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Prediction => GenMode::Prediction,
            Mode::Synthesis => GenMode::Synthesis,
        }
    }
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base settings the config file and flags are applied on.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Cache directory written by `preprocess`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Root holding `lineStrokes-all/` and `ascii-all/`.
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    common: CommonArgs,
    /// Steps to run in this invocation.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sets both learning rates.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint written by the same command.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GanArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Pretrained generator checkpoint to start from.
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Constant sampling bias for fakes during training.
    #[arg(long)]
    train_bias: Option<f64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Text to write; needs a synthesis checkpoint.
    #[arg(long)]
    text: Option<String>,
    #[arg(long, default_value_t = 3.0)]
    bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Length cap for unconditioned samples.
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
    /// Height of the PNG renders in pixels.
    #[arg(long, default_value_t = 128)]
    png_height: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of `.jsonl` sample files.
    #[arg(long)]
    samples: PathBuf,
    /// Report path; defaults to `report.json` inside the sample directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Preprocess(a) => preprocess(a),
        Command::Pretrain(a) => run_pretrain(a),
        Command::TrainGan(a) => run_gan(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
    }
}

fn load_config(common: &CommonArgs) -> Result<CliConfig> {
    let mut c = CliConfig::load(common.preset, common.config.as_deref())?;
    if let Some(p) = &common.cache {
        c.cache = Some(p.clone());
    }
    if let Some(p) = &common.out {
        c.out = Some(p.clone());
    }
    if let Some(s) = common.seed {
        c.train.seed = s;
    }
    Ok(c)
}

fn cache_dir(c: &CliConfig) -> PathBuf {
    c.cache
        .clone()
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cache"))
}

fn out_dir(c: &CliConfig, fallback: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    if let Some(r) = a.data_root {
        c.data_root = Some(r);
    }
    let root = c.data_root.clone().context("no data root: pass --data-root")?;
    let corpus = load_iam(&root).with_context(|| format!("reading IAM tree at {}", root.display()))?;
    if corpus.samples.is_empty() {
        bail!("no usable samples under {}", root.display());
    }
    let dir = cache_dir(&c);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let f = fs::File::create(dir.join(CACHE_FILE))?;
    write_jsonl(std::io::BufWriter::new(f), &corpus.samples)?;
    write_json(&dir.join(STATS_FILE), &corpus.stats)?;
    eprintln!(
        "cached {} samples ({} with text, {} skipped files) in {}",
        corpus.stats.samples,
        corpus.stats.with_text,
        corpus.stats.skipped.len(),
        dir.display()
    );
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<HandwritingSample>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_split(c: &CliConfig) -> Result<DatasetSplit> {
    let path = cache_dir(c).join(CACHE_FILE);
    let samples = read_samples(&path).context("run `hwgan preprocess` first")?;
    Ok(DatasetSplit::new(samples, c.train.validation_fraction, c.train.seed)?)
}

fn apply_train_flags(c: &mut CliConfig, a: &TrainArgs) {
    if let Some(s) = a.steps {
        c.train.steps = s;
    }
    if let Some(b) = a.batch_size {
        c.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        c.train.lr_g = lr;
        c.train.lr_d = lr;
    }
    if let Some(k) = a.checkpoint_every {
        c.train.checkpoint_every = k;
    }
}

// Starts the metric log afresh unless the run continues a checkpoint.
fn prepare_out(dir: &Path, resume: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let log = dir.join("metrics.jsonl");
    if !resume && log.exists() {
        fs::remove_file(&log)?;
    }
    Ok(())
}

fn load_state(path: &Path, mode: GenMode) -> Result<TrainState> {
    let state = TrainState::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if state.mode() != mode {
        bail!(
            "checkpoint {} holds a {:?} generator, --mode asked for {mode:?}",
            path.display(),
            state.mode()
        );
    }
    Ok(state)
}

fn run_pretrain(a: TrainArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    apply_train_flags(&mut c, &a);
    let mode = a.mode.into();
    let mut state = match &a.resume {
        Some(p) => {
            let s = load_state(p, mode)?;
            // Keep the run's own settings; only the step budget changes.
            c.train = hwgan::trainer::TrainConfig { steps: c.train.steps, ..s.config.clone() };
            s
        }
        None => TrainState::new(c.train.clone(), mode)?,
    };
    state.config.steps = c.train.steps;
    let out = out_dir(&c, "runs/pretrain");
    prepare_out(&out, a.resume.is_some())?;
    write_json(&out.join("config.json"), &c)?;
    let split = load_split(&c)?;
    let reports = pretrain(&mut state, &split.train, c.train.steps, Some(&out))?;
    if let Some(last) = reports.last() {
        eprintln!("pretrain step {} nll {:.4}", state.pretrain_step, last.nll);
    }
    Ok(())
}

fn run_gan(a: GanArgs) -> Result<()> {
    let t = &a.train;
    let mut c = load_config(&t.common)?;
    apply_train_flags(&mut c, t);
    if let Some(b) = a.train_bias {
        c.train.bias_schedule = vec![BiasStage { from_step: 0, bias: b }];
    }
    let mode = t.mode.into();
    let mut state = match (&t.resume, &a.init) {
        (Some(p), _) => {
            let s = load_state(p, mode)?;
            c.train = hwgan::trainer::TrainConfig { steps: c.train.steps, ..s.config.clone() };
            s
        }
        (None, Some(p)) => {
            let mut s = load_state(p, mode)?;
            // The generator architecture comes from the pretrained weights.
            c.train.prediction = s.config.prediction.clone();
            c.train.synthesis = s.config.synthesis.clone();
            s.begin_adversarial(c.train.clone())?;
            s
        }
        (None, None) => bail!("train-gan needs a pretrained generator: pass --init or --resume"),
    };
    state.config.steps = c.train.steps;
    let out = out_dir(&c, "runs/gan");
    prepare_out(&out, t.resume.is_some())?;
    write_json(&out.join("config.json"), &c)?;
    let split = load_split(&c)?;
    let reports = gan_loop(&mut state, &split.train, c.train.steps, Some(&out))?;
    if let Some(last) = reports.last() {
        let m = last.metrics;
        eprintln!(
            "gan step {} d_loss {:.4} reward {:.4} acc real {:.2} fake {:.2}",
            state.step, m.d_loss, m.g_reward_mean, m.d_acc_real, m.d_acc_fake
        );
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let state = TrainState::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let text = match (&a.text, state.mode()) {
        (Some(t), GenMode::Synthesis) => {
            if t.is_empty() {
                bail!("--text must not be empty");
            }
            Some(encode_text(t, &Vocabulary))
        }
        (Some(_), GenMode::Prediction) => bail!("--text needs a synthesis checkpoint"),
        (None, GenMode::Synthesis) => bail!("a synthesis checkpoint needs --text"),
        (None, GenMode::Prediction) => None,
    };
    let config = SamplerConfig {
        bias: a.bias,
        seed: a.seed,
        max_points: a.max_points.unwrap_or(state.config.sampler.max_points),
        ..state.config.sampler.clone()
    };
    config.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut rng = config.rng();
    for i in 0..a.count {
        let g = sample_sequence(&state.gen, text.as_ref(), &config, &mut rng)?;
        let stem = a.out.join(format!("sample_{i:03}"));
        let f = fs::File::create(stem.with_extension("jsonl"))?;
        write_jsonl(std::io::BufWriter::new(f), std::slice::from_ref(&g.sample))?;
        fs::write(stem.with_extension("svg"), render_svg(&g.sample, 1.5)?)?;
        render_png(&g.sample, a.png_height)?.save_png(&stem.with_extension("png"))?;
    }
    eprintln!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.samples)
        .with_context(|| format!("reading {}", a.samples.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
    files.sort();
    let mut samples = Vec::new();
    for f in &files {
        samples.extend(read_samples(f)?);
    }
    if samples.is_empty() {
        bail!("no samples found in {}", a.samples.display());
    }
    let report = eval_report(&samples)?;
    let out = a.out.unwrap_or_else(|| a.samples.join("report.json"));
    write_json(&out, &report)?;
    eprintln!("evaluated {} samples from {} files", samples.len(), files.len());
    Ok(())
}
