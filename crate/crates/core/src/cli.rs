//! The `lcdnet` command line.
//!
//! Every subcommand reads an optional `key = value` config file; command-line
//! flags (including repeated `--set key=value`) override file values, and the
//! global `--seed` overrides both. Outputs are staged and renamed into place
//! only when a command succeeds.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::curriculum::FileOracle;
use crate::dataio::{load_dataset, read_manifest, save_dataset, AugmentationConfig, Sample, SynthSpec};
use crate::error::{Error, Result};
use crate::fsutil::StagedOutputs;
use crate::groundtruth::{
    downscale_target, read_float_grid, render_density, write_float_grid, write_pgm, AltitudeBand, DensityConfig,
    SigmaMode,
};
use crate::metrics::{evaluate_image, GridSetting, MetricReport, MetricsConfig, SsimConfig, SsimMode};
use crate::model::{complexity_report, init_params, load_checkpoint, write_checkpoint, ModelParams};
use crate::numerics::Tensor;
use crate::trainer::{train, Curriculum, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lcdnet", version, about = "Lightweight crowd density estimation")]
pub struct Cli {
    /// Seed for every random choice (overrides config files).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render full- and half-resolution density maps for a dataset.
    Gengt(GengtArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Time forward passes and print the cost model.
    Bench(BenchArgs),
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Convert a density map to a grayscale PGM image.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GengtArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Fixed kernel width (selects `mode = fixed`).
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Separate dataset used to pick the best checkpoint.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `off`, `count`, `teacher:<checkpoint>` or `file:<scores>`.
    #[arg(long)]
    pub curriculum: Option<String>,
    /// Train on raw images.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to score; not needed with `--self-eval`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Use the ground truth as the prediction (sanity check of the metrics).
    #[arg(long)]
    pub self_eval: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a seeded random initialisation otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// `f32` or `f64` arithmetic.
    #[arg(long, default_value = "f32")]
    pub precision: String,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Float-grid map file.
    #[arg(long)]
    pub map: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
/// Reports go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    run_with_output(args, &mut stdout)
}

/// [`run`] with the report stream supplied by the caller.
pub fn run_with_output<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    log::set_max_level(level);

    let result = match cli.threads {
        Some(0) => Err(Error::config("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, out)),
            Err(e) => Err(Error::config(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::Training(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let report = match &cli.command {
        Command::Gengt(a) => cmd_gengt(a)?,
        Command::Train(a) => cmd_train(a, cli.seed)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Bench(a) => cmd_bench(a, cli.seed)?,
        Command::Synth(a) => cmd_synth(a, cli.seed)?,
        Command::Export(a) => cmd_export(a)?,
    };
    out.write_all(report.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Parsed `key = value` settings with the place each value came from.
#[derive(Debug, Default, Clone)]
pub struct KeyValues {
    values: BTreeMap<String, (String, String)>,
}

impl KeyValues {
    /// Parses a config body. `#` starts a comment; keys are case-sensitive.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut kv = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::load(origin, Some(i + 1), "expected `key = value`"))?;
            kv.values
                .insert(k.trim().to_string(), (v.trim().to_string(), format!("{} line {}", origin.display(), i + 1)));
        }
        Ok(kv)
    }

    fn load(args: &ConfigArgs) -> Result<Self> {
        let mut kv = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, p)?
            }
            None => Self::default(),
        };
        for s in &args.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), (value.to_string(), "command line".to_string()));
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, origin)) => {
                v.parse().map(Some).map_err(|_| Error::config(format!("{origin}: cannot parse `{key} = {v}`")))
            }
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on any key outside `known`, naming where it was set.
    fn reject_unknown(&self, known: &[&[&str]]) -> Result<()> {
        for (k, (_, origin)) in &self.values {
            if !known.iter().any(|set| set.contains(&k.as_str())) {
                return Err(Error::config(format!("{origin}: unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

const DENSITY_KEYS: &[&str] = &["mode", "sigma", "k", "beta", "bands", "truncation", "renormalize", "fallback_sigma"];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "epochs",
    "max_steps",
    "eval_every",
    "seed",
    "curriculum",
    "augment",
    "flip_prob",
    "brightness",
    "contrast_min",
    "contrast_max",
    "init_std",
    "loss_window",
    "grid",
];
const METRIC_KEYS: &[&str] = &["grid", "ssim", "ssim_c1", "ssim_c2", "ssim_range", "psnr_max"];
const SYNTH_KEYS: &[&str] = &["scenes", "width", "height", "objects", "radius_min", "radius_max", "noise", "seed"];

/// Density settings: `mode` is `fixed` (`sigma`), `adaptive` (`k`, `beta`)
/// or `altitude` (`bands = lo:hi:sigma; ...`).
pub fn density_from(kv: &KeyValues) -> Result<DensityConfig> {
    let base = DensityConfig::default();
    let mode = match kv.get_str("mode").unwrap_or("fixed") {
        "fixed" => SigmaMode::Fixed { sigma: kv.get_or("sigma", 4.0)? },
        "adaptive" => SigmaMode::AdaptiveKnn { k: kv.get_or("k", 3)?, beta: kv.get_or("beta", 1.0)? },
        "altitude" => {
            let text =
                kv.get_str("bands").ok_or_else(|| Error::config("altitude mode needs `bands = lo:hi:sigma; ...`"))?;
            let bands = text
                .split(';')
                .filter(|b| !b.trim().is_empty())
                .map(|b| {
                    let parts: Vec<f64> = b
                        .split(':')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::config(format!("bad altitude band `{b}`")))?;
                    match parts[..] {
                        [min_alt, max_alt, sigma] => Ok(AltitudeBand { min_alt, max_alt, sigma }),
                        _ => Err(Error::config(format!("altitude band `{b}` must be lo:hi:sigma"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            SigmaMode::AltitudeGrouped { bands }
        }
        other => return Err(Error::config(format!("unknown density mode `{other}`"))),
    };
    let cfg = DensityConfig {
        mode,
        truncation_radius_sigmas: kv.get_or("truncation", base.truncation_radius_sigmas)?,
        renormalize: kv.get_or("renormalize", base.renormalize)?,
        fallback_sigma: kv.get_or("fallback_sigma", base.fallback_sigma)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `RxC` or `L<level>`.
pub fn parse_grid(text: &str) -> Result<GridSetting> {
    let t = text.trim();
    if let Some(level) = t.strip_prefix('L').or_else(|| t.strip_prefix('l')) {
        let level = level.parse().map_err(|_| Error::config(format!("bad grid level `{t}`")))?;
        return Ok(GridSetting::Power { level });
    }
    let (r, c) = t.split_once('x').ok_or_else(|| Error::config(format!("grid must be RxC or L<level>, got `{t}`")))?;
    match (r.parse(), c.parse()) {
        (Ok(rows), Ok(cols)) if rows > 0 && cols > 0 => Ok(GridSetting::Explicit { rows, cols }),
        _ => Err(Error::config(format!("bad grid `{t}`"))),
    }
}

pub fn metrics_from(kv: &KeyValues) -> Result<MetricsConfig> {
    let grid = match kv.get_str("grid") {
        Some(g) => parse_grid(g)?,
        None => GridSetting::default(),
    };
    let mode = match kv.get_str("ssim").unwrap_or("global") {
        "global" => SsimMode::GlobalStats,
        w => match w.strip_prefix("windowed") {
            Some("") => SsimMode::Windowed { size: 11 },
            Some(rest) => SsimMode::Windowed {
                size: rest
                    .trim_start_matches(':')
                    .parse()
                    .map_err(|_| Error::config(format!("bad SSIM window `{w}`")))?,
            },
            None => return Err(Error::config(format!("ssim must be `global` or `windowed[:N]`, got `{w}`"))),
        },
    };
    Ok(MetricsConfig {
        grid,
        ssim: SsimConfig { c1: kv.get("ssim_c1")?, c2: kv.get("ssim_c2")?, dynamic_range: kv.get("ssim_range")?, mode },
        psnr_max: kv.get("psnr_max")?,
    })
}

fn parse_curriculum(text: &str) -> Result<Curriculum> {
    Ok(match text {
        "off" | "none" => Curriculum::Off,
        "count" | "on" => Curriculum::CountProxy,
        t => {
            if let Some(path) = t.strip_prefix("teacher:") {
                Curriculum::Teacher(load_checkpoint(path)?)
            } else if let Some(path) = t.strip_prefix("file:") {
                let oracle = FileOracle::load(Path::new(path))?;
                Curriculum::Scores(oracle.into_scores())
            } else {
                return Err(Error::config(format!(
                    "curriculum must be off, count, teacher:<checkpoint> or file:<scores>, got `{t}`"
                )));
            }
        }
    })
}

pub fn train_config_from(kv: &KeyValues) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let seed = kv.get_or("seed", d.seed)?;
    let augmentation = if kv.get_or("augment", true)? {
        let a = AugmentationConfig::default();
        Some(AugmentationConfig {
            horizontal_flip_prob: kv.get_or("flip_prob", a.horizontal_flip_prob)?,
            brightness_delta_range: {
                let b: f64 = kv.get_or("brightness", a.brightness_delta_range.1)?;
                (-b, b)
            },
            contrast_factor_range: (
                kv.get_or("contrast_min", a.contrast_factor_range.0)?,
                kv.get_or("contrast_max", a.contrast_factor_range.1)?,
            ),
            seed,
        })
    } else {
        None
    };
    let cfg = TrainConfig {
        lr: kv.get_or("lr", d.lr)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        max_epochs: kv.get_or("epochs", d.max_epochs)?,
        max_steps: kv.get("max_steps")?,
        eval_every: kv.get_or("eval_every", d.eval_every)?,
        seed,
        curriculum: parse_curriculum(kv.get_str("curriculum").unwrap_or("count"))?,
        augmentation,
        density: density_from(kv)?,
        init_std: kv.get_or("init_std", d.init_std)?,
        loss_window: kv.get_or("loss_window", d.loss_window)?,
        grid: match kv.get_str("grid") {
            Some(g) => parse_grid(g)?,
            None => d.grid,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth_specs_from(kv: &KeyValues) -> Result<Vec<SynthSpec>> {
    let d = SynthSpec::default();
    let n: usize = kv.get_or("scenes", 1)?;
    let seed: u64 = kv.get_or("seed", d.seed)?;
    let base = SynthSpec {
        width: kv.get_or("width", d.width)?,
        height: kv.get_or("height", d.height)?,
        n_objects: kv.get_or("objects", d.n_objects)?,
        object_radius_range: (
            kv.get_or("radius_min", d.object_radius_range.0)?,
            kv.get_or("radius_max", d.object_radius_range.1)?,
        ),
        background_noise: kv.get_or("noise", d.background_noise)?,
        seed,
    };
    Ok((0..n).map(|i| SynthSpec { seed: seed.wrapping_add(i as u64), ..base }).collect())
}

/// File stem for a manifest image path: directories flattened with `_`,
/// extension dropped.
fn output_stem(image: &str) -> String {
    let p = Path::new(image);
    let stem = p.with_extension("");
    stem.to_string_lossy().replace(['/', '\\'], "_")
}

fn cmd_gengt(args: &GengtArgs) -> Result<String> {
    let mut kv = KeyValues::load(&args.cfg)?;
    if let Some(s) = args.sigma {
        kv.set("mode", "fixed");
        kv.set("sigma", s);
    }
    kv.reject_unknown(&[DENSITY_KEYS])?;
    let density = density_from(&kv)?;
    let entries = read_manifest(&args.manifest)?;
    let samples = load_dataset(&args.manifest)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut stage = StagedOutputs::new();
    let (mut counts, mut mass, mut worst) = (0usize, 0.0f64, 0.0f64);
    for (entry, sample) in entries.iter().zip(&samples) {
        let full = render_density(&sample.dots, &density)
            .map_err(|e| Error::load(&args.manifest, Some(entry.line), format!("{}: {e}", entry.image)))?;
        let half = downscale_target(&full)?;
        let stem = output_stem(&entry.image);
        stage.write(args.out.join(format!("{stem}.full.map")), write_float_grid(&full)?.as_bytes())?;
        stage.write(args.out.join(format!("{stem}.half.map")), write_float_grid(&half)?.as_bytes())?;
        let n = sample.dots.count();
        counts += n;
        mass += full.sum();
        worst = worst.max((full.sum() - n as f64).abs()).max((half.sum() - n as f64).abs());
    }
    let files = stage.len();
    stage.commit()?;
    Ok(format!(
        "{} images, {files} map files; total count {counts}, total mass {mass:.9}, max per-image mass error {worst:.3e}\n",
        samples.len()
    ))
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<String> {
    let mut kv = KeyValues::load(&args.cfg)?;
    if let Some(v) = args.epochs {
        kv.set("epochs", v);
    }
    if let Some(v) = args.max_steps {
        kv.set("max_steps", v);
    }
    if let Some(v) = args.batch_size {
        kv.set("batch_size", v);
    }
    if let Some(v) = args.lr {
        kv.set("lr", v);
    }
    if let Some(v) = &args.curriculum {
        kv.set("curriculum", v);
    }
    if args.no_augment {
        kv.set("augment", false);
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    kv.reject_unknown(&[DENSITY_KEYS, TRAIN_KEYS])?;
    let config = train_config_from(&kv)?;
    let samples = load_dataset(&args.manifest)?;
    let validation = match &args.validation {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (params, log) = train(&samples, &config, validation.as_deref())?;
    let mut stage = StagedOutputs::new();
    stage.write(args.out.join("best.ckpt"), &write_checkpoint(&params))?;
    stage.write(args.out.join("train_log.csv"), log.render_steps().as_bytes())?;
    stage.write(args.out.join("eval_log.csv"), log.render_evals().as_bytes())?;
    if let Some(plan) = &log.plan {
        stage.write(args.out.join("curriculum_plan.txt"), plan.export().as_bytes())?;
    }
    stage.commit()?;

    let mut out = format!(
        "trained {} steps on {} images; best eval MAE {:.4} at step {}\n",
        log.steps.len(),
        samples.len(),
        log.best_mae.unwrap_or(f64::NAN),
        log.best_step
    );
    if let Some(plan) = &log.plan {
        let means = plan.batch_means();
        let _ = writeln!(
            out,
            "curriculum: {} batches, mean scores {:.3} .. {:.3}",
            plan.len(),
            means.first().copied().unwrap_or(0.0),
            means.last().copied().unwrap_or(0.0)
        );
    }
    for f in &log.flagged {
        let _ = writeln!(out, "flagged: {f}");
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let kv = KeyValues::load(&args.cfg)?;
    kv.reject_unknown(&[DENSITY_KEYS, METRIC_KEYS])?;
    let density = density_from(&kv)?;
    let metrics = metrics_from(&kv)?;
    let params = match (&args.checkpoint, args.self_eval) {
        (_, true) => None,
        (Some(p), false) => Some(load_checkpoint(p)?),
        (None, false) => return Err(Error::config("eval needs --checkpoint unless --self-eval is given")),
    };
    let samples = load_dataset(&args.manifest)?;
    if samples.is_empty() {
        return Err(Error::config("evaluation manifest lists no images"));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let rows = samples
        .iter()
        .map(|s: &Sample| {
            let gt = downscale_target(&render_density(&s.dots, &density)?)?;
            let pred = match &params {
                Some(p) => p.forward(&s.image)?,
                None => gt.clone(),
            };
            evaluate_image(&s.id, &pred, &gt, &metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::from_images(rows, metrics)?;
    let mut stage = StagedOutputs::new();
    let table = report.render_table();
    stage.write(args.out.join("metrics.txt"), table.as_bytes())?;
    stage.write(args.out.join("metrics.tsv"), report.render_delimited().as_bytes())?;
    stage.commit()?;
    Ok(table)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn cmd_bench(args: &BenchArgs, seed: Option<u64>) -> Result<String> {
    if args.iterations == 0 {
        return Err(Error::config("--iterations must be at least 1"));
    }
    let params = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => init_params(seed.unwrap_or(0)),
    };
    let report = complexity_report(params.manifest(), args.height, args.width, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    let input = Tensor::from_fn(vec![1, 3, args.height, args.width], |_| u.sample(&mut rng))?;

    let mut times = Vec::with_capacity(args.iterations);
    match args.precision.as_str() {
        "f64" => time_forward(&params, &input, args, &mut times)?,
        "f32" => time_forward(&params.cast::<f32>(), &input.cast::<f32>(), args, &mut times)?,
        other => return Err(Error::config(format!("precision must be f32 or f64, got `{other}`"))),
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;

    let mut out = String::new();
    let _ = writeln!(out, "{}", report.render().trim_end());
    let _ = writeln!(out, "precision           {}", args.precision);
    let _ = writeln!(out, "warmup_runs         {}", args.warmup);
    let _ = writeln!(out, "timed_runs          {}", times.len());
    let _ = writeln!(
        out,
        "latency_ms          mean {:.3}  median {:.3}  p95 {:.3}",
        mean,
        percentile(&sorted, 0.5),
        percentile(&sorted, 0.95)
    );
    let _ = writeln!(out, "threads             {}", rayon::current_num_threads());
    if let Some(p) = &args.out {
        crate::fsutil::atomic_write(p, out.as_bytes())?;
    }
    Ok(out)
}

fn time_forward<T: crate::numerics::Scalar>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    args: &BenchArgs,
    times: &mut Vec<f64>,
) -> Result<()> {
    for _ in 0..args.warmup {
        std::hint::black_box(params.forward(input)?);
    }
    for _ in 0..args.iterations {
        let t = Instant::now();
        std::hint::black_box(params.forward(input)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, seed: Option<u64>) -> Result<String> {
    let mut kv = KeyValues::load(&args.cfg)?;
    if let Some(n) = args.scenes {
        kv.set("scenes", n);
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    kv.reject_unknown(&[SYNTH_KEYS])?;
    let specs = synth_specs_from(&kv)?;
    let scenes = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (img, dots) = crate::dataio::synth_scene(spec)?;
            Ok((format!("scene_{i:04}"), img, dots))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = save_dataset(&args.out, &scenes)?;
    Ok(format!("{} scenes written; manifest {}\n", scenes.len(), manifest.display()))
}

fn cmd_export(args: &ExportArgs) -> Result<String> {
    let text = std::fs::read_to_string(&args.map).map_err(|e| Error::io(&args.map, e))?;
    let map = read_float_grid(&text, &args.map)?;
    let bytes = write_pgm(&map)?;
    crate::fsutil::atomic_write(&args.out, &bytes)?;
    Ok(format!("wrote {}\n", args.out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_and_overrides() {
        let mut kv = KeyValues::parse("lr = 0.001\n# c\nbatch_size=2 # trailing\n", Path::new("t.cfg")).unwrap();
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(0.001));
        kv.set("lr", 0.5);
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(0.5));
        let err = kv.get::<usize>("lr").unwrap_err();
        assert!(err.to_string().contains("command line"), "{err}");
        assert!(KeyValues::parse("novalue\n", Path::new("t.cfg")).is_err());
        assert!(kv.reject_unknown(&[TRAIN_KEYS]).is_ok());
        kv.set("bogus", 1);
        assert!(kv.reject_unknown(&[TRAIN_KEYS]).is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("4x4").unwrap(), GridSetting::Explicit { rows: 4, cols: 4 });
        assert_eq!(parse_grid("L2").unwrap(), GridSetting::Power { level: 2 });
        assert!(parse_grid("0x3").is_err());
        assert!(parse_grid("four").is_err());
    }

    #[test]
    fn density_modes() {
        let kv = KeyValues::parse("mode = altitude\nbands = 0:30:5; 30:100:3\n", Path::new("d")).unwrap();
        let d = density_from(&kv).unwrap();
        assert!(matches!(d.mode, SigmaMode::AltitudeGrouped { ref bands } if bands.len() == 2));
        let kv = KeyValues::parse("mode = nope\n", Path::new("d")).unwrap();
        assert!(density_from(&kv).is_err());
    }

    #[test]
    fn stems() {
        assert_eq!(output_stem("a/b/img_01.ppm"), "a_b_img_01");
        assert_eq!(output_stem("x.png"), "x");
    }
}
