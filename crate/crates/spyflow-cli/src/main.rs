//! Command-line front end: dataset synthesis, training, inference,
//! evaluation and visualization. Every command writes a run manifest next to
//! its outputs so artifacts can be regenerated from the recorded settings.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use spyflow::data::{
    flow_to_color, generate_sample, load_dataset, read_flo, read_image, write_flo, write_image,
    write_manifest, ManifestEntry, MotionFlags, SynthSpec,
};
use spyflow::eval::segmented_report;
use spyflow::model::{
    first_layer_filters, infer, load_checkpoint, save_checkpoint, PyramidModel,
};
use spyflow::pyramid::resize_image_bilinear;
use spyflow::trainer::{
    normalize_image, train_pyramid, AugmentConfig, TrainConfig, IMAGENET_MEAN, IMAGENET_STD,
};
use spyflow::FlowField;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "spyflow", version, about = "Coarse-to-fine pyramid optical flow", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with dense ground-truth flow
    Synth(SynthArgs),
    /// Train the level networks coarsest-first on a dataset manifest
    Train(TrainArgs),
    /// Estimate flow for an image pair with a trained checkpoint
    Infer(InferArgs),
    /// Compare a predicted .flo against ground truth
    Eval(EvalArgs),
    /// Render a .flo file as a color image
    VizFlow(VizFlowArgs),
    /// Render the first-layer filters of a checkpoint as an image grid
    VizFilters(VizFiltersArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Displacement cap in pixels for every motion
    #[arg(long, default_value_t = 8.0)]
    max_disp: f32,
    /// Background-only constant translations (no rotation/scale, no
    /// foreground patches)
    #[arg(long, default_value_t = false)]
    translate_only: bool,
    /// Texture smoothing passes; higher is smoother
    #[arg(long, default_value_t = 3)]
    smoothness: u32,
    /// Independently moving foreground patches per sample
    #[arg(long, default_value_t = 2)]
    foreground_count: usize,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Dataset manifest (tab-separated frame1/frame2/flow paths)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Line-oriented key=value file supplying any of the flags below;
    /// command-line values take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations_per_epoch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f32>,
    #[arg(long)]
    lr_final: Option<f32>,
    #[arg(long)]
    lr_switch_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Crop size at the coarsest level; doubles per level
    #[arg(long)]
    crop_height: Option<usize>,
    #[arg(long)]
    crop_width: Option<usize>,
    #[arg(long)]
    scale_min: Option<f32>,
    #[arg(long)]
    scale_max: Option<f32>,
    /// Symmetric rotation range in degrees (a value r means [-r, r])
    #[arg(long)]
    rotation_deg: Option<f32>,
    #[arg(long)]
    noise_sigma_max: Option<f32>,
    #[arg(long)]
    jitter_sigma: Option<f32>,
    /// Re-render the second frame of every training sample under a fresh
    /// random translation of at most this many pixels (0 disables); decouples
    /// texture from motion on small datasets
    #[arg(long)]
    motion_resynthesis: Option<f32>,
    /// Disable geometric and photometric augmentation (centered crop and
    /// normalization only)
    #[arg(long)]
    no_augment: Option<bool>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    frame1: PathBuf,
    #[arg(long)]
    frame2: PathBuf,
    /// Output .flo path
    #[arg(long)]
    out: PathBuf,
    /// Optional color rendering of the flow
    #[arg(long)]
    color: Option<PathBuf>,
    /// Pyramid levels to run; levels beyond the stored networks reuse the
    /// finest one. Defaults to the checkpoint's stored level count.
    #[arg(long)]
    levels: Option<usize>,
    /// Reject images whose dimensions are not divisible by 2^(levels-1)
    /// instead of resizing
    #[arg(long, default_value_t = false)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Write machine-readable key=value records here in addition to the
    /// stdout table
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VizFlowArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Saturate color at this magnitude instead of the field maximum
    #[arg(long)]
    max_mag: Option<f32>,
}

#[derive(Args)]
struct VizFiltersArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which stored level network to visualize
    #[arg(long, default_value_t = 0)]
    level: usize,
}

/// Exit-code classification: usage problems exit 1, data/format/IO problems
/// exit 2.
enum CliError {
    Usage(String),
    Data(String),
}

impl From<spyflow::Error> for CliError {
    fn from(e: spyflow::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = check_thread_env() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// SPYFLOW_THREADS caps worker parallelism (0 = auto). The engine currently
/// runs single-threaded, so any valid value behaves as a cap of 1.
fn check_thread_env() -> Result<(), String> {
    match std::env::var("SPYFLOW_THREADS") {
        Err(_) => Ok(()),
        Ok(v) => v
            .parse::<usize>()
            .map(|_| ())
            .map_err(|_| format!("SPYFLOW_THREADS must be a non-negative integer, got {v:?}")),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::VizFlow(a) => run_viz_flow(a),
        Command::VizFilters(a) => run_viz_filters(a),
    }
}

/// key=value record of a run: command name, tool version, fully resolved
/// configuration and all input/output paths.
struct RunManifest {
    lines: Vec<(String, String)>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        let mut m = RunManifest { lines: Vec::new() };
        m.add("command", command);
        m.add("version", VERSION);
        m
    }

    fn add(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k}={v}");
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Manifest path for a file output: `<out>.manifest` alongside it.
fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    out.with_file_name(name)
}

fn run_synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = if a.translate_only {
        SynthSpec {
            smoothness: a.smoothness,
            ..SynthSpec::constant_translation(a.width, a.height, a.max_disp)
        }
    } else {
        SynthSpec {
            width: a.width,
            height: a.height,
            smoothness: a.smoothness,
            max_background_disp: a.max_disp,
            foreground_count: a.foreground_count,
            foreground_size_range: (8, 16),
            max_foreground_disp: a.max_disp,
            motions: MotionFlags::default(),
        }
    };
    spec.validate()?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let sample = generate_sample(&spec, a.seed.wrapping_add(i as u64))?;
        let f1 = format!("sample_{i:04}_frame1.png");
        let f2 = format!("sample_{i:04}_frame2.png");
        let fl = format!("sample_{i:04}_flow.flo");
        write_image(&sample.frame1, a.out.join(&f1))?;
        write_image(&sample.frame2, a.out.join(&f2))?;
        write_flo(&sample.gt_flow, a.out.join(&fl))?;
        entries.push(ManifestEntry {
            frame1: f1.into(),
            frame2: f2.into(),
            flow: fl.into(),
        });
    }
    let manifest = a.out.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;

    let mut rm = RunManifest::new("synth");
    rm.add("count", a.count)
        .add("width", a.width)
        .add("height", a.height)
        .add("seed", a.seed)
        .add("max_disp", a.max_disp)
        .add("translate_only", a.translate_only)
        .add("smoothness", a.smoothness)
        .add("foreground_count", a.foreground_count)
        .add("out", a.out.display())
        .add("dataset_manifest", manifest.display());
    rm.write(&a.out.join("run_manifest.txt"))?;
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

/// Reads a line-oriented key=value config file. Blank lines and lines
/// starting with `#` are ignored.
fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{} line {}: expected key=value, got {line:?}",
                path.display(),
                i + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

const TRAIN_CONFIG_KEYS: &[&str] = &[
    "levels",
    "batch_size",
    "iterations_per_epoch",
    "epochs",
    "lr_initial",
    "lr_final",
    "lr_switch_epoch",
    "seed",
    "crop_height",
    "crop_width",
    "scale_min",
    "scale_max",
    "rotation_deg",
    "noise_sigma_max",
    "jitter_sigma",
    "motion_resynthesis",
    "no_augment",
];

/// Command line beats config file beats built-in default.
fn resolve<T: FromStr + Copy>(
    cli: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    if let Some(v) = cli {
        return Ok(v);
    }
    match file.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse::<T>()
            .map_err(|_| CliError::Usage(format!("config value {key}={raw} is not valid"))),
    }
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let file = match &a.config {
        Some(p) => {
            let map = read_config_file(p)?;
            if let Some(k) = map.keys().find(|k| !TRAIN_CONFIG_KEYS.contains(&k.as_str())) {
                return Err(CliError::Usage(format!("unknown config key {k:?}")));
            }
            map
        }
        None => BTreeMap::new(),
    };

    let defaults = TrainConfig::default();
    let levels = resolve(a.levels, &file, "levels", 3)?;
    let cfg = TrainConfig {
        batch_size: resolve(a.batch_size, &file, "batch_size", defaults.batch_size)?,
        iterations_per_epoch: resolve(
            a.iterations_per_epoch,
            &file,
            "iterations_per_epoch",
            defaults.iterations_per_epoch,
        )?,
        epochs: resolve(a.epochs, &file, "epochs", defaults.epochs)?,
        lr_initial: resolve(a.lr_initial, &file, "lr_initial", defaults.lr_initial)?,
        lr_final: resolve(a.lr_final, &file, "lr_final", defaults.lr_final)?,
        lr_switch_epoch: resolve(
            a.lr_switch_epoch,
            &file,
            "lr_switch_epoch",
            defaults.lr_switch_epoch,
        )?,
        seed: resolve(a.seed, &file, "seed", defaults.seed)?,
    };
    let crop_height = resolve(a.crop_height, &file, "crop_height", 24)?;
    let crop_width = resolve(a.crop_width, &file, "crop_width", 32)?;
    let no_augment = resolve(a.no_augment, &file, "no_augment", false)?;
    let base = if no_augment {
        AugmentConfig::identity(crop_height, crop_width)
    } else {
        AugmentConfig::full(crop_height, crop_width)
    };
    let rotation_deg = resolve(
        a.rotation_deg,
        &file,
        "rotation_deg",
        base.rotation_range_deg.1,
    )?;
    let aug = AugmentConfig {
        scale_range: (
            resolve(a.scale_min, &file, "scale_min", base.scale_range.0)?,
            resolve(a.scale_max, &file, "scale_max", base.scale_range.1)?,
        ),
        rotation_range_deg: (-rotation_deg, rotation_deg),
        noise_sigma_max: resolve(a.noise_sigma_max, &file, "noise_sigma_max", base.noise_sigma_max)?,
        jitter_sigma: resolve(a.jitter_sigma, &file, "jitter_sigma", base.jitter_sigma)?,
        motion_resynthesis_max_disp: resolve(
            a.motion_resynthesis,
            &file,
            "motion_resynthesis",
            base.motion_resynthesis_max_disp,
        )?,
        ..base
    };

    let dataset = load_dataset(&a.data)?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let out_dir = a.out.clone();
    let model = train_pyramid(
        &dataset,
        &cfg,
        &aug,
        levels,
        &mut |event| println!("{event}"),
        &mut |level, trained| {
            let partial = PyramidModel::new(trained.to_vec(), trained.len())?;
            save_checkpoint(&partial, out_dir.join(format!("level_{level}.ckpt")))
        },
    )?;
    let final_path = a.out.join("model.ckpt");
    save_checkpoint(&model, &final_path)?;

    let mut rm = RunManifest::new("train");
    rm.add("data", a.data.display())
        .add("out", a.out.display())
        .add("levels", levels)
        .add("batch_size", cfg.batch_size)
        .add("iterations_per_epoch", cfg.iterations_per_epoch)
        .add("epochs", cfg.epochs)
        .add("lr_initial", cfg.lr_initial)
        .add("lr_final", cfg.lr_final)
        .add("lr_switch_epoch", cfg.lr_switch_epoch)
        .add("seed", cfg.seed)
        .add("crop_height", crop_height)
        .add("crop_width", crop_width)
        .add("no_augment", no_augment)
        .add("scale_min", aug.scale_range.0)
        .add("scale_max", aug.scale_range.1)
        .add("rotation_deg", rotation_deg)
        .add("noise_sigma_max", aug.noise_sigma_max)
        .add("jitter_sigma", aug.jitter_sigma)
        .add("motion_resynthesis", aug.motion_resynthesis_max_disp)
        .add("checkpoint", final_path.display());
    rm.write(&a.out.join("run_manifest.txt"))?;
    println!("checkpoint written to {}", final_path.display());
    Ok(())
}

/// Rounds `n` up to a positive multiple of `factor`.
fn next_multiple(n: usize, factor: usize) -> usize {
    n.div_ceil(factor).max(1) * factor
}

fn run_infer(a: InferArgs) -> Result<(), CliError> {
    let mut model = load_checkpoint(&a.checkpoint)?;
    if let Some(levels) = a.levels {
        if levels < model.levels.len() {
            return Err(CliError::Usage(format!(
                "--levels {} is below the checkpoint's {} stored networks",
                levels,
                model.levels.len()
            )));
        }
        model.inference_levels = levels;
    }
    let frame1 = normalize_image(&read_image(&a.frame1)?, IMAGENET_MEAN, IMAGENET_STD)?;
    let frame2 = normalize_image(&read_image(&a.frame2)?, IMAGENET_MEAN, IMAGENET_STD)?;
    let (_, h, w) = frame1.chw()?;
    let factor = 1usize << (model.inference_levels - 1);

    let flow = if h % factor == 0 && w % factor == 0 {
        infer(&model, &frame1, &frame2)?
    } else if a.strict {
        return Err(CliError::Data(format!(
            "{h}x{w} is not divisible by 2^(levels-1) = {factor} (strict mode)"
        )));
    } else {
        // resize up to the nearest valid size, infer, resize the flow back
        // with the vectors rescaled to the original pixel grid
        let (rh, rw) = (next_multiple(h, factor), next_multiple(w, factor));
        let big = infer(
            &model,
            &resize_image_bilinear(&frame1, rh, rw)?,
            &resize_image_bilinear(&frame2, rh, rw)?,
        )?;
        let back = resize_image_bilinear(&big.to_tensor(), h, w)?;
        let mut flow = FlowField::from_tensor(&back)?;
        let (su, sv) = (w as f32 / rw as f32, h as f32 / rh as f32);
        for x in flow.u.iter_mut() {
            *x *= su;
        }
        for x in flow.v.iter_mut() {
            *x *= sv;
        }
        flow
    };

    write_flo(&flow, &a.out)?;
    if let Some(color_path) = &a.color {
        write_image(&flow_to_color(&flow, None), color_path)?;
    }

    let mut rm = RunManifest::new("infer");
    rm.add("checkpoint", a.checkpoint.display())
        .add("frame1", a.frame1.display())
        .add("frame2", a.frame2.display())
        .add("levels", model.inference_levels)
        .add("strict", a.strict)
        .add("out", a.out.display());
    if let Some(c) = &a.color {
        rm.add("color", c.display());
    }
    rm.write(&manifest_path_for(&a.out))?;
    println!(
        "flow {}x{} written to {}",
        flow.width,
        flow.height,
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let pred = read_flo(&a.pred)?;
    let gt = read_flo(&a.gt)?;
    let report = segmented_report(&pred, &gt)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_records())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut rm = RunManifest::new("eval");
        rm.add("pred", a.pred.display())
            .add("gt", a.gt.display())
            .add("report", path.display());
        rm.write(&manifest_path_for(path))?;
    }
    Ok(())
}

fn run_viz_flow(a: VizFlowArgs) -> Result<(), CliError> {
    let flow = read_flo(&a.flow)?;
    write_image(&flow_to_color(&flow, a.max_mag), &a.out)?;
    let mut rm = RunManifest::new("viz-flow");
    rm.add("flow", a.flow.display()).add("out", a.out.display());
    if let Some(m) = a.max_mag {
        rm.add("max_mag", m);
    }
    rm.write(&manifest_path_for(&a.out))?;
    Ok(())
}

fn run_viz_filters(a: VizFiltersArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&a.checkpoint)?;
    if a.level >= model.levels.len() {
        return Err(CliError::Usage(format!(
            "--level {} out of range: checkpoint stores {} networks",
            a.level,
            model.levels.len()
        )));
    }
    let grid = first_layer_filters(&model.levels[a.level]);
    write_image(&grid, &a.out)?;
    let mut rm = RunManifest::new("viz-filters");
    rm.add("checkpoint", a.checkpoint.display())
        .add("level", a.level)
        .add("out", a.out.display());
    rm.write(&manifest_path_for(&a.out))?;
    Ok(())
}
