//! Command-line front end for the pore detection pipeline:
//! `synth`, `train`, `detect`, `evaluate` and `gridsearch`.
//!
//! All randomness derives from `--seed`; two runs with identical flags and
//! seed produce byte-identical outputs.
//!
//! Exit codes: 0 success, 2 usage or missing file, 3 malformed data,
//! 4 incompatible checkpoint, 5 training divergence, 1 any other error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use porefcn::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use porefcn::data::{
    load_dir_pairs, split_pairs, AxisOrder, DataError, DatasetSplit, ImagePair, SplitMode,
};
use porefcn::detect::{
    detect_from_map, infer_probability_map, read_detections, traditional_postprocess,
    write_detections, DetectError, DetectionSet,
};
use porefcn::evaluate::{evaluate_image, grid_search, Counts, EvalError};
use porefcn::model::PoreModel;
use porefcn::synth::{generate_dataset, SynthConfig, SynthError};
use porefcn::train::{train, TrainConfig, TrainError};

#[derive(Parser)]
#[command(
    name = "porefcn",
    about = "Fingerprint pore detection with a small fully convolutional network",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fingerprint dataset with exact ground truth
    Synth(SynthArgs),
    /// Train the detection FCN on an annotated dataset directory
    Train(TrainArgs),
    /// Detect pores in images with a trained checkpoint
    Detect(DetectArgs),
    /// Score detections (from files or a checkpoint) under the protocol
    Evaluate(EvaluateArgs),
    /// Grid-search post-processing thresholds on the validation split
    Gridsearch(GridsearchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of image/annotation pairs to generate
    #[arg(long, default_value_t = 30)]
    num_images: usize,
    /// Image height in pixels
    #[arg(long, default_value_t = 96)]
    height: usize,
    /// Image width in pixels
    #[arg(long, default_value_t = 96)]
    width: usize,
    /// Ridge spacing in pixels
    #[arg(long, default_value_t = 12.0)]
    ridge_period: f64,
    /// Pores per image
    #[arg(long, default_value_t = 24)]
    pore_count: usize,
    /// Minimum pore radius in pixels (range [1, 3])
    #[arg(long, default_value_t = 1.0)]
    pore_radius_min: f64,
    /// Maximum pore radius in pixels (range [1, 3])
    #[arg(long, default_value_t = 3.0)]
    pore_radius_max: f64,
    /// Additive Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    /// Base RNG seed; image i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory of paired .pgm images and .txt annotations
    #[arg(long)]
    data: PathBuf,
    /// Split rule: benchmark (exactly 30: 15/5/10) or proportional
    /// (50/17/33%); `auto` picks benchmark iff exactly 30 pairs exist
    #[arg(long, value_enum, default_value_t = SplitArg::Auto)]
    split: SplitArg,
    /// Treat annotation files as `x y` (column-first) instead of `row col`
    #[arg(long, default_value_t = false)]
    swap_axes: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Auto,
    Benchmark,
    Proportional,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Training log (CSV: step,effective_lr,loss,val_fscore)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Optional key=value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Multiplicative decay applied every --decay-steps steps
    #[arg(long)]
    decay_rate: Option<f64>,
    #[arg(long)]
    decay_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Fraction of positive patches per batch
    #[arg(long)]
    pos_fraction: Option<f64>,
    /// Validation-monitor period in steps
    #[arg(long)]
    eval_every: Option<u64>,
    /// Evaluations without improvement before stopping
    #[arg(long)]
    patience: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PostMode {
    /// Threshold to 7x7 boxes, then NMS
    Proposed,
    /// Binarize at 0.5, one detection per 8-connected component centroid
    Traditional,
}

#[derive(Args)]
struct DetectArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image(s), 8-bit PGM
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    /// Output directory for per-image detection files (<stem>.txt)
    #[arg(long)]
    out_dir: PathBuf,
    /// Probability threshold
    #[arg(long, default_value_t = 0.6)]
    pt: f64,
    /// NMS intersection threshold
    #[arg(long, default_value_t = 0.0)]
    it: f64,
    /// Post-processing mode
    #[arg(long, value_enum, default_value_t = PostMode::Proposed)]
    post: PostMode,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Which split to evaluate against
    #[arg(long, value_enum, default_value_t = SubsetArg::Test)]
    subset: SubsetArg,
    /// Directory of precomputed detection files (<stem>.txt); if absent,
    /// detections are computed from --checkpoint
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Trained checkpoint (used when --detections is not given)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pt: f64,
    #[arg(long, default_value_t = 0.0)]
    it: f64,
    #[arg(long, value_enum, default_value_t = PostMode::Proposed)]
    post: PostMode,
    /// Optional report output path (default: stdout only)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args)]
struct GridsearchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional path for the 72-row grid table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 2,
            CliError::Data(DataError::Io(_)) | CliError::Data(DataError::Pgm(_)) => 2,
            CliError::Data(_) => 3,
            CliError::Synth(_) => 3,
            CliError::Detect(DetectError::Io(_)) => 2,
            CliError::Detect(DetectError::Parse { .. }) => 3,
            CliError::Detect(_) => 1,
            CliError::Checkpoint(_) => 4,
            CliError::Train(TrainError::Diverged { .. }) => 5,
            CliError::Train(_) => 3,
            CliError::Eval(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gridsearch(args) => cmd_gridsearch(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_split(args: &DataArgs) -> Result<DatasetSplit, CliError> {
    let axis = if args.swap_axes {
        AxisOrder::XY
    } else {
        AxisOrder::RowCol
    };
    let pairs = load_dir_pairs(&args.data, axis)?;
    let mode = match args.split {
        SplitArg::Benchmark => SplitMode::Benchmark,
        SplitArg::Proportional => SplitMode::Proportional,
        SplitArg::Auto => {
            if pairs.len() == 30 {
                SplitMode::Benchmark
            } else {
                SplitMode::Proportional
            }
        }
    };
    Ok(split_pairs(pairs, mode)?)
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        height: args.height,
        width: args.width,
        ridge_period: args.ridge_period,
        pore_count: args.pore_count,
        pore_radius_min: args.pore_radius_min,
        pore_radius_max: args.pore_radius_max,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    println!("synth: {} images into {}", args.num_images, args.out.display());
    print_config(&[
        ("height", config.height.to_string()),
        ("width", config.width.to_string()),
        ("ridge_period", config.ridge_period.to_string()),
        ("pore_count", config.pore_count.to_string()),
        ("pore_radius_min", config.pore_radius_min.to_string()),
        ("pore_radius_max", config.pore_radius_max.to_string()),
        ("noise_sigma", config.noise_sigma.to_string()),
        ("seed", config.seed.to_string()),
    ]);
    generate_dataset(&args.out, args.num_images, &config)?;
    Ok(())
}

fn parse_config_file(path: &Path, config: &mut TrainConfig) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| {
                    CliError::Usage(format!("{}:{}: bad value for {key}", path.display(), i + 1))
                })?
            };
        }
        match key {
            "lr" | "base_lr" => config.base_lr = parse!(),
            "decay_rate" => config.decay_rate = parse!(),
            "decay_steps" => config.decay_steps = parse!(),
            "batch_size" => config.batch_size = parse!(),
            "dropout_rate" => config.dropout_rate = parse!(),
            "weight_decay" => config.weight_decay = parse!(),
            "pos_fraction" => config.pos_fraction = parse!(),
            "bn_epsilon" => config.bn_epsilon = parse!(),
            "bn_momentum" => config.bn_momentum = parse!(),
            "eval_every" => config.eval_every = parse!(),
            "patience" => config.patience = parse!(),
            "max_steps" => config.max_steps = parse!(),
            "seed" => config.seed = parse!(),
            _ => {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key '{key}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    // precedence: defaults < config file < flags
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        parse_config_file(path, &mut config)?;
    }
    macro_rules! flag {
        ($field:ident, $flag:ident) => {
            if let Some(v) = args.$flag {
                config.$field = v;
            }
        };
    }
    flag!(base_lr, lr);
    flag!(decay_rate, decay_rate);
    flag!(decay_steps, decay_steps);
    flag!(batch_size, batch_size);
    flag!(dropout_rate, dropout_rate);
    flag!(weight_decay, weight_decay);
    flag!(pos_fraction, pos_fraction);
    flag!(eval_every, eval_every);
    flag!(patience, patience);
    flag!(max_steps, max_steps);
    flag!(seed, seed);

    print_config(&[
        ("lr", config.base_lr.to_string()),
        ("decay_rate", config.decay_rate.to_string()),
        ("decay_steps", config.decay_steps.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("dropout_rate", config.dropout_rate.to_string()),
        ("weight_decay", config.weight_decay.to_string()),
        ("pos_fraction", config.pos_fraction.to_string()),
        ("bn_epsilon", config.bn_epsilon.to_string()),
        ("bn_momentum", config.bn_momentum.to_string()),
        ("eval_every", config.eval_every.to_string()),
        ("patience", config.patience.to_string()),
        ("max_steps", config.max_steps.to_string()),
        ("seed", config.seed.to_string()),
    ]);

    let split = load_split(&args.data)?;
    println!(
        "data: {} train / {} validation / {} test images",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let result = train(&split.train, &split.validation, &config)?;
    println!(
        "best validation patch F-score {:.4} at step {} (stopped at step {})",
        result.best_val_fscore, result.best_step, result.final_step
    );
    save_checkpoint(&result.model, result.best_step, &args.out)?;
    println!("checkpoint written to {}", args.out.display());
    if let Some(log_path) = &args.log {
        let mut text = String::from("step,effective_lr,loss,val_fscore\n");
        for e in &result.log {
            let val = e
                .val_fscore
                .map(|f| format!("{f:.6}"))
                .unwrap_or_default();
            let _ = writeln!(text, "{},{:.8},{:.8},{}", e.step, e.effective_lr, e.loss, val);
        }
        std::fs::write(log_path, text)?;
        println!("training log written to {}", log_path.display());
    }
    Ok(())
}

fn detect_one(
    model: &PoreModel,
    image: &porefcn::data::GrayImage,
    pt: f64,
    it: f64,
    post: PostMode,
) -> Result<DetectionSet, CliError> {
    let map = infer_probability_map(model, image)?;
    Ok(match post {
        PostMode::Proposed => detect_from_map(&map, pt, it)?,
        PostMode::Traditional => traditional_postprocess(&map),
    })
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for path in &args.image {
        let image = porefcn::data::load_image(path)?;
        let detections = detect_one(&model, &image, args.pt, args.it, args.post)?;
        let stem = path
            .file_stem()
            .ok_or_else(|| CliError::Usage(format!("bad image path {}", path.display())))?;
        let out = args.out_dir.join(Path::new(stem).with_extension("txt"));
        write_atomic(&out, |tmp| write_detections(tmp, &detections).map_err(CliError::from))?;
        println!(
            "{}: {} detections -> {}",
            path.display(),
            detections.len(),
            out.display()
        );
    }
    Ok(())
}

fn subset<'a>(split: &'a DatasetSplit, which: SubsetArg) -> Vec<&'a ImagePair> {
    match which {
        SubsetArg::Train => split.train.iter().collect(),
        SubsetArg::Validation => split.validation.iter().collect(),
        SubsetArg::Test => split.test.iter().collect(),
        SubsetArg::All => split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .collect(),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let split = load_split(&args.data)?;
    let pairs = subset(&split, args.subset);

    let model = match (&args.detections, &args.checkpoint) {
        (None, Some(ckpt)) => Some(load_checkpoint(ckpt)?.0),
        (Some(_), _) => None,
        (None, None) => {
            return Err(CliError::Usage(
                "evaluate needs --detections or --checkpoint".into(),
            ))
        }
    };

    let mut report = String::new();
    let mut pooled = Counts::default();
    for pair in &pairs {
        let detections = match (&args.detections, &model) {
            (Some(dir), _) => read_detections(&dir.join(format!("{}.txt", pair.name)))?,
            (None, Some(model)) => detect_one(model, &pair.image, args.pt, args.it, args.post)?,
            (None, None) => unreachable!(),
        };
        let counts = evaluate_image(
            &detections,
            &pair.annotations,
            (pair.image.height, pair.image.width),
        );
        pooled.add(&counts);
        let m = counts.metrics()?;
        let _ = writeln!(
            report,
            "image.{}.tdr = {:.4}\nimage.{}.fdr = {:.4}\nimage.{}.fscore = {:.4}",
            pair.name, m.tdr, pair.name, m.fdr, pair.name, m.f_score
        );
    }
    let m = pooled.metrics()?;
    let _ = writeln!(report, "pooled.true_detections = {}", pooled.true_detections);
    let _ = writeln!(report, "pooled.false_detections = {}", pooled.false_detections);
    let _ = writeln!(report, "pooled.ground_truth = {}", pooled.ground_truth);
    let _ = writeln!(report, "pooled.tdr = {:.4}", m.tdr);
    let _ = writeln!(report, "pooled.fdr = {:.4}", m.fdr);
    let _ = writeln!(report, "pooled.fscore = {:.4}", m.f_score);
    print!("{report}");
    if let Some(out) = &args.out {
        write_atomic(out, |tmp| {
            std::fs::write(tmp, &report).map_err(CliError::from)
        })?;
    }
    Ok(())
}

fn cmd_gridsearch(args: GridsearchArgs) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let split = load_split(&args.data)?;
    let result = grid_search(&model, &split.validation)?;
    let mut table = String::from("p_t i_t tdr fdr fscore\n");
    for cell in &result.grid {
        let _ = writeln!(
            table,
            "{:.1} {:.1} {:.4} {:.4} {:.4}",
            cell.p_t, cell.i_t, cell.metrics.tdr, cell.metrics.fdr, cell.metrics.f_score
        );
    }
    print!("{table}");
    println!(
        "chosen: p_t = {:.1}, i_t = {:.1} (validation F-score {:.4})",
        result.best_p_t, result.best_i_t, result.best_metrics.f_score
    );
    if let Some(out) = &args.out {
        write_atomic(out, |tmp| {
            std::fs::write(tmp, &table).map_err(CliError::from)
        })?;
    }
    Ok(())
}

fn print_config(entries: &[(&str, String)]) {
    for (key, value) in entries {
        println!("config.{key} = {value}");
    }
}

/// Write through a temp file and rename, so partial outputs never appear.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
