use std::path::PathBuf;
use std::process::ExitCode;

use adlite_cli::commands::audit::{self, AuditSelection};
use adlite_cli::commands::eval::{self, EvalOpts};
use adlite_cli::commands::kfold;
use adlite_cli::commands::synth::{self, SynthOpts};
use adlite_cli::commands::train;
use adlite_cli::commands::txpreview::{self, TxPreviewOpts};
use adlite_cli::config::{Regime, RunConfig};
use adlite_cli::{checkpoint, exit_code};
use adlite_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adlite",
    about = "Train, audit, and evaluate the AD-Lite two-branch CNN on the CPU",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ring-image dataset (ADS1 file)
    Synth(SynthArgs),
    /// Train a model and write a self-describing run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation
    Kfold(KfoldArgs),
    /// Closed-form parameter and shape audit of a configuration
    Audit(AuditArgs),
    /// Apply the negative-image transformation to images
    TxPreview(TxPreviewArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Per-class image counts, comma-separated (e.g. 700,50,2500,1800)
    #[arg(long)]
    counts: String,
    /// Square image extent
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Gaussian pixel noise in [0, 1] intensity units
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Class names, comma-separated (defaults to class0, class1, ...)
    #[arg(long)]
    names: Option<String>,
    /// Output ADS1 file
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by `train` and `kfold`; every one overrides the config
/// file and the regime preset.
#[derive(Args)]
struct FitArgs {
    /// Dataset path; repeat the flag to merge several under a class map
    #[arg(long = "data")]
    data: Vec<String>,
    /// Dataset names for class-map lookups, comma-separated
    #[arg(long)]
    names: Option<String>,
    /// Dataset format: ads1 or folder
    #[arg(long)]
    format: Option<String>,
    /// Class-map JSON path, or the builtin "ad-adni"
    #[arg(long)]
    classmap: Option<String>,
    /// JSON config file (flat dotted keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training regime preset: ad, adni, or oasis
    #[arg(long)]
    regime: Option<String>,
    /// Output directory (default: runs/<timestamp>-seed<seed>)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch after which the learning rate starts decaying
    #[arg(long)]
    alr_start: Option<u32>,
    /// Disable learning-rate decay entirely
    #[arg(long)]
    no_alr: bool,
    /// Per-epoch decay rate once decay has started
    #[arg(long)]
    alr_rate: Option<f64>,
    /// Decay style: per-epoch (compounding) or one-shot (a single cut)
    #[arg(long)]
    alr_style: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss: cce or wcce
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Input channels: 1 or 3
    #[arg(long)]
    channels: Option<usize>,
    /// Fix the class count instead of deriving it from the dataset
    #[arg(long)]
    classes: Option<usize>,
    /// Drop the parallel concatenation branch
    #[arg(long)]
    no_pcb: bool,
    /// Backbone block whose output feeds the branch (1-based)
    #[arg(long)]
    tap: Option<usize>,
    /// Backbone filter counts, comma-separated
    #[arg(long)]
    base_filters: Option<String>,
    /// Branch filter counts, comma-separated
    #[arg(long)]
    pcb_filters: Option<String>,
    #[arg(long)]
    dwsc_count: Option<usize>,
    #[arg(long)]
    tx_m: Option<f64>,
    #[arg(long)]
    tx_c: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Element type: f32 or f64
    #[arg(long)]
    precision: Option<String>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct KfoldArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Number of folds
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset path(s); defaults to the checkpoint's own
    #[arg(long = "data")]
    data: Vec<String>,
    #[arg(long)]
    names: Option<String>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    classmap: Option<String>,
    /// splits.json from a run directory
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    /// Which partition of the manifest to evaluate: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// compact, full, or both
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    no_pcb: bool,
}

#[derive(Args)]
struct TxPreviewArgs {
    /// Transformation slope
    #[arg(long, default_value_t = 0.8)]
    m: f64,
    /// Offset the pixel value is subtracted from
    #[arg(long, default_value_t = 255.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
    /// Input images
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse \"{p}\" in {what}")))
        })
        .collect()
}

/// defaults -> config file -> regime preset -> command-line flags.
fn build_config(args: &FitArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(regime) = &args.regime {
        Regime::parse(regime)?.apply(&mut cfg);
    }
    if !args.data.is_empty() {
        cfg.data_paths = args.data.clone();
    }
    if let Some(names) = &args.names {
        cfg.data_names = parse_list(names, "--names")?;
    }
    if let Some(format) = &args.format {
        cfg.data_format = format.clone();
    }
    if let Some(map) = &args.classmap {
        cfg.classmap = Some(map.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if args.no_alr {
        cfg.alr_start_epoch = None;
    } else if let Some(start) = args.alr_start {
        cfg.alr_start_epoch = Some(start);
    }
    if let Some(rate) = args.alr_rate {
        cfg.alr_decay_rate = rate;
    }
    if let Some(style) = &args.alr_style {
        cfg.alr_style = style.clone();
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(loss) = &args.loss {
        cfg.loss = loss.clone();
    }
    if let Some(size) = args.input_size {
        cfg.input_size = size;
    }
    if let Some(channels) = args.channels {
        cfg.input_channels = channels;
    }
    if let Some(classes) = args.classes {
        cfg.num_classes = Some(classes);
    }
    if args.no_pcb {
        cfg.pcb_enabled = false;
    }
    if let Some(tap) = args.tap {
        cfg.pcb_tap_block = tap;
    }
    if let Some(filters) = &args.base_filters {
        cfg.base_filters = parse_list(filters, "--base-filters")?;
    }
    if let Some(filters) = &args.pcb_filters {
        cfg.pcb_filters = parse_list(filters, "--pcb-filters")?;
    }
    if let Some(count) = args.dwsc_count {
        cfg.dwsc_count = count;
    }
    if let Some(m) = args.tx_m {
        cfg.tx_m = m;
    }
    if let Some(c) = args.tx_c {
        cfg.tx_c = c;
    }
    if let Some(f) = args.test_fraction {
        cfg.test_fraction = f;
    }
    if let Some(f) = args.val_fraction {
        cfg.val_fraction = f;
    }
    if let Some(precision) = &args.precision {
        cfg.precision = precision.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = Some(threads);
    }
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Ignore "already initialized": the pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn default_out_dir(seed: u64) -> PathBuf {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{stamp}-seed{seed}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let opts = SynthOpts {
                counts: parse_list(&args.counts, "--counts")?,
                size: args.size,
                noise: args.noise,
                seed: args.seed,
                names: match &args.names {
                    Some(n) => Some(parse_list(n, "--names")?),
                    None => None,
                },
            };
            synth::run(&opts, &args.out)
        }
        Command::Train(args) => {
            let cfg = build_config(&args.fit)?;
            configure_threads(cfg.threads);
            let out = args
                .fit
                .out
                .clone()
                .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| default_out_dir(cfg.seed));
            match cfg.precision.as_str() {
                "f64" => train::run::<f64>(&cfg, &out).map(|_| ()),
                _ => train::run::<f32>(&cfg, &out).map(|_| ()),
            }
        }
        Command::Kfold(args) => {
            let mut cfg = build_config(&args.fit)?;
            if let Some(k) = args.k {
                cfg.kfold_k = k;
            }
            configure_threads(cfg.threads);
            let out = args
                .fit
                .out
                .clone()
                .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| default_out_dir(cfg.seed));
            match cfg.precision.as_str() {
                "f64" => kfold::run::<f64>(&cfg, &out).map(|_| ()),
                _ => kfold::run::<f32>(&cfg, &out).map(|_| ()),
            }
        }
        Command::Eval(args) => {
            configure_threads(args.threads);
            let opts = EvalOpts {
                checkpoint: args.checkpoint.clone(),
                data_paths: args.data.clone(),
                data_names: match &args.names {
                    Some(n) => parse_list(n, "--names")?,
                    None => Vec::new(),
                },
                format: args.format.clone(),
                classmap: args.classmap.clone(),
                manifest: args.split_manifest.clone(),
                split: args.split.clone(),
            };
            match checkpoint::peek_precision(&opts.checkpoint)?.as_str() {
                "f64" => eval::run::<f64>(&opts, &args.out).map(|_| ()),
                _ => eval::run::<f32>(&opts, &args.out).map(|_| ()),
            }
        }
        Command::Audit(args) => {
            let mut cfg = match &args.config {
                Some(path) => RunConfig::from_file(path)?,
                None => RunConfig::default(),
            };
            if let Some(size) = args.input_size {
                cfg.input_size = size;
            }
            if let Some(channels) = args.channels {
                cfg.input_channels = channels;
            }
            if let Some(classes) = args.classes {
                cfg.num_classes = Some(classes);
            }
            if args.no_pcb {
                cfg.pcb_enabled = false;
            }
            // Audits need no dataset; default to the published four classes.
            let model_cfg = cfg.model_config(cfg.num_classes.or(Some(4)))?;
            audit::run(&model_cfg, AuditSelection::parse(&args.mode)?)
        }
        Command::TxPreview(args) => {
            let opts = TxPreviewOpts {
                inputs: args.inputs.clone(),
                m: args.m,
                c: args.c,
            };
            txpreview::run(&opts, &args.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
