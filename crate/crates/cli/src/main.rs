//! Benchmark CLI: runs the sparse pipeline against the dense baseline and
//! emits JSON reports (`run`) or CSV sweeps (`sweep`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric degeneracy,
//! 4 I/O or format error. `RF_THREADS` caps kernel parallelism.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blockattn::pipeline::{InputSource, PipelineConfig, SweepOverride};
use blockattn::{run_pipeline, run_sweep, Error, ErrorKind, Precision, SparsityConfig};

#[derive(Parser)]
#[command(
    name = "blockattn",
    version,
    about = "Block-sparse attention benchmark: predicted block masks, windowed token permutation, first-frame sink, dense baseline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sparse pipeline and the dense baseline once; emit a JSON report.
    Run(RunArgs),
    /// Run one pipeline per sweep point; emit one CSV row each.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl From<Toggle> for bool {
    fn from(t: Toggle) -> bool {
        matches!(t, Toggle::On)
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Load Q/K/V from `<PREFIX>.q.rft`, `<PREFIX>.k.rft`, `<PREFIX>.v.rft`
    /// instead of generating them.
    #[arg(long, value_name = "PREFIX")]
    qkv: Option<PathBuf>,

    /// Latent frame count (1 = image).
    #[arg(long, default_value_t = 4)]
    frames: usize,

    /// Latent height in tokens.
    #[arg(long, default_value_t = 8)]
    height: usize,

    /// Latent width in tokens.
    #[arg(long, default_value_t = 8)]
    width: usize,

    /// Head dimension for synthetic inputs (file inputs carry their own).
    #[arg(long, default_value_t = 64)]
    head_dim: usize,

    /// Independent heads to run (synthetic sources only).
    #[arg(long, default_value_t = 1)]
    heads: usize,

    /// Element type; defaults to f32, or the stored precision with --qkv.
    #[arg(long)]
    precision: Option<Precision>,

    /// Spatial correlation of synthetic tokens, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    smoothness: f64,

    /// Query block size in tokens.
    #[arg(long, default_value_t = 64)]
    block_q: usize,

    /// Key/value block size in tokens.
    #[arg(long, default_value_t = 64)]
    block_k: usize,

    /// Window extent along frames (default 4, clipped to the layout).
    #[arg(long)]
    window_f: Option<usize>,

    /// Window extent along height (default 8, clipped to the layout).
    #[arg(long)]
    window_h: Option<usize>,

    /// Window extent along width (default 8, clipped to the layout).
    #[arg(long)]
    window_w: Option<usize>,

    /// Target sparsity in [0, 1): fraction of key blocks skipped per query
    /// block. Defaults to 0.8 when neither this nor --top-n is given.
    #[arg(long, conflicts_with = "top_n")]
    sparsity: Option<f64>,

    /// Keep exactly N key blocks per query block.
    #[arg(long)]
    top_n: Option<usize>,

    /// Window permutation (default on).
    #[arg(long)]
    permute: Option<Toggle>,

    /// First-frame sink (default on for video, off for images).
    #[arg(long)]
    sink: Option<Toggle>,

    /// Relocate frame-0 tokens to the sequence end (default on for video).
    #[arg(long)]
    relocate: Option<Toggle>,

    /// Seed for synthetic inputs and everything derived from them.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// RFM1 block-mask override; skips mask prediction.
    #[arg(long, value_name = "PATH")]
    mask: Option<PathBuf>,

    /// Write head 0's final (post-sink) mask here as RFM1.
    #[arg(long, value_name = "PATH")]
    mask_out: Option<PathBuf>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,

    /// Comma-separated sparsity values, one sweep axis entry each.
    #[arg(long, value_delimiter = ',', value_name = "RHO,...")]
    sweep_rho: Vec<f64>,

    /// Comma-separated on/off values for the permutation axis.
    #[arg(long, value_delimiter = ',', value_name = "on|off,...")]
    sweep_permute: Vec<Toggle>,

    /// Comma-separated on/off values for the sink axis.
    #[arg(long, value_delimiter = ',', value_name = "on|off,...")]
    sweep_sink: Vec<Toggle>,

    /// Comma-separated on/off values for the relocation axis.
    #[arg(long, value_delimiter = ',', value_name = "on|off,...")]
    sweep_relocate: Vec<Toggle>,

    /// Comma-separated seeds for the seed axis.
    #[arg(long, value_delimiter = ',', value_name = "SEED,...")]
    sweep_seed: Vec<u64>,

    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

fn to_config(args: &RunArgs) -> PipelineConfig {
    PipelineConfig {
        source: match &args.qkv {
            Some(prefix) => InputSource::Files {
                prefix: prefix.clone(),
            },
            None => InputSource::Synthetic,
        },
        frames: args.frames,
        height: args.height,
        width: args.width,
        head_dim: args.head_dim,
        heads: args.heads,
        precision: args.precision,
        smoothness: args.smoothness,
        block_q: args.block_q,
        block_k: args.block_k,
        window_f: args.window_f,
        window_h: args.window_h,
        window_w: args.window_w,
        sparsity: match (args.sparsity, args.top_n) {
            (Some(rho), _) => SparsityConfig::TargetSparsity(rho),
            (None, Some(n)) => SparsityConfig::TopN(n),
            (None, None) => SparsityConfig::TargetSparsity(0.8),
        },
        permute: args.permute.map(bool::from),
        sink: args.sink.map(bool::from),
        relocate: args.relocate.map(bool::from),
        seed: args.seed,
        mask_path: args.mask.clone(),
        mask_out: args.mask_out.clone(),
    }
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match path {
        Some(path) => std::fs::write(path, content).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let config = to_config(&args);
    let report = run_pipeline(&config).map_err(|error| {
        eprintln!("config: {config:?}");
        error
    })?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    write_or_print(args.report.as_ref(), &report.to_json_pretty())
}

fn axis<T: Copy>(
    rows: Vec<SweepOverride>,
    values: &[T],
    set: impl Fn(&mut SweepOverride, T),
) -> Vec<SweepOverride> {
    if values.is_empty() {
        return rows;
    }
    let mut out = Vec::with_capacity(rows.len() * values.len());
    for row in &rows {
        for &v in values {
            let mut next = row.clone();
            set(&mut next, v);
            out.push(next);
        }
    }
    out
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let base = to_config(&args.base);
    let no_axis = args.sweep_rho.is_empty()
        && args.sweep_permute.is_empty()
        && args.sweep_sink.is_empty()
        && args.sweep_relocate.is_empty()
        && args.sweep_seed.is_empty();
    if no_axis {
        return Err(Error::InvalidArgument {
            op: "sweep",
            message: "no sweep axis given; pass at least one --sweep-* flag".into(),
        });
    }
    let mut overrides = vec![SweepOverride::default()];
    overrides = axis(overrides, &args.sweep_seed, |o, v| o.seed = Some(v));
    overrides = axis(overrides, &args.sweep_rho, |o, v| {
        o.target_sparsity = Some(v)
    });
    overrides = axis(overrides, &args.sweep_permute, |o, v| {
        o.permute = Some(v.into())
    });
    overrides = axis(overrides, &args.sweep_sink, |o, v| o.sink = Some(v.into()));
    overrides = axis(overrides, &args.sweep_relocate, |o, v| {
        o.relocate = Some(v.into())
    });
    let csv_text = run_sweep(&base, &overrides).map_err(|error| {
        eprintln!("config: {base:?}");
        error
    })?;
    write_or_print(args.csv.as_ref(), &csv_text)
}

fn init_threads() -> Result<(), String> {
    match std::env::var("RF_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| format!("RF_THREADS: {e}"))
            }
            _ => Err(format!("RF_THREADS must be a positive integer, got `{raw}`")),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = init_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(match error.kind() {
                ErrorKind::Config => 2u8,
                ErrorKind::Numeric => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
