//! End-to-end orchestration: config resolution, the sparse pipeline, the
//! dense baseline, and parameter sweeps.
//!
//! One run executes, per head: permute (and relocate) the tokens, compute
//! block means, score block pairs, keep the top-n key blocks per query
//! block, apply the first-frame sink, run the sparse tiled kernel, undo the
//! permutation, and compare against dense attention on the original order.
//! Wall-clock timings exclude one untimed warm-up invocation of each kernel.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flash::{flash_attention, BlockingSpec};
use crate::mask::{
    block_means, load_mask, predict_mask, save_mask, score_blocks, SparsityConfig,
};
use crate::matrix::{load_tensor, tensor_header, Matrix};
use crate::metrics::{
    build_report, cosine_similarity, effective_sparsity, max_abs_diff,
    per_token_cosine_histogram, HeadReport, RunReport,
};
use crate::permute::{
    apply_permutation, build_window_permutation, PermutationMap, VideoLayout, WindowSpec,
};
use crate::scalar::{Precision, Scalar};
use crate::sink::{apply_first_frame_sink, build_relocation, SinkSpec};
use crate::synthetic::{generate_synthetic_qkv, SyntheticSpec};

pub const DEFAULT_WINDOW: (usize, usize, usize) = (4, 8, 8);
pub const DEFAULT_BLOCK: usize = 64;

/// Where Q/K/V come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Deterministic generated tokens.
    Synthetic,
    /// RFT1 triplet `<prefix>.q.rft`, `<prefix>.k.rft`, `<prefix>.v.rft`.
    Files { prefix: PathBuf },
}

/// User-facing configuration. `Option` fields resolve to defaults that may
/// depend on the rest of the config (window clipping, video-vs-image feature
/// toggles, file-header precision).
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub source: InputSource,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub precision: Option<Precision>,
    pub smoothness: f64,
    pub block_q: usize,
    pub block_k: usize,
    pub window_f: Option<usize>,
    pub window_h: Option<usize>,
    pub window_w: Option<usize>,
    pub sparsity: SparsityConfig,
    pub permute: Option<bool>,
    pub sink: Option<bool>,
    pub relocate: Option<bool>,
    pub seed: u64,
    /// RFM1 mask override; skips prediction when set.
    pub mask_path: Option<PathBuf>,
    /// Writes head 0's final (post-sink) mask here as RFM1.
    pub mask_out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: InputSource::Synthetic,
            frames: 4,
            height: 8,
            width: 8,
            head_dim: 64,
            heads: 1,
            precision: None,
            smoothness: 0.9,
            block_q: DEFAULT_BLOCK,
            block_k: DEFAULT_BLOCK,
            window_f: None,
            window_h: None,
            window_w: None,
            sparsity: SparsityConfig::TargetSparsity(0.8),
            permute: None,
            sink: None,
            relocate: None,
            seed: 0,
            mask_path: None,
            mask_out: None,
        }
    }
}

/// Fully-resolved configuration echoed into every report, defaults included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub source: String,
    pub seed: u64,
    pub heads: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub head_dim: usize,
    pub precision: Precision,
    pub smoothness: f64,
    pub block_q: usize,
    pub block_k: usize,
    pub window_f: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub target_sparsity: f64,
    pub top_n: usize,
    pub permute: bool,
    pub sink: bool,
    pub relocate: bool,
    pub mask_path: Option<String>,
}

struct Resolution {
    resolved: ResolvedConfig,
    layout: VideoLayout,
    window: WindowSpec,
    warnings: Vec<String>,
}

fn tensor_path(prefix: &Path, tag: &str) -> PathBuf {
    PathBuf::from(format!("{}.{tag}.rft", prefix.display()))
}

fn resolve_window_dim(
    requested: Option<usize>,
    default: usize,
    extent: usize,
    name: &str,
) -> Result<usize> {
    match requested {
        Some(0) => Err(Error::invalid(
            "pipeline config",
            format!("{name} must be >= 1, got 0"),
        )),
        Some(v) if v > extent => Err(Error::invalid(
            "pipeline config",
            format!("{name} ({v}) exceeds the layout extent ({extent})"),
        )),
        Some(v) => Ok(v),
        None => Ok(default.min(extent)),
    }
}

/// Feature toggles default to on for video and off for single-frame
/// layouts; an explicit request on a single-frame layout is downgraded with
/// a recorded warning rather than failing or proceeding silently.
fn resolve_toggle(
    requested: Option<bool>,
    video: bool,
    what: &str,
    warnings: &mut Vec<String>,
) -> bool {
    match requested {
        None => video,
        Some(false) => false,
        Some(true) if video => true,
        Some(true) => {
            warnings.push(format!(
                "{what} requested but the layout has a single frame; disabled"
            ));
            false
        }
    }
}

fn resolve(config: &PipelineConfig) -> Result<Resolution> {
    let layout = VideoLayout::new(config.frames, config.height, config.width)?;
    let mut warnings = Vec::new();

    if config.heads == 0 {
        return Err(Error::invalid("pipeline config", "heads must be >= 1"));
    }
    if !(0.0..=1.0).contains(&config.smoothness) {
        return Err(Error::invalid(
            "pipeline config",
            format!("smoothness must be in [0, 1], got {}", config.smoothness),
        ));
    }
    if config.block_q == 0 || config.block_k == 0 {
        return Err(Error::invalid(
            "pipeline config",
            "block_q and block_k must be >= 1",
        ));
    }

    let (head_dim, precision, source_label) = match &config.source {
        InputSource::Synthetic => {
            if config.head_dim == 0 {
                return Err(Error::invalid("pipeline config", "head_dim must be >= 1"));
            }
            (
                config.head_dim,
                config.precision.unwrap_or(Precision::F32),
                "synthetic".to_string(),
            )
        }
        InputSource::Files { prefix } => {
            if config.heads > 1 {
                return Err(Error::invalid(
                    "pipeline config",
                    "file sources support a single head",
                ));
            }
            let q_path = tensor_path(prefix, "q");
            let (stored, rows, cols) = tensor_header(&q_path)?;
            if let Some(requested) = config.precision {
                if requested != stored {
                    return Err(Error::invalid(
                        "pipeline config",
                        format!(
                            "requested precision {requested} but {} stores {stored}",
                            q_path.display()
                        ),
                    ));
                }
            }
            if rows as usize != layout.tokens() {
                return Err(Error::invalid(
                    "pipeline config",
                    format!(
                        "layout has {} tokens but {} stores {rows} rows",
                        layout.tokens(),
                        q_path.display()
                    ),
                ));
            }
            (cols as usize, stored, prefix.display().to_string())
        }
    };

    let window_f = resolve_window_dim(config.window_f, DEFAULT_WINDOW.0, layout.frames(), "window_f")?;
    let window_h = resolve_window_dim(config.window_h, DEFAULT_WINDOW.1, layout.height(), "window_h")?;
    let window_w = resolve_window_dim(config.window_w, DEFAULT_WINDOW.2, layout.width(), "window_w")?;
    let window = WindowSpec::new(window_f, window_h, window_w)?;

    let t_k = layout.tokens().div_ceil(config.block_k);
    let top_n = config.sparsity.top_n(t_k)?;
    let target_sparsity = match config.sparsity {
        SparsityConfig::TargetSparsity(rho) => rho,
        SparsityConfig::TopN(_) => 1.0 - top_n as f64 / t_k as f64,
    };

    let video = layout.frames() >= 2;
    let permute = config.permute.unwrap_or(true);
    let sink = resolve_toggle(config.sink, video, "first-frame sink", &mut warnings);
    let relocate = resolve_toggle(
        config.relocate,
        video,
        "first-frame relocation",
        &mut warnings,
    );

    Ok(Resolution {
        resolved: ResolvedConfig {
            source: source_label,
            seed: config.seed,
            heads: config.heads,
            frames: layout.frames(),
            height: layout.height(),
            width: layout.width(),
            head_dim,
            precision,
            smoothness: config.smoothness,
            block_q: config.block_q,
            block_k: config.block_k,
            window_f,
            window_h,
            window_w,
            target_sparsity,
            top_n,
            permute,
            sink,
            relocate,
            mask_path: config
                .mask_path
                .as_ref()
                .map(|p| p.display().to_string()),
        },
        layout,
        window,
        warnings,
    })
}

/// Sequence order the sparse pipeline operates in. With both features on,
/// frames 1.. are window-permuted first and frame-0 tokens are appended at
/// the end unwindowed.
pub fn build_token_order(
    layout: &VideoLayout,
    window: &WindowSpec,
    permute: bool,
    relocate: bool,
) -> Result<PermutationMap> {
    match (permute, relocate) {
        (false, false) => Ok(PermutationMap::identity(layout.tokens())),
        (true, false) => build_window_permutation(layout, &window.clipped_to(layout)),
        (false, true) => Ok(build_relocation(layout).map),
        (true, true) => {
            let rest = VideoLayout::new(layout.frames() - 1, layout.height(), layout.width())?;
            let windowed = build_window_permutation(&rest, &window.clipped_to(&rest))?;
            let frame_tokens = layout.height() * layout.width();
            let mut forward: Vec<usize> = windowed
                .forward()
                .iter()
                .map(|&old| old + frame_tokens)
                .collect();
            forward.extend(0..frame_tokens);
            PermutationMap::from_forward(forward)
        }
    }
}

fn head_seed(seed: u64, head: usize) -> u64 {
    seed.wrapping_add((head as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn load_inputs<T: Scalar>(
    config: &PipelineConfig,
    resolved: &ResolvedConfig,
    layout: &VideoLayout,
    head: usize,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    match &config.source {
        InputSource::Synthetic => {
            let spec = SyntheticSpec {
                seed: head_seed(resolved.seed, head),
                layout: *layout,
                head_dim: resolved.head_dim,
                smoothness: resolved.smoothness,
            };
            generate_synthetic_qkv(&spec)
        }
        InputSource::Files { prefix } => {
            let q = load_tensor::<T>(&tensor_path(prefix, "q"))?;
            let k = load_tensor::<T>(&tensor_path(prefix, "k"))?;
            let v = load_tensor::<T>(&tensor_path(prefix, "v"))?;
            for (name, m) in [("k", &k), ("v", &v)] {
                if m.rows() != layout.tokens() {
                    return Err(Error::invalid(
                        "pipeline config",
                        format!(
                            "{}.{name}.rft has {} rows, layout expects {}",
                            prefix.display(),
                            m.rows(),
                            layout.tokens()
                        ),
                    ));
                }
            }
            Ok((q, k, v))
        }
    }
}

/// Runs the sparse pipeline and the dense baseline once, returning the
/// aggregate report. Deterministic for a fixed config and seed, up to the
/// wall-time fields.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let resolution = resolve(config)?;
    match resolution.resolved.precision {
        Precision::F32 => run_typed::<f32>(config, resolution),
        Precision::F64 => run_typed::<f64>(config, resolution),
    }
}

fn run_typed<T: Scalar>(config: &PipelineConfig, resolution: Resolution) -> Result<RunReport> {
    let Resolution {
        resolved,
        layout,
        window,
        warnings,
    } = resolution;
    let n = layout.tokens();
    let order = build_token_order(&layout, &window, resolved.permute, resolved.relocate)?;
    let identity_order = order.is_identity();
    let blocking = BlockingSpec::new(n, n, resolved.block_q, resolved.block_k)?;
    let sink_spec = if resolved.sink {
        Some(SinkSpec::for_token_order(&layout, &order)?)
    } else {
        None
    };
    let mask_override = match &config.mask_path {
        Some(path) => {
            let mask = load_mask(path)?;
            if mask.query_blocks() != blocking.query_blocks()
                || mask.key_blocks() != blocking.key_blocks()
            {
                return Err(Error::invalid(
                    "pipeline config",
                    format!(
                        "mask file is {}x{} but blocking has {}x{} blocks",
                        mask.query_blocks(),
                        mask.key_blocks(),
                        blocking.query_blocks(),
                        blocking.key_blocks()
                    ),
                ));
            }
            Some(mask)
        }
        None => None,
    };

    let mut head_reports = Vec::with_capacity(resolved.heads);
    for head in 0..resolved.heads {
        let (q, k, v) = load_inputs::<T>(config, &resolved, &layout, head)?;
        let permuted;
        let (q_run, k_run, v_run) = if identity_order {
            (&q, &k, &v)
        } else {
            permuted = (
                apply_permutation(&q, &order)?,
                apply_permutation(&k, &order)?,
                apply_permutation(&v, &order)?,
            );
            (&permuted.0, &permuted.1, &permuted.2)
        };

        let mask_presink = match &mask_override {
            Some(mask) => mask.clone(),
            None => {
                let q_reps = block_means(q_run, resolved.block_q)?;
                let k_reps = block_means(k_run, resolved.block_k)?;
                let scores = score_blocks(&q_reps, &k_reps, resolved.head_dim)?;
                predict_mask(&scores, &SparsityConfig::TopN(resolved.top_n))?
            }
        };
        let presink_sparsity = effective_sparsity(&mask_presink, &blocking);
        let mask = match &sink_spec {
            Some(sink) => apply_first_frame_sink(&mask_presink, sink, &blocking)?,
            None => mask_presink,
        };
        let postsink_sparsity = effective_sparsity(&mask, &blocking);

        if head == 0 {
            if let Some(path) = &config.mask_out {
                save_mask(&mask, path)?;
            }
            // warm-up, excluded from the timed section
            flash_attention(q_run, k_run, v_run, &blocking, Some(&mask))?;
            flash_attention(&q, &k, &v, &blocking, None)?;
        }

        let sparse_started = Instant::now();
        let sparse = flash_attention(q_run, k_run, v_run, &blocking, Some(&mask))?;
        let wall_time_sparse = sparse_started.elapsed().as_secs_f64();
        let full_started = Instant::now();
        let full = flash_attention(&q, &k, &v, &blocking, None)?;
        let wall_time_full = full_started.elapsed().as_secs_f64();

        let sparse_restored = if identity_order {
            sparse.output
        } else {
            apply_permutation(&sparse.output, &order.invert())?
        };

        head_reports.push(HeadReport {
            head,
            cosine_sim: cosine_similarity(&sparse_restored, &full.output)?,
            max_abs_err: max_abs_diff(&sparse_restored, &full.output)?,
            effective_sparsity_presink: presink_sparsity,
            effective_sparsity_postsink: postsink_sparsity,
            mac_full: full.macs,
            mac_sparse: sparse.macs,
            attention_speedup_model: full.macs as f64 / sparse.macs as f64,
            wall_time_sparse,
            wall_time_full,
            cosine_histogram: per_token_cosine_histogram(&sparse_restored, &full.output)?,
        });
    }
    Ok(build_report(resolved, warnings, head_reports))
}

/// One sweep row: fields set here override the base config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOverride {
    pub target_sparsity: Option<f64>,
    pub top_n: Option<usize>,
    pub permute: Option<bool>,
    pub sink: Option<bool>,
    pub relocate: Option<bool>,
    pub seed: Option<u64>,
}

impl SweepOverride {
    fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut config = base.clone();
        if let Some(rho) = self.target_sparsity {
            config.sparsity = SparsityConfig::TargetSparsity(rho);
        } else if let Some(n) = self.top_n {
            config.sparsity = SparsityConfig::TopN(n);
        }
        if self.permute.is_some() {
            config.permute = self.permute;
        }
        if self.sink.is_some() {
            config.sink = self.sink;
        }
        if self.relocate.is_some() {
            config.relocate = self.relocate;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config
    }
}

pub const SWEEP_CSV_COLUMNS: [&str; 27] = [
    "seed",
    "frames",
    "height",
    "width",
    "head_dim",
    "heads",
    "precision",
    "block_q",
    "block_k",
    "window_f",
    "window_h",
    "window_w",
    "target_sparsity",
    "top_n",
    "permute",
    "sink",
    "relocate",
    "cosine_sim",
    "max_abs_err",
    "effective_sparsity_presink",
    "effective_sparsity_postsink",
    "mac_full",
    "mac_sparse",
    "attention_speedup_model",
    "wall_time_full",
    "wall_time_sparse",
    "error",
];

fn toggle_label(t: Option<bool>) -> &'static str {
    match t {
        Some(true) => "on",
        Some(false) => "off",
        None => "auto",
    }
}

fn success_row(report: &RunReport) -> Vec<String> {
    let c = &report.config;
    vec![
        c.seed.to_string(),
        c.frames.to_string(),
        c.height.to_string(),
        c.width.to_string(),
        c.head_dim.to_string(),
        c.heads.to_string(),
        c.precision.to_string(),
        c.block_q.to_string(),
        c.block_k.to_string(),
        c.window_f.to_string(),
        c.window_h.to_string(),
        c.window_w.to_string(),
        c.target_sparsity.to_string(),
        c.top_n.to_string(),
        if c.permute { "on" } else { "off" }.to_string(),
        if c.sink { "on" } else { "off" }.to_string(),
        if c.relocate { "on" } else { "off" }.to_string(),
        report.cosine_sim.to_string(),
        report.max_abs_err.to_string(),
        report.effective_sparsity_presink.to_string(),
        report.effective_sparsity_postsink.to_string(),
        report.mac_full.to_string(),
        report.mac_sparse.to_string(),
        report.attention_speedup_model.to_string(),
        report.wall_time_full.to_string(),
        report.wall_time_sparse.to_string(),
        String::new(),
    ]
}

fn failure_row(config: &PipelineConfig, error: &Error) -> Vec<String> {
    let (rho, top_n) = match config.sparsity {
        SparsityConfig::TargetSparsity(rho) => (rho.to_string(), String::new()),
        SparsityConfig::TopN(n) => (String::new(), n.to_string()),
    };
    let mut row = vec![
        config.seed.to_string(),
        config.frames.to_string(),
        config.height.to_string(),
        config.width.to_string(),
        config.head_dim.to_string(),
        config.heads.to_string(),
        config
            .precision
            .map(|p| p.to_string())
            .unwrap_or_else(|| "auto".to_string()),
        config.block_q.to_string(),
        config.block_k.to_string(),
        config
            .window_f
            .map(|v| v.to_string())
            .unwrap_or_else(|| "auto".to_string()),
        config
            .window_h
            .map(|v| v.to_string())
            .unwrap_or_else(|| "auto".to_string()),
        config
            .window_w
            .map(|v| v.to_string())
            .unwrap_or_else(|| "auto".to_string()),
        rho,
        top_n,
        toggle_label(config.permute).to_string(),
        toggle_label(config.sink).to_string(),
        toggle_label(config.relocate).to_string(),
    ];
    row.extend(std::iter::repeat_n(String::new(), 9));
    row.push(error.to_string());
    row
}

/// Runs one pipeline per override row and collects a CSV table with a stable
/// column order. A failing row records its error in the `error` column and
/// the sweep continues.
pub fn run_sweep(base: &PipelineConfig, overrides: &[SweepOverride]) -> Result<String> {
    if overrides.is_empty() {
        return Err(Error::invalid(
            "run_sweep",
            "at least one override row is required",
        ));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(SWEEP_CSV_COLUMNS)
        .expect("in-memory csv write");
    for over in overrides {
        let config = over.apply(base);
        let row = match run_pipeline(&config) {
            Ok(report) => success_row(&report),
            Err(error) => failure_row(&config, &error),
        };
        writer.write_record(&row).expect("in-memory csv write");
    }
    let bytes = writer.into_inner().expect("in-memory csv flush");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
