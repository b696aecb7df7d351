//! Block-sparse attention toolkit.
//!
//! The sparse path tiles attention into (query block, key block) pairs and
//! skips pairs ruled out by a predicted block mask. Mask prediction uses
//! block-mean representative tokens; a spatiotemporal window permutation
//! raises intra-block similarity so those means stay faithful; and a
//! first-frame sink keeps video-critical frame-zero tokens densely attended.
//! Dense oracles, exact multiply-accumulate accounting, and quality metrics
//! verify the whole pipeline at desk scale.
//!
//! Numeric kernels are generic over the element type via [`Scalar`]: `f32`
//! mirrors inference practice, `f64` backs tight oracle comparisons.

pub mod error;
pub mod flash;
pub mod mask;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod permute;
pub mod pipeline;
pub mod scalar;
pub mod sink;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
pub use flash::{flash_attention, mac_count, BlockingSpec, FlashOutput, OnlineSoftmaxState};
pub use mask::{
    block_means, load_mask, predict_mask, random_mask, save_mask, score_blocks, sparsity_to_n,
    BlockMask, RepresentativeSet, SparsityConfig,
};
pub use matrix::{load_tensor, save_tensor, tensor_header, Matrix};
pub use metrics::{
    cosine_similarity, effective_sparsity, max_abs_diff, per_token_cosine_histogram,
    CosineHistogram, HeadReport, RunReport,
};
pub use oracle::{attention_mass_by_block, masked_naive_attention, naive_attention, AttentionScale};
pub use permute::{
    apply_permutation, build_window_permutation, PermutationMap, VideoLayout, WindowSpec,
};
pub use pipeline::{
    build_token_order, run_pipeline, run_sweep, InputSource, PipelineConfig, ResolvedConfig,
    SweepOverride,
};
pub use scalar::{Precision, Scalar};
pub use sink::{apply_first_frame_sink, build_relocation, RelocationMap, SinkSpec};
pub use synthetic::{generate_synthetic_qkv, SyntheticSpec};

/// Single-precision matrix, the default for pipeline runs.
pub type MatrixF32 = Matrix<f32>;
/// Double-precision matrix, used for tight oracle comparisons.
pub type MatrixF64 = Matrix<f64>;
