//! Quality and efficiency metrics comparing sparse and dense attention runs.
//!
//! Cosine similarity is computed over the flattened outputs (all tokens, all
//! channels) as the single headline quality number; a per-token histogram is
//! emitted alongside for diagnostics. Efficiency is reported through exact
//! multiply-accumulate counts — wall times are measured but carry no
//! acceptance weight since they vary with the host.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flash::BlockingSpec;
use crate::mask::BlockMask;
use crate::matrix::Matrix;
use crate::pipeline::ResolvedConfig;
use crate::scalar::Scalar;

fn check_same_dims<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::invalid(
            op,
            format!(
                "shape mismatch: {}x{} vs {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    Ok(())
}

/// Cosine similarity of the flattened matrices, in f64. Errors when either
/// input has zero norm (the quantity is undefined there).
pub fn cosine_similarity<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    check_same_dims("cosine_similarity", a, b)?;
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Largest element-wise absolute difference, in f64.
pub fn max_abs_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    check_same_dims("max_abs_diff", a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(0.0, f64::max))
}

/// Fraction of score-matrix area whose block pairs are skipped,
/// token-weighted so ragged blocks count at their true size.
pub fn effective_sparsity(mask: &BlockMask, blocking: &BlockingSpec) -> f64 {
    debug_assert_eq!(mask.query_blocks(), blocking.query_blocks());
    debug_assert_eq!(mask.key_blocks(), blocking.key_blocks());
    let mut unmasked_area = 0u64;
    for i in 0..blocking.query_blocks() {
        let q_len = blocking.query_range(i).len() as u64;
        for j in 0..blocking.key_blocks() {
            if mask.get(i, j) {
                unmasked_area += q_len * blocking.key_range(j).len() as u64;
            }
        }
    }
    let total = blocking.n_queries() as u64 * blocking.n_keys() as u64;
    1.0 - unmasked_area as f64 / total as f64
}

pub const COSINE_HISTOGRAM_BINS: usize = 20;

/// Histogram of per-token (per-row) cosine similarities over `[-1, 1]`.
/// Rows where either side has zero norm are counted as `degenerate`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosineHistogram {
    /// Counts for 20 equal bins spanning [-1, 1].
    pub counts: Vec<u64>,
    pub degenerate: u64,
}

pub fn per_token_cosine_histogram<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
) -> Result<CosineHistogram> {
    check_same_dims("per_token_cosine_histogram", a, b)?;
    let mut counts = vec![0u64; COSINE_HISTOGRAM_BINS];
    let mut degenerate = 0u64;
    for r in 0..a.rows() {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (&x, &y) in a.row(r).iter().zip(b.row(r)) {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            degenerate += 1;
            continue;
        }
        let cos = dot / (na.sqrt() * nb.sqrt());
        let bin = (((cos + 1.0) / 2.0) * COSINE_HISTOGRAM_BINS as f64).floor() as isize;
        let bin = bin.clamp(0, COSINE_HISTOGRAM_BINS as isize - 1) as usize;
        counts[bin] += 1;
    }
    Ok(CosineHistogram { counts, degenerate })
}

/// Per-head measurements from one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: usize,
    pub cosine_sim: f64,
    pub max_abs_err: f64,
    pub effective_sparsity_presink: f64,
    pub effective_sparsity_postsink: f64,
    pub mac_full: u64,
    pub mac_sparse: u64,
    pub attention_speedup_model: f64,
    pub wall_time_sparse: f64,
    pub wall_time_full: f64,
    pub cosine_histogram: CosineHistogram,
}

/// Aggregate report for one pipeline run. The headline fields average (or
/// sum, for counters) over heads; per-head detail is kept alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ResolvedConfig,
    pub warnings: Vec<String>,
    pub target_sparsity: f64,
    pub cosine_sim: f64,
    pub max_abs_err: f64,
    pub effective_sparsity_presink: f64,
    pub effective_sparsity_postsink: f64,
    pub mac_full: u64,
    pub mac_sparse: u64,
    pub attention_speedup_model: f64,
    pub wall_time_sparse: f64,
    pub wall_time_full: f64,
    pub heads: Vec<HeadReport>,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Assembles the aggregate report from per-head measurements.
pub fn build_report(
    config: ResolvedConfig,
    warnings: Vec<String>,
    heads: Vec<HeadReport>,
) -> RunReport {
    assert!(!heads.is_empty(), "a run always produces at least one head");
    let count = heads.len() as f64;
    let mean = |f: fn(&HeadReport) -> f64| heads.iter().map(f).sum::<f64>() / count;
    let mac_full: u64 = heads.iter().map(|h| h.mac_full).sum();
    let mac_sparse: u64 = heads.iter().map(|h| h.mac_sparse).sum();
    let speedup = if mac_sparse == 0 {
        f64::INFINITY
    } else {
        mac_full as f64 / mac_sparse as f64
    };
    RunReport {
        target_sparsity: config.target_sparsity,
        cosine_sim: mean(|h| h.cosine_sim),
        max_abs_err: heads.iter().map(|h| h.max_abs_err).fold(0.0, f64::max),
        effective_sparsity_presink: mean(|h| h.effective_sparsity_presink),
        effective_sparsity_postsink: mean(|h| h.effective_sparsity_postsink),
        mac_full,
        mac_sparse,
        attention_speedup_model: speedup,
        wall_time_sparse: heads.iter().map(|h| h.wall_time_sparse).sum(),
        wall_time_full: heads.iter().map(|h| h.wall_time_full).sum(),
        config,
        warnings,
        heads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_have_unit_similarity() {
        let a = Matrix::from_vec(2, 2, vec![1.0f64, -2.0, 0.5, 3.0]).unwrap();
        let cos = cosine_similarity(&a, &a).unwrap();
        assert!((cos - 1.0).abs() < 1e-12);
        assert_eq!(max_abs_diff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn opposite_inputs_have_negative_unit_similarity() {
        let a = Matrix::from_vec(1, 3, vec![1.0f64, 2.0, -0.5]).unwrap();
        let b = Matrix::from_vec(1, 3, vec![-1.0f64, -2.0, 0.5]).unwrap();
        let cos = cosine_similarity(&a, &b).unwrap();
        assert!((cos + 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_example() {
        let a = Matrix::from_vec(1, 2, vec![1.0f64, 0.0]).unwrap();
        let b = Matrix::from_vec(1, 2, vec![1.0f64, 1.0]).unwrap();
        let cos = cosine_similarity(&a, &b).unwrap();
        assert!((cos - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_inputs_are_undefined() {
        let z = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&z, &z),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn effective_sparsity_cases() {
        let blocking = BlockingSpec::new(4, 4, 2, 2).unwrap();
        assert_eq!(effective_sparsity(&BlockMask::all_ones(2, 2), &blocking), 0.0);
        let diag = BlockMask::from_fn(2, 2, |i, j| i == j);
        assert_eq!(effective_sparsity(&diag, &blocking), 0.5);

        // ragged: N=5, b=2, all ones except block (0,0) -> 1 - 21/25
        let ragged = BlockingSpec::new(5, 5, 2, 2).unwrap();
        let mask = BlockMask::from_fn(3, 3, |i, j| !(i == 0 && j == 0));
        let s = effective_sparsity(&mask, &ragged);
        assert!((s - 0.16).abs() < 1e-12);
    }

    #[test]
    fn histogram_buckets_unit_rows_at_the_top() {
        let a = Matrix::from_vec(3, 2, vec![1.0f64, 0.0, 0.0, 2.0, -1.0, 1.0]).unwrap();
        let hist = per_token_cosine_histogram(&a, &a).unwrap();
        assert_eq!(hist.counts[COSINE_HISTOGRAM_BINS - 1], 3);
        assert_eq!(hist.degenerate, 0);
    }
}
