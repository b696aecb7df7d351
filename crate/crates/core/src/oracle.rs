//! Dense attention ground truth.
//!
//! Everything here favors clarity over speed and computes internally in f64
//! regardless of the pipeline element type, keeping oracle rounding out of
//! tolerance budgets. Masked attention realizes block skipping as score
//! masking: excluded key columns simply never enter the softmax, which is
//! exactly the quantity the tiled kernel computes when it skips blocks.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flash::BlockingSpec;
use crate::mask::BlockMask;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Score scale `1/sqrt(d)` shared by the kernels and the block scorer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionScale {
    inv_sqrt_d: f64,
}

impl AttentionScale {
    pub fn for_head_dim(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid(
                "AttentionScale::for_head_dim",
                "head dimension must be >= 1",
            ));
        }
        Ok(Self {
            inv_sqrt_d: 1.0 / (d as f64).sqrt(),
        })
    }

    #[inline]
    pub fn inv_sqrt_d(&self) -> f64 {
        self.inv_sqrt_d
    }
}

pub(crate) fn check_attention_dims<T: Scalar>(
    op: &'static str,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::invalid(
            op,
            format!("query width {} != key width {}", q.cols(), k.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::invalid(
            op,
            format!("key count {} != value count {}", k.rows(), v.rows()),
        ));
    }
    Ok(())
}

fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.to_f64_lossy() * y.to_f64_lossy())
        .sum()
}

/// Softmax-attends one query row over the key columns listed in `ranges`
/// (ascending, non-overlapping). Stable two-pass softmax in f64.
fn attend_row<T: Scalar>(
    q_row: &[T],
    keys: &Matrix<T>,
    values: &Matrix<T>,
    inv_sqrt_d: f64,
    ranges: &[Range<usize>],
    out_row: &mut [T],
) {
    let mut scores = Vec::with_capacity(ranges.iter().map(|r| r.len()).sum());
    for range in ranges {
        for c in range.clone() {
            scores.push(dot_f64(q_row, keys.row(c)) * inv_sqrt_d);
        }
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for s in &mut scores {
        *s = (*s - max).exp();
        denom += *s;
    }
    let mut acc = vec![0.0f64; values.cols()];
    let mut idx = 0;
    for range in ranges {
        for c in range.clone() {
            let w = scores[idx];
            idx += 1;
            for (a, &x) in acc.iter_mut().zip(values.row(c)) {
                *a += w * x.to_f64_lossy();
            }
        }
    }
    for (o, a) in out_row.iter_mut().zip(&acc) {
        *o = T::from_f64_lossy(*a / denom);
    }
}

/// Exact dense attention: `softmax(Q K^T / sqrt(d)) V`.
pub fn naive_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_attention_dims("naive_attention", q, k, v)?;
    let scale = AttentionScale::for_head_dim(q.cols())?;
    let all_keys = 0..k.rows();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let cols = v.cols();
    out.data_mut().par_chunks_mut(cols).enumerate().for_each(|(r, out_row)| {
        attend_row(
            q.row(r),
            k,
            v,
            scale.inv_sqrt_d(),
            std::slice::from_ref(&all_keys),
            out_row,
        )
    });
    Ok(out)
}

/// Dense realization of block-masked attention: for each query row the
/// softmax runs only over key columns in allowed blocks. With an all-ones
/// mask this walks the same columns in the same order as [`naive_attention`]
/// and is therefore bit-identical to it.
pub fn masked_naive_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &BlockMask,
    blocking: &BlockingSpec,
) -> Result<Matrix<T>> {
    check_attention_dims("masked_naive_attention", q, k, v)?;
    check_blocking("masked_naive_attention", blocking, q.rows(), k.rows())?;
    check_mask_dims("masked_naive_attention", mask, blocking)?;
    let scale = AttentionScale::for_head_dim(q.cols())?;

    let mut ranges_per_block = Vec::with_capacity(blocking.query_blocks());
    for i in 0..blocking.query_blocks() {
        let ranges: Vec<Range<usize>> = (0..blocking.key_blocks())
            .filter(|&j| mask.get(i, j))
            .map(|j| blocking.key_range(j))
            .collect();
        if ranges.is_empty() {
            return Err(Error::degenerate(format!(
                "mask row {i} has no allowed key blocks"
            )));
        }
        ranges_per_block.push(ranges);
    }

    let mut out = Matrix::zeros(q.rows(), v.cols());
    let cols = v.cols();
    let block_q = blocking.block_q();
    out.data_mut()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(r, out_row)| {
            let ranges = &ranges_per_block[r / block_q];
            attend_row(q.row(r), k, v, scale.inv_sqrt_d(), ranges, out_row);
        });
    Ok(out)
}

/// Sums the true (dense) softmax weights per block pair, as a
/// `query_blocks x key_blocks` f64 matrix. Each query row contributes total
/// weight 1, so entry `(i, j)` is the attention mass query block `i` spends
/// on key block `j`; summing a mask's selected entries gives its captured
/// attention mass.
pub fn attention_mass_by_block<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    blocking: &BlockingSpec,
) -> Result<Matrix<f64>> {
    if q.cols() != k.cols() {
        return Err(Error::invalid(
            "attention_mass_by_block",
            format!("query width {} != key width {}", q.cols(), k.cols()),
        ));
    }
    check_blocking("attention_mass_by_block", blocking, q.rows(), k.rows())?;
    let scale = AttentionScale::for_head_dim(q.cols())?;
    let t_q = blocking.query_blocks();
    let t_k = blocking.key_blocks();
    let n_k = k.rows();

    let rows: Vec<Vec<f64>> = (0..t_q)
        .into_par_iter()
        .map(|i| {
            let mut block_row = vec![0.0f64; t_k];
            let mut scores = vec![0.0f64; n_k];
            for r in blocking.query_range(i) {
                let q_row = q.row(r);
                for (c, s) in scores.iter_mut().enumerate() {
                    *s = dot_f64(q_row, k.row(c)) * scale.inv_sqrt_d();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for (j, slot) in block_row.iter_mut().enumerate() {
                    let sum: f64 = blocking.key_range(j).map(|c| scores[c]).sum();
                    *slot += sum / denom;
                }
            }
            block_row
        })
        .collect();

    Matrix::from_vec(t_q, t_k, rows.into_iter().flatten().collect())
}

fn check_blocking(
    op: &'static str,
    blocking: &BlockingSpec,
    n_queries: usize,
    n_keys: usize,
) -> Result<()> {
    if blocking.n_queries() != n_queries || blocking.n_keys() != n_keys {
        return Err(Error::invalid(
            op,
            format!(
                "blocking covers {}x{} tokens but inputs are {}x{}",
                blocking.n_queries(),
                blocking.n_keys(),
                n_queries,
                n_keys
            ),
        ));
    }
    Ok(())
}

pub(crate) fn check_mask_dims(
    op: &'static str,
    mask: &BlockMask,
    blocking: &BlockingSpec,
) -> Result<()> {
    if mask.query_blocks() != blocking.query_blocks() || mask.key_blocks() != blocking.key_blocks()
    {
        return Err(Error::invalid(
            op,
            format!(
                "mask is {}x{} but blocking has {}x{} blocks",
                mask.query_blocks(),
                mask.key_blocks(),
                blocking.query_blocks(),
                blocking.key_blocks()
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permute::VideoLayout;
    use crate::synthetic::{generate_synthetic_qkv, SyntheticSpec};

    fn random_qkv(n: usize, d: usize, seed: u64) -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
        let spec = SyntheticSpec {
            seed,
            layout: VideoLayout::new(1, 1, n).unwrap(),
            head_dim: d,
            smoothness: 0.0,
        };
        generate_synthetic_qkv(&spec).unwrap()
    }

    /// Independent brute-force reference: materializes the full score and
    /// probability matrices with plain loops.
    fn three_loop_attention(q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>) -> Matrix<f64> {
        let n_q = q.rows();
        let n_k = k.rows();
        let d = q.cols();
        let d_v = v.cols();
        let scale = 1.0 / (d as f64).sqrt();
        let mut p = vec![vec![0.0f64; n_k]; n_q];
        for r in 0..n_q {
            for c in 0..n_k {
                let mut s = 0.0;
                for t in 0..d {
                    s += q.get(r, t) * k.get(c, t);
                }
                p[r][c] = (s * scale).exp();
            }
            let z: f64 = p[r].iter().sum();
            for c in 0..n_k {
                p[r][c] /= z;
            }
        }
        let mut out = Matrix::zeros(n_q, d_v);
        for r in 0..n_q {
            for t in 0..d_v {
                let mut acc = 0.0;
                for c in 0..n_k {
                    acc += p[r][c] * v.get(c, t);
                }
                out.set(r, t, acc);
            }
        }
        out
    }

    fn max_abs(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_inputs_give_row_stochastic_mix() {
        let m = Matrix::from_vec(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let out = naive_attention(&m, &m, &m).unwrap();
        // each output row is a convex combination of the identity rows, so
        // its entries are the attention weights and must sum to one
        for r in 0..2 {
            let sum: f64 = out.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(out.row(r).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn single_token_returns_value_row() {
        let q = Matrix::from_vec(1, 1, vec![3.0f64]).unwrap();
        let k = Matrix::from_vec(1, 1, vec![-2.0f64]).unwrap();
        let v = Matrix::from_vec(1, 1, vec![7.5f64]).unwrap();
        let out = naive_attention(&q, &k, &v).unwrap();
        assert_eq!(out.get(0, 0), 7.5);
    }

    #[test]
    fn matches_three_loop_reference() {
        let (q, k, v) = random_qkv(8, 4, 11);
        let ours = naive_attention(&q, &k, &v).unwrap();
        let reference = three_loop_attention(&q, &k, &v);
        assert!(max_abs(&ours, &reference) < 1e-6);

        let q32 = q.cast::<f32>();
        let k32 = k.cast::<f32>();
        let v32 = v.cast::<f32>();
        let ours32 = naive_attention(&q32, &k32, &v32).unwrap();
        assert!(max_abs(&ours32.cast::<f64>(), &reference) < 1e-6);
    }

    #[test]
    fn row_weights_are_stochastic_for_random_inputs() {
        let (q, k, _) = random_qkv(16, 8, 5);
        // feed the identity as values so the output rows are the weights
        let eye = Matrix::from_vec(
            16,
            16,
            (0..256)
                .map(|i| if i % 17 == 0 { 1.0f64 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let out = naive_attention(&q, &k, &eye).unwrap();
        for r in 0..16 {
            let sum: f64 = out.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            assert!(out.row(r).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn shift_invariance_per_query_row() {
        // adding a constant to one row's scores must not change that row's
        // output; emulate by a brute-force path with shifted scores
        let (q, k, v) = random_qkv(6, 3, 21);
        let base = naive_attention(&q, &k, &v).unwrap();

        let shift = 13.5f64;
        let scale = 1.0 / (3.0f64).sqrt();
        let row = 2;
        let mut weights = vec![0.0f64; 6];
        for c in 0..6 {
            let mut s = 0.0;
            for t in 0..3 {
                s += q.get(row, t) * k.get(c, t);
            }
            weights[c] = (s * scale + shift).exp();
        }
        let z: f64 = weights.iter().sum();
        let mut shifted_row = vec![0.0f64; 3];
        for t in 0..3 {
            shifted_row[t] = (0..6).map(|c| weights[c] / z * v.get(c, t)).sum();
        }
        for t in 0..3 {
            assert!((shifted_row[t] - base.get(row, t)).abs() < 1e-5);
        }
    }

    #[test]
    fn permutation_equivariance() {
        use crate::permute::{apply_permutation, PermutationMap};
        let (q, k, v) = random_qkv(10, 4, 33);
        let map = PermutationMap::from_forward(vec![3, 1, 4, 0, 9, 7, 2, 8, 5, 6]).unwrap();

        // permuting keys and values jointly leaves the output unchanged
        let kp = apply_permutation(&k, &map).unwrap();
        let vp = apply_permutation(&v, &map).unwrap();
        let base = naive_attention(&q, &k, &v).unwrap();
        let shuffled = naive_attention(&q, &kp, &vp).unwrap();
        assert!(max_abs(&base, &shuffled) < 1e-6);

        // permuting queries permutes the output rows
        let qp = apply_permutation(&q, &map).unwrap();
        let permuted_out = naive_attention(&qp, &k, &v).unwrap();
        let expected = apply_permutation(&base, &map).unwrap();
        assert!(max_abs(&permuted_out, &expected) < 1e-6);
    }

    #[test]
    fn masked_all_ones_is_bit_identical_to_naive() {
        let (q, k, v) = random_qkv(12, 4, 2);
        let blocking = BlockingSpec::new(12, 12, 4, 4).unwrap();
        let mask = BlockMask::all_ones(3, 3);
        let masked = masked_naive_attention(&q, &k, &v, &mask, &blocking).unwrap();
        let naive = naive_attention(&q, &k, &v).unwrap();
        assert_eq!(masked, naive);
    }

    #[test]
    fn block_diagonal_mask_stacks_independent_attentions() {
        let (q, k, v) = random_qkv(4, 3, 17);
        let blocking = BlockingSpec::new(4, 4, 2, 2).unwrap();
        let mask = BlockMask::from_fn(2, 2, |i, j| i == j);
        let masked = masked_naive_attention(&q, &k, &v, &mask, &blocking).unwrap();

        // compute each half as its own tiny attention problem
        for half in 0..2 {
            let rows = half * 2..half * 2 + 2;
            let slice =
                |m: &Matrix<f64>| {
                    Matrix::from_vec(
                        2,
                        m.cols(),
                        rows.clone().flat_map(|r| m.row(r).to_vec()).collect(),
                    )
                    .unwrap()
                };
            let sub = naive_attention(&slice(&q), &slice(&k), &slice(&v)).unwrap();
            for (local, r) in rows.clone().enumerate() {
                for t in 0..v.cols() {
                    assert!((masked.get(r, t) - sub.get(local, t)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_mask_row_is_degenerate() {
        let (q, k, v) = random_qkv(4, 2, 1);
        let blocking = BlockingSpec::new(4, 4, 2, 2).unwrap();
        let mask = BlockMask::from_fn(2, 2, |i, _| i == 0);
        let err = masked_naive_attention(&q, &k, &v, &mask, &blocking).unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { .. }));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let q = Matrix::from_vec(2, 3, vec![0.0f64; 6]).unwrap();
        let k = Matrix::from_vec(2, 2, vec![0.0f64; 4]).unwrap();
        let v = Matrix::from_vec(2, 2, vec![0.0f64; 4]).unwrap();
        assert!(naive_attention(&q, &k, &v).is_err());
    }

    #[test]
    fn mass_rows_sum_to_block_token_counts() {
        let (q, k, _) = random_qkv(10, 4, 8);
        let blocking = BlockingSpec::new(10, 10, 4, 4).unwrap();
        let mass = attention_mass_by_block(&q, &k, &blocking).unwrap();
        // block row i sums to the number of query rows in block i
        let expected = [4.0, 4.0, 2.0];
        for i in 0..3 {
            let sum: f64 = mass.row(i).iter().sum();
            assert!((sum - expected[i]).abs() < 1e-9, "row {i} sums to {sum}");
        }
    }
}
