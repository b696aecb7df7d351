//! Tiled online-softmax attention with block-pair skipping.
//!
//! Queries are split into blocks of `block_q` tokens and keys/values into
//! blocks of `block_k`. Each query block streams over its key blocks in
//! ascending order, folding every unmasked score tile into a running
//! (max, denominator, accumulator) state and normalizing once at the end.
//! Masked block pairs are skipped outright: they touch neither the state nor
//! the multiply-accumulate counter. Ragged final blocks are processed at
//! their true size, which keeps the counter exact.
//!
//! Query blocks are independent, so they run in parallel; within a block the
//! key loop is sequential, making results identical to a sequential run.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::BlockMask;
use crate::matrix::Matrix;
use crate::oracle::{check_attention_dims, check_mask_dims, AttentionScale};
use crate::scalar::Scalar;

/// Token-range partition of the query and key axes. Final blocks may be
/// ragged (`n mod block` tokens).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockingSpec {
    n_queries: usize,
    n_keys: usize,
    block_q: usize,
    block_k: usize,
}

impl BlockingSpec {
    pub fn new(n_queries: usize, n_keys: usize, block_q: usize, block_k: usize) -> Result<Self> {
        for (name, v) in [
            ("n_queries", n_queries),
            ("n_keys", n_keys),
            ("block_q", block_q),
            ("block_k", block_k),
        ] {
            if v == 0 {
                return Err(Error::invalid(
                    "BlockingSpec::new",
                    format!("{name} must be >= 1, got 0"),
                ));
            }
        }
        Ok(Self {
            n_queries,
            n_keys,
            block_q,
            block_k,
        })
    }

    #[inline]
    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    #[inline]
    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    #[inline]
    pub fn block_q(&self) -> usize {
        self.block_q
    }

    #[inline]
    pub fn block_k(&self) -> usize {
        self.block_k
    }

    #[inline]
    pub fn query_blocks(&self) -> usize {
        self.n_queries.div_ceil(self.block_q)
    }

    #[inline]
    pub fn key_blocks(&self) -> usize {
        self.n_keys.div_ceil(self.block_k)
    }

    #[inline]
    pub fn query_range(&self, i: usize) -> Range<usize> {
        i * self.block_q..((i + 1) * self.block_q).min(self.n_queries)
    }

    #[inline]
    pub fn key_range(&self, j: usize) -> Range<usize> {
        j * self.block_k..((j + 1) * self.block_k).min(self.n_keys)
    }

    #[inline]
    pub fn query_block_of(&self, token: usize) -> usize {
        token / self.block_q
    }

    #[inline]
    pub fn key_block_of(&self, token: usize) -> usize {
        token / self.block_k
    }
}

/// Running per-row softmax state over one query block: row maxima start at
/// negative infinity, denominators at zero, the output accumulator at zero.
pub struct OnlineSoftmaxState<T> {
    row_max: Vec<T>,
    denom: Vec<T>,
    acc: Vec<T>,
    value_width: usize,
}

impl<T: Scalar> OnlineSoftmaxState<T> {
    pub fn new(rows: usize, value_width: usize) -> Self {
        Self {
            row_max: vec![T::neg_infinity(); rows],
            denom: vec![T::zero(); rows],
            acc: vec![T::zero(); rows * value_width],
            value_width,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.row_max.len()
    }

    pub fn row_max(&self) -> &[T] {
        &self.row_max
    }

    pub fn denom(&self) -> &[T] {
        &self.denom
    }

    /// Folds one unmasked key block into the state. `scores` is the
    /// row-major `rows x key_count` score tile and is consumed as scratch
    /// (overwritten with the tile's unnormalized probabilities).
    pub fn absorb(&mut self, scores: &mut [T], values: &Matrix<T>, keys: Range<usize>) {
        let key_count = keys.len();
        debug_assert_eq!(scores.len(), self.rows() * key_count);
        for r in 0..self.rows() {
            let tile_row = &mut scores[r * key_count..(r + 1) * key_count];
            let mut block_max = T::neg_infinity();
            for &s in tile_row.iter() {
                block_max = block_max.max(s);
            }
            let new_max = self.row_max[r].max(block_max);
            // exp(-inf - finite) = 0, so the first absorbed block cleanly
            // wipes the zero-initialized denominator and accumulator
            let carry = (self.row_max[r] - new_max).exp();
            let mut tile_sum = T::zero();
            for s in tile_row.iter_mut() {
                let p = (*s - new_max).exp();
                *s = p;
                tile_sum += p;
            }
            self.denom[r] = self.denom[r] * carry + tile_sum;
            let acc_row = &mut self.acc[r * self.value_width..(r + 1) * self.value_width];
            if carry != T::one() {
                for a in acc_row.iter_mut() {
                    *a *= carry;
                }
            }
            for (c, key) in keys.clone().enumerate() {
                let p = tile_row[c];
                for (a, &x) in acc_row.iter_mut().zip(values.row(key)) {
                    *a += p * x;
                }
            }
            self.row_max[r] = new_max;
        }
    }

    /// Normalizes by the accumulated denominators into `out` (row-major,
    /// `rows x value_width`). A zero denominator means no block was ever
    /// absorbed for that row, which only an invalid mask can cause.
    pub fn finalize(self, out: &mut [T], first_row: usize) -> Result<()> {
        for (r, &den) in self.denom.iter().enumerate() {
            if den <= T::zero() {
                return Err(Error::degenerate(format!(
                    "query row {} has empty softmax support",
                    first_row + r
                )));
            }
        }
        for r in 0..self.rows() {
            let den = self.denom[r];
            let acc_row = &self.acc[r * self.value_width..(r + 1) * self.value_width];
            let out_row = &mut out[r * self.value_width..(r + 1) * self.value_width];
            for (o, &a) in out_row.iter_mut().zip(acc_row) {
                *o = a / den;
            }
        }
        Ok(())
    }
}

/// Attention output plus the multiply-accumulate count actually performed.
#[derive(Clone, Debug, PartialEq)]
pub struct FlashOutput<T> {
    pub output: Matrix<T>,
    /// Multiply-accumulates spent on score and value tiles, ragged-aware.
    pub macs: u64,
}

/// Tiled attention. With `mask` absent (or all ones) this equals dense
/// attention; with a mask it equals the masked dense oracle, and skipped
/// pairs cost zero multiply-accumulates.
pub fn flash_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    blocking: &BlockingSpec,
    mask: Option<&BlockMask>,
) -> Result<FlashOutput<T>> {
    check_attention_dims("flash_attention", q, k, v)?;
    if blocking.n_queries() != q.rows() || blocking.n_keys() != k.rows() {
        return Err(Error::invalid(
            "flash_attention",
            format!(
                "blocking covers {}x{} tokens but inputs are {}x{}",
                blocking.n_queries(),
                blocking.n_keys(),
                q.rows(),
                k.rows()
            ),
        ));
    }
    if let Some(m) = mask {
        check_mask_dims("flash_attention", m, blocking)?;
        if let Some(i) = m.first_empty_row() {
            return Err(Error::degenerate(format!(
                "mask row {i} has no allowed key blocks"
            )));
        }
    }
    let scale = T::from_f64_lossy(AttentionScale::for_head_dim(q.cols())?.inv_sqrt_d());
    let d_v = v.cols();
    let mut out = Matrix::zeros(q.rows(), d_v);
    let block_q = blocking.block_q();
    let macs = out
        .data_mut()
        .par_chunks_mut(block_q * d_v)
        .enumerate()
        .map(|(i, chunk)| process_query_block(i, chunk, q, k, v, blocking, mask, scale))
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(FlashOutput { output: out, macs })
}

#[allow(clippy::too_many_arguments)]
fn process_query_block<T: Scalar>(
    i: usize,
    out_chunk: &mut [T],
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    blocking: &BlockingSpec,
    mask: Option<&BlockMask>,
    scale: T,
) -> Result<u64> {
    let rows = blocking.query_range(i);
    let row_count = rows.len();
    let d = q.cols();
    let d_v = v.cols();
    debug_assert_eq!(out_chunk.len(), row_count * d_v);

    let mut state = OnlineSoftmaxState::new(row_count, d_v);
    let mut scores = vec![T::zero(); row_count * blocking.block_k()];
    let mut macs = 0u64;
    for j in 0..blocking.key_blocks() {
        if let Some(m) = mask {
            if !m.get(i, j) {
                continue;
            }
        }
        let keys = blocking.key_range(j);
        let key_count = keys.len();
        for (r_local, r) in rows.clone().enumerate() {
            let q_row = q.row(r);
            let tile_row = &mut scores[r_local * key_count..(r_local + 1) * key_count];
            for (c_local, key) in keys.clone().enumerate() {
                tile_row[c_local] = dot(q_row, k.row(key)) * scale;
            }
        }
        state.absorb(&mut scores[..row_count * key_count], v, keys);
        macs += (row_count * key_count * (d + d_v)) as u64;
    }
    state.finalize(out_chunk, rows.start)?;
    Ok(macs)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Closed-form multiply-accumulate count for a blocking and mask: the sum
/// over unmasked pairs of `|Q_i| * |K_j| * (d + d_v)`, ragged-aware. `None`
/// counts every pair, giving `n_q * n_k * (d + d_v)`.
pub fn mac_count(blocking: &BlockingSpec, mask: Option<&BlockMask>, d: usize, d_v: usize) -> u64 {
    if let Some(m) = mask {
        debug_assert_eq!(m.query_blocks(), blocking.query_blocks());
        debug_assert_eq!(m.key_blocks(), blocking.key_blocks());
    }
    let per_pair = (d + d_v) as u64;
    let mut total = 0u64;
    for i in 0..blocking.query_blocks() {
        let q_len = blocking.query_range(i).len() as u64;
        for j in 0..blocking.key_blocks() {
            if mask.is_none_or(|m| m.get(i, j)) {
                total += q_len * blocking.key_range(j).len() as u64 * per_pair;
            }
        }
    }
    total
}
