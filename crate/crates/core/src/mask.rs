//! Block-mask prediction from block-mean representative tokens, plus the
//! RFM1 bit-packed mask format.
//!
//! Computing full attention scores just to decide which blocks matter would
//! erase the point of sparsity, so each block is summarized by the mean of
//! its token vectors. The representative score matrix then ranks key blocks
//! per query block, and the mask keeps the top `n` of them.
//!
//! RFM1 layout (little-endian): magic `RFM1`, `u64` rows, `u64` cols, then
//! row-major bit-packed booleans, LSB-first within each byte.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::oracle::AttentionScale;
use crate::scalar::Scalar;

pub const RFM1_MAGIC: [u8; 4] = *b"RFM1";
const RFM1_HEADER_LEN: usize = 20;

/// Boolean matrix over (query block, key block) pairs; a set bit means the
/// pair is computed, a clear bit means it is skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    t_q: usize,
    t_k: usize,
    bits: Vec<bool>,
}

impl BlockMask {
    pub fn from_fn(t_q: usize, t_k: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(t_q > 0 && t_k > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(t_q * t_k);
        for i in 0..t_q {
            for j in 0..t_k {
                bits.push(f(i, j));
            }
        }
        Self { t_q, t_k, bits }
    }

    pub fn all_ones(t_q: usize, t_k: usize) -> Self {
        Self::from_fn(t_q, t_k, |_, _| true)
    }

    #[inline]
    pub fn query_blocks(&self) -> usize {
        self.t_q
    }

    #[inline]
    pub fn key_blocks(&self) -> usize {
        self.t_k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.t_k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.t_k + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.t_k..(i + 1) * self.t_k]
    }

    /// Total number of set bits.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_ones(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Index of the first row with no set bit, if any.
    pub fn first_empty_row(&self) -> Option<usize> {
        (0..self.t_q).find(|&i| self.row_ones(i) == 0)
    }
}

/// One mean token vector per block; row `i` is the arithmetic mean of block
/// `i`'s rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeSet<T> {
    pub reps: Matrix<T>,
}

impl<T: Scalar> RepresentativeSet<T> {
    pub fn block_count(&self) -> usize {
        self.reps.rows()
    }
}

/// Computes per-block mean representatives; the ragged final block is
/// averaged over its true size.
pub fn block_means<T: Scalar>(x: &Matrix<T>, block_size: usize) -> Result<RepresentativeSet<T>> {
    if block_size == 0 {
        return Err(Error::invalid("block_means", "block_size must be >= 1"));
    }
    let blocks = x.rows().div_ceil(block_size);
    let mut reps = Matrix::zeros(blocks, x.cols());
    for b in 0..blocks {
        let start = b * block_size;
        let end = ((b + 1) * block_size).min(x.rows());
        let count = T::from_usize(end - start).expect("block size fits the scalar type");
        let rep = reps.row_mut(b);
        for r in start..end {
            for (acc, &v) in rep.iter_mut().zip(x.row(r)) {
                *acc += v;
            }
        }
        for acc in rep.iter_mut() {
            *acc /= count;
        }
    }
    Ok(RepresentativeSet { reps })
}

/// Representative score matrix: scaled dot products of query-block and
/// key-block means. Scaling by `1/sqrt(head_dim)` does not change the top-n
/// selection but keeps entries comparable to true score magnitudes.
pub fn score_blocks<T: Scalar>(
    q_reps: &RepresentativeSet<T>,
    k_reps: &RepresentativeSet<T>,
    head_dim: usize,
) -> Result<Matrix<T>> {
    if q_reps.reps.cols() != k_reps.reps.cols() {
        return Err(Error::invalid(
            "score_blocks",
            format!(
                "representative widths differ: {} vs {}",
                q_reps.reps.cols(),
                k_reps.reps.cols()
            ),
        ));
    }
    let scale = T::from_f64_lossy(AttentionScale::for_head_dim(head_dim)?.inv_sqrt_d());
    let t_q = q_reps.block_count();
    let t_k = k_reps.block_count();
    let mut out = Matrix::zeros(t_q, t_k);
    for i in 0..t_q {
        let qi = q_reps.reps.row(i);
        for j in 0..t_k {
            let dot: T = qi.iter().zip(k_reps.reps.row(j)).map(|(&a, &b)| a * b).sum();
            out.set(i, j, dot * scale);
        }
    }
    Ok(out)
}

/// How many key blocks each query block keeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparsityConfig {
    /// Fraction of block-pair work to skip, in `[0, 1)`.
    TargetSparsity(f64),
    /// Keep exactly this many key blocks per query block.
    TopN(usize),
}

impl SparsityConfig {
    pub fn top_n(&self, t_k: usize) -> Result<usize> {
        match *self {
            SparsityConfig::TargetSparsity(rho) => sparsity_to_n(rho, t_k),
            SparsityConfig::TopN(n) => {
                if n == 0 || n > t_k {
                    Err(Error::invalid(
                        "SparsityConfig::top_n",
                        format!("top_n must be in [1, {t_k}], got {n}"),
                    ))
                } else {
                    Ok(n)
                }
            }
        }
    }
}

/// Maps a target sparsity to a kept-block count: `max(1, round((1-rho)*t_k))`
/// with half-away-from-zero rounding. Clamping to 1 keeps every mask row
/// non-empty.
pub fn sparsity_to_n(rho: f64, t_k: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(
            "sparsity_to_n",
            format!("target sparsity must be in [0, 1), got {rho}"),
        ));
    }
    if t_k == 0 {
        return Err(Error::invalid("sparsity_to_n", "t_k must be >= 1"));
    }
    let n = ((1.0 - rho) * t_k as f64).round() as usize;
    Ok(n.clamp(1, t_k))
}

/// Keeps, per row of `block_scores`, the `n` largest entries; ties break
/// toward the lower column index so runs are reproducible everywhere.
pub fn predict_mask<T: Scalar>(
    block_scores: &Matrix<T>,
    config: &SparsityConfig,
) -> Result<BlockMask> {
    let t_q = block_scores.rows();
    let t_k = block_scores.cols();
    let n = config.top_n(t_k)?;
    let mut mask = BlockMask::from_fn(t_q, t_k, |_, _| false);
    let mut order: Vec<usize> = (0..t_k).collect();
    for i in 0..t_q {
        let row = block_scores.row(i);
        for (pos, slot) in order.iter_mut().enumerate() {
            *slot = pos;
        }
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(&b))
        });
        for &j in &order[..n] {
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}

/// Seeded baseline mask with exactly `n` random key blocks per row; used to
/// sanity-check the predictor against chance.
pub fn random_mask(t_q: usize, t_k: usize, n: usize, seed: u64) -> Result<BlockMask> {
    if n == 0 || n > t_k {
        return Err(Error::invalid(
            "random_mask",
            format!("n must be in [1, {t_k}], got {n}"),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mask = BlockMask::from_fn(t_q, t_k, |_, _| false);
    for i in 0..t_q {
        for j in rand::seq::index::sample(&mut rng, t_k, n) {
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a mask to `path` in RFM1 format.
pub fn save_mask(mask: &BlockMask, path: &Path) -> Result<()> {
    let count = mask.t_q * mask.t_k;
    let mut buf = Vec::with_capacity(RFM1_HEADER_LEN + count.div_ceil(8));
    buf.extend_from_slice(&RFM1_MAGIC);
    buf.extend_from_slice(&(mask.t_q as u64).to_le_bytes());
    buf.extend_from_slice(&(mask.t_k as u64).to_le_bytes());
    let mut packed = vec![0u8; count.div_ceil(8)];
    for (idx, &bit) in mask.bits.iter().enumerate() {
        if bit {
            packed[idx / 8] |= 1 << (idx % 8);
        }
    }
    buf.extend_from_slice(&packed);
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

/// Loads an RFM1 mask. Row contents are not checked here: a mask with empty
/// rows loads fine and is rejected later by the kernels that require
/// non-empty rows.
pub fn load_mask(path: &Path) -> Result<BlockMask> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < RFM1_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: RFM1_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != RFM1_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&RFM1_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let t_q = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let t_k = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if t_q == 0 || t_k == 0 {
        return Err(Error::BadDims {
            path: path.to_path_buf(),
            rows: t_q,
            cols: t_k,
            why: "zero dimension",
        });
    }
    let count = usize::try_from(t_q)
        .ok()
        .and_then(|q| usize::try_from(t_k).ok().and_then(|k| q.checked_mul(k)))
        .ok_or(Error::BadDims {
            path: path.to_path_buf(),
            rows: t_q,
            cols: t_k,
            why: "element count overflows",
        })?;
    let payload = count.div_ceil(8);
    let body = &bytes[RFM1_HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: RFM1_HEADER_LEN + payload,
            found: bytes.len(),
        });
    }
    if body.len() > payload {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            extra: body.len() - payload,
        });
    }
    let bits = (0..count)
        .map(|idx| body[idx / 8] & (1 << (idx % 8)) != 0)
        .collect();
    Ok(BlockMask {
        t_q: t_q as usize,
        t_k: t_k as usize,
        bits,
    })
}
