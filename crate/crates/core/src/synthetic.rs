//! Deterministic synthetic token generation with tunable 3D correlation.
//!
//! Each channel is a mix of white noise and a Gaussian-blurred noise field
//! over the `(frames, height, width)` grid. The blur radius grows with
//! `smoothness`, so 3D-adjacent tokens become increasingly similar;
//! `smoothness = 0` degenerates to i.i.d. Gaussian tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::permute::VideoLayout;
use crate::scalar::Scalar;

/// Parameters for one deterministic Q/K/V triple.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub layout: VideoLayout,
    pub head_dim: usize,
    /// In `[0, 1]`; larger values increase adjacent-token similarity.
    pub smoothness: f64,
}

/// Per-channel token standard deviation. Attention scores scale with the
/// squared token amplitude (independent of head_dim), so this sets the score
/// spread to ~N(0, 4): concentrated enough that a minority of tokens
/// dominates each softmax row, as in real attention, while staying well
/// inside the +-80 pre-softmax range that f32 kernels must tolerate.
const TOKEN_SCALE: f64 = 2.0;

/// Generates Q, K, V, each `layout.tokens() x head_dim`. Deterministic for a
/// fixed spec; Q, K and V draw from independent streams of the same seed.
pub fn generate_synthetic_qkv<T: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    if spec.head_dim == 0 {
        return Err(Error::invalid(
            "generate_synthetic_qkv",
            "head_dim must be >= 1",
        ));
    }
    if !(0.0..=1.0).contains(&spec.smoothness) {
        return Err(Error::invalid(
            "generate_synthetic_qkv",
            format!("smoothness must be in [0, 1], got {}", spec.smoothness),
        ));
    }
    Ok((
        generate_matrix(spec, 0),
        generate_matrix(spec, 1),
        generate_matrix(spec, 2),
    ))
}

fn generate_matrix<T: Scalar>(spec: &SyntheticSpec, stream: u64) -> Matrix<T> {
    let n = spec.layout.tokens();
    let d = spec.head_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut data = vec![T::zero(); n * d];
    if spec.smoothness == 0.0 {
        for c in 0..d {
            for t in 0..n {
                let v: f64 = rng.sample(StandardNormal);
                data[t * d + c] = T::from_f64_lossy(TOKEN_SCALE * v);
            }
        }
    } else {
        let sigma = 3.0 * spec.smoothness;
        let weights = gaussian_weights(sigma);
        for c in 0..d {
            let field = sample_field(&mut rng, n);
            let white = sample_field(&mut rng, n);
            let smooth = normalized(gaussian_blur_3d(&field, &spec.layout, &weights));
            for t in 0..n {
                let v = spec.smoothness * smooth[t] + (1.0 - spec.smoothness) * white[t];
                data[t * d + c] = T::from_f64_lossy(TOKEN_SCALE * v);
            }
        }
    }
    Matrix::from_vec(n, d, data).expect("validated dimensions")
}

fn sample_field(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as usize;
    (0..=2 * half)
        .map(|i| {
            let k = i as f64 - half as f64;
            (-k * k / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Separable truncated-Gaussian blur along each grid axis, with the kernel
/// renormalized over in-bounds taps at the boundaries.
fn gaussian_blur_3d(field: &[f64], layout: &VideoLayout, weights: &[f64]) -> Vec<f64> {
    let (frames, height, width) = (layout.frames(), layout.height(), layout.width());
    let mut a = field.to_vec();
    let mut b = vec![0.0f64; field.len()];

    // width axis: contiguous lines
    let w_lines: Vec<usize> = (0..frames * height).map(|i| i * width).collect();
    blur_lines(&a, &mut b, width, 1, &w_lines, weights);
    std::mem::swap(&mut a, &mut b);

    // height axis
    let mut h_lines = Vec::with_capacity(frames * width);
    for f in 0..frames {
        for w in 0..width {
            h_lines.push(f * height * width + w);
        }
    }
    blur_lines(&a, &mut b, height, width, &h_lines, weights);
    std::mem::swap(&mut a, &mut b);

    // frame axis
    let mut f_lines = Vec::with_capacity(height * width);
    for h in 0..height {
        for w in 0..width {
            f_lines.push(h * width + w);
        }
    }
    blur_lines(&a, &mut b, frames, height * width, &f_lines, weights);
    b
}

fn blur_lines(
    src: &[f64],
    dst: &mut [f64],
    axis_len: usize,
    stride: usize,
    line_starts: &[usize],
    weights: &[f64],
) {
    let half = weights.len() / 2;
    for &base in line_starts {
        for i in 0..axis_len {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(axis_len - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for j in lo..=hi {
                let w = weights[j + half - i];
                acc += w * src[base + j * stride];
                wsum += w;
            }
            dst[base + i * stride] = acc / wsum;
        }
    }
}

/// Rescales a field to zero mean and unit variance so the blur does not
/// shrink token magnitudes relative to the white-noise component.
fn normalized(mut field: Vec<f64>) -> Vec<f64> {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-9);
    for v in &mut field {
        *v = (*v - mean) / std;
    }
    field
}
