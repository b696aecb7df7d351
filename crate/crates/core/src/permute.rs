//! Spatiotemporal window reordering of flattened token sequences.
//!
//! Video latents arrive flattened in `[frames, height, width]` raster order,
//! which scatters 3D neighbours across the 1D sequence. The window
//! permutation regroups the sequence so that each small 3D window (2D when
//! `frames == 1`) becomes a contiguous run of tokens: windows are enumerated
//! in raster order over the window grid (frame-major, then height, then
//! width) and each window is flattened in local `(f, h, w)` raster order.
//! Boundary windows are ragged, never padded, so the result is a bijection
//! on exactly `n` tokens.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Latent grid of a video (or image, with `frames == 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoLayout {
    frames: usize,
    height: usize,
    width: usize,
}

impl VideoLayout {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self> {
        for (name, v) in [("frames", frames), ("height", height), ("width", width)] {
            if v == 0 {
                return Err(Error::invalid(
                    "VideoLayout::new",
                    format!("{name} must be >= 1, got 0"),
                ));
            }
        }
        Ok(Self {
            frames,
            height,
            width,
        })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Total token count `frames * height * width`.
    #[inline]
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    /// Flat sequence position of grid cell `(f, h, w)` in default order.
    #[inline]
    pub fn flat_index(&self, f: usize, h: usize, w: usize) -> usize {
        (f * self.height + h) * self.width + w
    }
}

/// Per-axis window extents, in tokens. An image window is `(1, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    frames: usize,
    height: usize,
    width: usize,
}

impl WindowSpec {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self> {
        for (name, v) in [
            ("window_f", frames),
            ("window_h", height),
            ("window_w", width),
        ] {
            if v == 0 {
                return Err(Error::invalid(
                    "WindowSpec::new",
                    format!("{name} must be >= 1, got 0"),
                ));
            }
        }
        Ok(Self {
            frames,
            height,
            width,
        })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn validate_for(&self, layout: &VideoLayout) -> Result<()> {
        let checks = [
            ("window_f", self.frames, layout.frames()),
            ("window_h", self.height, layout.height()),
            ("window_w", self.width, layout.width()),
        ];
        for (name, window, extent) in checks {
            if window > extent {
                return Err(Error::invalid(
                    "WindowSpec::validate_for",
                    format!("{name} ({window}) exceeds the layout extent ({extent})"),
                ));
            }
        }
        Ok(())
    }

    /// Shrinks each window extent to fit the layout.
    pub fn clipped_to(&self, layout: &VideoLayout) -> WindowSpec {
        WindowSpec {
            frames: self.frames.min(layout.frames()),
            height: self.height.min(layout.height()),
            width: self.width.min(layout.width()),
        }
    }
}

/// Bijective token reindexing. `forward[new] = old` and `inverse[old] = new`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationMap {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationMap {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    /// Builds a map from its forward array, validating bijectivity.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (new_pos, &old_pos) in forward.iter().enumerate() {
            if old_pos >= n {
                return Err(Error::invalid(
                    "PermutationMap::from_forward",
                    format!("index {old_pos} out of range for length {n}"),
                ));
            }
            if inverse[old_pos] != usize::MAX {
                return Err(Error::invalid(
                    "PermutationMap::from_forward",
                    format!("index {old_pos} appears more than once"),
                ));
            }
            inverse[old_pos] = new_pos;
        }
        Ok(Self { forward, inverse })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// New-position-to-old-position array.
    #[inline]
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// Old-position-to-new-position array.
    #[inline]
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Position a token at `old` moves to.
    #[inline]
    pub fn new_position(&self, old: usize) -> usize {
        self.inverse[old]
    }

    /// Returns the inverse permutation (forward and inverse roles swapped).
    pub fn invert(&self) -> PermutationMap {
        PermutationMap {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }
}

/// Builds the window-contiguous reorder of `layout` under `window`.
pub fn build_window_permutation(
    layout: &VideoLayout,
    window: &WindowSpec,
) -> Result<PermutationMap> {
    window.validate_for(layout)?;
    let (frames, height, width) = (layout.frames(), layout.height(), layout.width());
    let mut forward = Vec::with_capacity(layout.tokens());
    for f0 in (0..frames).step_by(window.frames()) {
        for h0 in (0..height).step_by(window.height()) {
            for w0 in (0..width).step_by(window.width()) {
                for f in f0..(f0 + window.frames()).min(frames) {
                    for h in h0..(h0 + window.height()).min(height) {
                        for w in w0..(w0 + window.width()).min(width) {
                            forward.push(layout.flat_index(f, h, w));
                        }
                    }
                }
            }
        }
    }
    PermutationMap::from_forward(forward)
}

/// Reorders rows of `x`: output row `r` is input row `forward[r]`.
pub fn apply_permutation<T: Scalar>(x: &Matrix<T>, map: &PermutationMap) -> Result<Matrix<T>> {
    if x.rows() != map.len() {
        return Err(Error::invalid(
            "apply_permutation",
            format!("matrix has {} rows but map has length {}", x.rows(), map.len()),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (new_pos, &old_pos) in map.forward().iter().enumerate() {
        out.row_mut(new_pos).copy_from_slice(x.row(old_pos));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_is_identity() {
        let layout = VideoLayout::new(1, 1, 6).unwrap();
        let window = WindowSpec::new(1, 1, 6).unwrap();
        let map = build_window_permutation(&layout, &window).unwrap();
        assert!(map.is_identity());

        let layout = VideoLayout::new(1, 2, 2).unwrap();
        let window = WindowSpec::new(1, 2, 2).unwrap();
        let map = build_window_permutation(&layout, &window).unwrap();
        assert!(map.is_identity());
    }

    #[test]
    fn temporal_column_windows() {
        // 2x2x2 grid, window (2,1,1): windows are temporal columns, so the
        // new order interleaves the two frames per spatial site.
        let layout = VideoLayout::new(2, 2, 2).unwrap();
        let window = WindowSpec::new(2, 1, 1).unwrap();
        let map = build_window_permutation(&layout, &window).unwrap();
        assert_eq!(map.forward(), &[0, 4, 1, 5, 2, 6, 3, 7]);
    }

    #[test]
    fn window_exceeding_layout_errors() {
        let layout = VideoLayout::new(1, 2, 2).unwrap();
        let window = WindowSpec::new(1, 3, 1).unwrap();
        let err = build_window_permutation(&layout, &window).unwrap_err();
        assert!(err.to_string().contains("window_h"));
    }

    #[test]
    fn apply_and_inverse_restore_rows() {
        let x = Matrix::from_vec(3, 2, vec![0.0f32, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap();
        let map = PermutationMap::from_forward(vec![2, 0, 1]).unwrap();
        let permuted = apply_permutation(&x, &map).unwrap();
        assert_eq!(permuted.row(0), &[20.0, 21.0]);
        assert_eq!(permuted.row(1), &[0.0, 1.0]);
        assert_eq!(permuted.row(2), &[10.0, 11.0]);
        let restored = apply_permutation(&permuted, &map.invert()).unwrap();
        assert_eq!(restored, x);
    }

    #[test]
    fn invert_examples() {
        let p = PermutationMap::from_forward(vec![2, 0, 1]).unwrap();
        assert_eq!(p.invert().forward(), &[1, 2, 0]);
        assert_eq!(p.invert().invert(), p);
        let id = PermutationMap::identity(5);
        assert_eq!(id.invert(), id);
    }

    #[test]
    fn from_forward_rejects_non_bijections() {
        assert!(PermutationMap::from_forward(vec![0, 0]).is_err());
        assert!(PermutationMap::from_forward(vec![0, 2]).is_err());
    }

    #[test]
    fn apply_length_mismatch_errors() {
        let x = Matrix::from_vec(2, 1, vec![1.0f32, 2.0]).unwrap();
        let map = PermutationMap::identity(3);
        assert!(apply_permutation(&x, &map).is_err());
    }

    #[test]
    fn zero_layout_dimension_errors() {
        assert!(VideoLayout::new(0, 1, 1).is_err());
        assert!(VideoLayout::new(1, 0, 1).is_err());
        assert!(VideoLayout::new(1, 1, 0).is_err());
    }
}
