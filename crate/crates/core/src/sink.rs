//! First-frame sink: forced dense attention for frame-zero tokens, plus the
//! relocation that moves those tokens to the end of the sequence.
//!
//! Analogous to the attention-sink effect in language models, the first
//! frame of a video carries outsized influence, so every query block holding
//! a frame-zero token attends densely and every key block holding one is
//! attended by everyone. The mask is block-granular, so a block that only
//! partially overlaps frame zero is forced dense in its entirety; that
//! over-approximation only adds compute, never removes coverage.

use crate::error::{Error, Result};
use crate::flash::BlockingSpec;
use crate::mask::BlockMask;
use crate::permute::{PermutationMap, VideoLayout};

/// Identifies the sequence positions currently holding frame-zero tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SinkSpec {
    n_tokens: usize,
    frame0_positions: Vec<usize>,
}

impl SinkSpec {
    /// Frame-zero positions under the default `[frames, height, width]`
    /// order: the leading `height * width` tokens.
    pub fn for_default_order(layout: &VideoLayout) -> Self {
        Self {
            n_tokens: layout.tokens(),
            frame0_positions: (0..layout.height() * layout.width()).collect(),
        }
    }

    /// Frame-zero positions after reordering tokens by `map`.
    pub fn for_token_order(layout: &VideoLayout, map: &PermutationMap) -> Result<Self> {
        if map.len() != layout.tokens() {
            return Err(Error::invalid(
                "SinkSpec::for_token_order",
                format!(
                    "layout has {} tokens but map has length {}",
                    layout.tokens(),
                    map.len()
                ),
            ));
        }
        Ok(Self {
            n_tokens: layout.tokens(),
            frame0_positions: (0..layout.height() * layout.width())
                .map(|t| map.new_position(t))
                .collect(),
        })
    }

    pub fn positions(&self) -> &[usize] {
        &self.frame0_positions
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }
}

/// Forces rows of query blocks containing frame-zero tokens, and columns of
/// key blocks containing them, to all ones. Never clears a bit, so applying
/// it twice equals applying it once.
pub fn apply_first_frame_sink(
    mask: &BlockMask,
    sink: &SinkSpec,
    blocking: &BlockingSpec,
) -> Result<BlockMask> {
    if blocking.n_queries() != sink.n_tokens || blocking.n_keys() != sink.n_tokens {
        return Err(Error::invalid(
            "apply_first_frame_sink",
            format!(
                "sink covers {} tokens but blocking is {}x{}",
                sink.n_tokens,
                blocking.n_queries(),
                blocking.n_keys()
            ),
        ));
    }
    if mask.query_blocks() != blocking.query_blocks() || mask.key_blocks() != blocking.key_blocks()
    {
        return Err(Error::invalid(
            "apply_first_frame_sink",
            format!(
                "mask is {}x{} but blocking has {}x{} blocks",
                mask.query_blocks(),
                mask.key_blocks(),
                blocking.query_blocks(),
                blocking.key_blocks()
            ),
        ));
    }
    let mut forced_rows = vec![false; blocking.query_blocks()];
    let mut forced_cols = vec![false; blocking.key_blocks()];
    for &pos in sink.positions() {
        forced_rows[blocking.query_block_of(pos)] = true;
        forced_cols[blocking.key_block_of(pos)] = true;
    }
    Ok(BlockMask::from_fn(
        mask.query_blocks(),
        mask.key_blocks(),
        |i, j| mask.get(i, j) || forced_rows[i] || forced_cols[j],
    ))
}

/// A relocation permutation plus a flag noting when it degenerated to the
/// identity because the layout has a single frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelocationMap {
    pub map: PermutationMap,
    pub identity_fallback: bool,
}

/// Moves frame-zero tokens to the end of the sequence, preserving relative
/// order on both sides. With one frame there is nothing to relocate and the
/// identity is returned with `identity_fallback` set.
pub fn build_relocation(layout: &VideoLayout) -> RelocationMap {
    let n = layout.tokens();
    if layout.frames() < 2 {
        return RelocationMap {
            map: PermutationMap::identity(n),
            identity_fallback: true,
        };
    }
    let frame_tokens = layout.height() * layout.width();
    let mut forward = Vec::with_capacity(n);
    forward.extend(frame_tokens..n);
    forward.extend(0..frame_tokens);
    RelocationMap {
        map: PermutationMap::from_forward(forward).expect("valid by construction"),
        identity_fallback: false,
    }
}
