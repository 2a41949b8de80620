//! Random frame masking for subsequence sampling.
//!
//! A mask selects `f - x` of the `f` frames of a sequence; the `x` dropped
//! positions are drawn uniformly without replacement, independently per
//! sequence and per sampling index.

use rand::Rng;

use crate::error::{Error, Result};

/// Binary frame-selection mask for one subsequence sampling.
///
/// Invariant: exactly `f - x` bits are set, with `0 <= x < f`, so at least
/// one frame always survives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    bits: Vec<bool>,
    zeros: usize,
    sampling: usize,
}

impl MaskVector {
    /// Wraps an explicit bit vector, validating the mask invariant.
    pub fn new(bits: Vec<bool>, sampling: usize) -> Result<Self> {
        let f = bits.len();
        let kept = bits.iter().filter(|&&b| b).count();
        if f == 0 || kept == 0 {
            return Err(Error::InvalidArgument(
                "mask must keep at least one frame".into(),
            ));
        }
        Ok(MaskVector {
            bits,
            zeros: f - kept,
            sampling,
        })
    }

    /// The unmasked sampling used at evaluation time (and by the no-mask
    /// degenerate training configuration).
    pub fn all_ones(f: usize, sampling: usize) -> Self {
        MaskVector {
            bits: vec![true; f],
            zeros: 0,
            sampling,
        }
    }

    /// Sequence length `f`.
    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of zero-masked positions `x`.
    #[inline]
    pub fn zeros(&self) -> usize {
        self.zeros
    }

    /// Number of surviving frames `f - x`.
    #[inline]
    pub fn kept(&self) -> usize {
        self.bits.len() - self.zeros
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Sampling index `i` in `0..q`.
    #[inline]
    pub fn sampling(&self) -> usize {
        self.sampling
    }

    /// Indices of surviving frames, ascending.
    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
    }
}

/// Draws `q` masks of length `f`, each dropping exactly `x` positions chosen
/// uniformly without replacement. Deterministic given the rng state; `x = 0`
/// consumes no randomness and yields all-ones masks.
pub fn sample_masks(f: usize, x: usize, q: usize, rng: &mut impl Rng) -> Result<Vec<MaskVector>> {
    if x >= f {
        return Err(Error::InvalidArgument(format!(
            "masks x={x} must be < sequence length f={f} (pooled denominator would be <= 0)"
        )));
    }
    if q < 1 {
        return Err(Error::InvalidArgument("samplings q must be >= 1".into()));
    }
    let mut masks = Vec::with_capacity(q);
    for i in 0..q {
        let mut bits = vec![true; f];
        // Partial Fisher-Yates over the position pool: the first x entries
        // after x swap steps are a uniform sample without replacement.
        let mut pool: Vec<usize> = (0..f).collect();
        for j in 0..x {
            let r = rng.gen_range(j..f);
            pool.swap(j, r);
            bits[pool[j]] = false;
        }
        masks.push(MaskVector {
            bits,
            zeros: x,
            sampling: i,
        });
    }
    Ok(masks)
}
