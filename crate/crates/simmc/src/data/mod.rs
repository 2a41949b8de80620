//! Skeleton sequences, dataset splits, stream windowing, and the raw-coordinate
//! baseline representation.
//!
//! Identity labels are stored on every sequence but the training path must
//! never read them. [`SkeletonSequence::identity`] counts reads on train-split
//! sequences in a thread-local guard so tests (and the trainer itself) can
//! assert that training stayed label-free.

mod io;
mod synth;

pub use io::{load_dataset, write_dataset, LoadStats, StreamSchema};
pub use synth::{generate_synthetic, SynthConfig};

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Which retrieval role a sequence plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Probe,
    Gallery,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Probe => "probe",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "probe" => Ok(Split::Probe),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Format(format!(
                "unknown split '{other}' (expected train, probe, or gallery)"
            ))),
        }
    }
}

thread_local! {
    static TRAIN_LABEL_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of identity reads performed on train-split sequences by this
/// thread. The trainer snapshots this before and after a run to enforce the
/// label-free guarantee.
pub fn train_label_reads() -> u64 {
    TRAIN_LABEL_READS.with(|c| c.get())
}

/// One fixed-length window of per-frame features: an `f x K` matrix of
/// 3D joint coordinates (`K = 3J`) or generic feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    seq_id: String,
    frames: Mat,
    identity: Option<u32>,
    split: Split,
}

impl SkeletonSequence {
    pub fn new(seq_id: String, frames: Mat, identity: Option<u32>, split: Split) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "sequence '{seq_id}': frames must be non-empty (got {}x{})",
                frames.rows(),
                frames.cols()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sequence '{seq_id}': frames contain non-finite values"
            )));
        }
        Ok(SkeletonSequence {
            seq_id,
            frames,
            identity,
            split,
        })
    }

    #[inline]
    pub fn seq_id(&self) -> &str {
        &self.seq_id
    }

    #[inline]
    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    /// Sequence length `f`.
    #[inline]
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// Per-frame feature width `K`.
    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.frames.cols()
    }

    #[inline]
    pub fn split(&self) -> Split {
        self.split
    }

    /// Identity label. Reading this on a train-split sequence is counted by
    /// the label guard; training code must not call it.
    pub fn identity(&self) -> Option<u32> {
        if self.split == Split::Train {
            TRAIN_LABEL_READS.with(|c| c.set(c.get() + 1));
        }
        self.identity
    }

    /// Identity access for serialization only; bypasses the label guard.
    pub(crate) fn stored_identity(&self) -> Option<u32> {
        self.identity
    }
}

/// Immutable train/probe/gallery collection with a shared frame geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SkeletonSequence>,
    pub probe: Vec<SkeletonSequence>,
    pub gallery: Vec<SkeletonSequence>,
    feature_dim: usize,
    seq_len: usize,
}

impl Dataset {
    /// Assembles a dataset, checking the shared `f`/`K` invariant and that
    /// probe and gallery sequences carry identities.
    pub fn new(
        train: Vec<SkeletonSequence>,
        probe: Vec<SkeletonSequence>,
        gallery: Vec<SkeletonSequence>,
    ) -> Result<Self> {
        let first = train
            .first()
            .or_else(|| probe.first())
            .or_else(|| gallery.first())
            .ok_or_else(|| Error::InvalidArgument("dataset has no sequences".into()))?;
        let (seq_len, feature_dim) = (first.len(), first.feature_dim());
        for seq in train.iter().chain(&probe).chain(&gallery) {
            if seq.len() != seq_len || seq.feature_dim() != feature_dim {
                return Err(Error::Format(format!(
                    "sequence '{}' has shape {}x{}, expected {}x{}",
                    seq.seq_id(),
                    seq.len(),
                    seq.feature_dim(),
                    seq_len,
                    feature_dim
                )));
            }
        }
        for seq in probe.iter().chain(&gallery) {
            if seq.stored_identity().is_none() {
                return Err(Error::Format(format!(
                    "{} sequence '{}' lacks an identity label",
                    seq.split().as_str(),
                    seq.seq_id()
                )));
            }
        }
        Ok(Dataset {
            train,
            probe,
            gallery,
            feature_dim,
            seq_len,
        })
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Probe identities that never occur in the gallery (evaluation excludes
    /// such probes with a warning count).
    pub fn unmatched_probe_identities(&self) -> usize {
        let gallery_ids: std::collections::BTreeSet<u32> = self
            .gallery
            .iter()
            .filter_map(|s| s.stored_identity())
            .collect();
        self.probe
            .iter()
            .filter(|s| {
                s.stored_identity()
                    .map(|id| !gallery_ids.contains(&id))
                    .unwrap_or(true)
            })
            .count()
    }
}

/// Cuts a raw stream of `len` frames into fixed windows. Returns the start
/// indices; frames past the last full window are dropped.
pub fn window_starts(len: usize, seq_len: usize, stride: usize) -> Vec<usize> {
    assert!(seq_len >= 1 && stride >= 1);
    if len < seq_len {
        return Vec::new();
    }
    (0..=(len - seq_len)).step_by(stride).collect()
}

/// The flattened `f * K` raw-coordinate vector used as the untrained ablation
/// baseline representation (row-major frame order).
pub fn baseline_representation(seq: &SkeletonSequence) -> Vec<f64> {
    seq.frames().data().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, frames: Mat, identity: Option<u32>, split: Split) -> SkeletonSequence {
        SkeletonSequence::new(id.to_string(), frames, identity, split).unwrap()
    }

    #[test]
    fn window_counts_match_enumeration() {
        // 12 frames, window 6, stride 6: exact division.
        assert_eq!(window_starts(12, 6, 6), vec![0, 6]);
        // 6 frames, window 6, stride 1: single window.
        assert_eq!(window_starts(6, 6, 1), vec![0]);
        // 13 frames, window 6, stride 3: starts 0,3,6; start 9 lacks 6 frames.
        assert_eq!(window_starts(13, 6, 3), vec![0, 3, 6]);
        // Short stream yields nothing.
        assert_eq!(window_starts(5, 6, 1), Vec::<usize>::new());
    }

    #[test]
    fn window_count_formula() {
        // floor((len - f) / stride) + 1 whenever len >= f.
        for len in 1..40usize {
            for f in 1..=len {
                for stride in 1..8usize {
                    let starts = window_starts(len, f, stride);
                    assert_eq!(starts.len(), (len - f) / stride + 1);
                    for &s in &starts {
                        assert!(s + f <= len, "window must not cross the stream end");
                    }
                }
            }
        }
    }

    #[test]
    fn baseline_flattens_row_major() {
        let s = seq(
            "a",
            Mat::from_rows(&[vec![1.0, 2.0, 3.0]]),
            Some(0),
            Split::Probe,
        );
        assert_eq!(baseline_representation(&s), vec![1.0, 2.0, 3.0]);

        let s2 = seq(
            "b",
            Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            Some(0),
            Split::Probe,
        );
        assert_eq!(baseline_representation(&s2), vec![1.0, 2.0, 3.0, 4.0]);

        let s3 = seq("c", Mat::zeros(5, 7), Some(0), Split::Gallery);
        assert_eq!(baseline_representation(&s3).len(), 35);
    }

    #[test]
    fn label_guard_counts_train_reads_only() {
        let before = train_label_reads();
        let train = seq("t", Mat::zeros(2, 2), Some(3), Split::Train);
        let probe = seq("p", Mat::zeros(2, 2), Some(3), Split::Probe);
        assert_eq!(probe.identity(), Some(3));
        assert_eq!(train_label_reads(), before);
        assert_eq!(train.identity(), Some(3));
        assert_eq!(train_label_reads(), before + 1);
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let a = seq("a", Mat::zeros(2, 2), Some(0), Split::Probe);
        let b = seq("b", Mat::zeros(3, 2), Some(0), Split::Gallery);
        assert!(Dataset::new(vec![], vec![a], vec![b]).is_err());
    }

    #[test]
    fn dataset_rejects_unlabeled_probe() {
        let a = seq("a", Mat::zeros(2, 2), None, Split::Probe);
        let b = seq("b", Mat::zeros(2, 2), Some(0), Split::Gallery);
        assert!(Dataset::new(vec![], vec![a], vec![b]).is_err());
    }
}
