//! Synthetic identity-separable gait data for desk-scale verification.
//!
//! Each identity gets fixed anthropometric offsets (per-coordinate base
//! positions) plus per-coordinate sinusoid gait parameters. A sequence is
//! `base + amplitude * sin(freq * (t + offset) + phase) + noise`, where
//! `offset` is a per-sequence integer time shift, so two noiseless sequences
//! of one identity are the same trajectory sampled at shifted times.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::{Dataset, SkeletonSequence, Split};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub sequences_per_identity: usize,
    /// Joint count J; each frame has K = 3J coordinates.
    pub joints: usize,
    /// Frames per sequence.
    pub seq_len: usize,
    /// Std-dev of i.i.d. Gaussian noise added to every coordinate.
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::InvalidArgument(
                "num_identities must be >= 2".into(),
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        if self.sequences_per_identity < 1 || self.joints < 1 || self.seq_len < 1 {
            return Err(Error::InvalidArgument(
                "sequences_per_identity, joints, and seq_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

// Gait parameter ranges. Amplitudes are kept well below the unit base-offset
// scale so that noiseless identities stay separable in raw coordinates.
const AMP_RANGE: (f64, f64) = (0.2, 0.5);
const FREQ_RANGE: (f64, f64) = (0.6, 1.4);
const MAX_TIME_OFFSET: usize = 16;

struct IdentityModel {
    base: Vec<f64>,
    amp: Vec<f64>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

/// Generates a deterministic synthetic dataset. Sequences of each identity
/// are split 50/25/25 into train/probe/gallery in generation order.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let k = cfg.joints * 3;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut train = Vec::new();
    let mut probe = Vec::new();
    let mut gallery = Vec::new();

    let per_id = cfg.sequences_per_identity;
    let n_train = per_id / 2;
    let n_probe = (per_id - n_train) / 2;

    for id in 0..cfg.num_identities {
        let model = IdentityModel {
            base: (0..k).map(|_| normal.sample(&mut rng)).collect(),
            amp: (0..k).map(|_| rng.gen_range(AMP_RANGE.0..AMP_RANGE.1)).collect(),
            freq: (0..k)
                .map(|_| rng.gen_range(FREQ_RANGE.0..FREQ_RANGE.1))
                .collect(),
            phase: (0..k)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect(),
        };
        for s in 0..per_id {
            let offset = rng.gen_range(0..MAX_TIME_OFFSET);
            let mut data = Vec::with_capacity(cfg.seq_len * k);
            for t in 0..cfg.seq_len {
                let time = (t + offset) as f64;
                for c in 0..k {
                    let gait = model.amp[c] * (model.freq[c] * time + model.phase[c]).sin();
                    let noise = cfg.noise_std * normal.sample(&mut rng);
                    data.push(model.base[c] + gait + noise);
                }
            }
            let split = if s < n_train {
                Split::Train
            } else if s < n_train + n_probe {
                Split::Probe
            } else {
                Split::Gallery
            };
            let seq = SkeletonSequence::new(
                format!("id{id}_s{s}"),
                Mat::from_vec(cfg.seq_len, k, data),
                Some(id as u32),
                split,
            )?;
            match split {
                Split::Train => train.push(seq),
                Split::Probe => probe.push(seq),
                Split::Gallery => gallery.push(seq),
            }
        }
    }
    Dataset::new(train, probe, gallery)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            num_identities: 10,
            sequences_per_identity: 20,
            joints: 4,
            seq_len: 6,
            noise_std: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn counts_and_split_sizes() {
        let ds = generate_synthetic(&cfg()).unwrap();
        assert_eq!(ds.train.len(), 100);
        assert_eq!(ds.probe.len(), 50);
        assert_eq!(ds.gallery.len(), 50);
        assert_eq!(ds.feature_dim(), 12);
        assert_eq!(ds.seq_len(), 6);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&cfg()).unwrap();
        let b = generate_synthetic(&cfg()).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x, y);
        }
        for (x, y) in a.probe.iter().zip(&b.probe) {
            assert_eq!(x, y);
        }
    }

    // Noiseless sequences of one identity are the same trajectory at shifted
    // times: overlapping frames must agree bit-for-bit.
    #[test]
    fn noiseless_sequences_agree_up_to_phase_offset() {
        let mut c = cfg();
        c.seq_len = 24; // long enough that offsets (< 16) always overlap
        let ds = generate_synthetic(&c).unwrap();
        let a = &ds.train[0];
        let b = &ds.train[1];
        let f = c.seq_len;
        let mut matched = false;
        'outer: for shift in 0..f {
            // Try frames_a[t + shift] == frames_b[t] for all overlapping t.
            let mut all = true;
            for t in 0..f - shift {
                if a.frames().row(t + shift) != b.frames().row(t) {
                    all = false;
                    break;
                }
            }
            if all && f - shift >= 4 {
                matched = true;
                break 'outer;
            }
            let mut all = true;
            for t in 0..f - shift {
                if b.frames().row(t + shift) != a.frames().row(t) {
                    all = false;
                    break;
                }
            }
            if all && f - shift >= 4 {
                matched = true;
                break 'outer;
            }
        }
        assert!(matched, "no time shift aligned the two sequences");
    }

    // With distinct anthropometric offsets, intra-identity frame distances
    // stay strictly below inter-identity distances in the noiseless case.
    #[test]
    fn noiseless_identities_are_separable() {
        let mut c = cfg();
        c.num_identities = 5;
        c.sequences_per_identity = 4;
        let ds = generate_synthetic(&c).unwrap();
        let all: Vec<&SkeletonSequence> = ds
            .train
            .iter()
            .chain(&ds.probe)
            .chain(&ds.gallery)
            .collect();
        let dist = |a: &SkeletonSequence, b: &SkeletonSequence| -> f64 {
            a.frames()
                .data()
                .iter()
                .zip(b.frames().data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut max_intra: f64 = 0.0;
        let mut min_inter = f64::INFINITY;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d = dist(all[i], all[j]);
                if all[i].stored_identity() == all[j].stored_identity() {
                    max_intra = max_intra.max(d);
                } else {
                    min_inter = min_inter.min(d);
                }
            }
        }
        assert!(
            max_intra < min_inter,
            "max intra {max_intra} vs min inter {min_inter}"
        );
    }
}
