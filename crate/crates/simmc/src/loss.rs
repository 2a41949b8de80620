//! Contrastive objectives and their exact gradients.
//!
//! The prototype loss treats every instance as a softmax classification over
//! its own sampling's prototypes (constants between clustering rounds); the
//! intra-sequence loss is a symmetric negative cosine between two samplings
//! of one sequence, with an alternating stop-gradient: each cosine term
//! back-propagates only into the projected operand, never into the raw
//! instance it is compared against.

use crate::cluster::PrototypeSet;
use crate::error::{Error, Result};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Softmax temperature for the prototype loss.
    pub tau: f64,
    /// Weights of the two cosine terms (defaults 0.5 each).
    pub alpha: f64,
    pub beta: f64,
    /// Mix: `total = lambda * mic + (1 - lambda) * mpc`.
    pub lambda: f64,
    /// L2-normalize instances before clustering and prototype dot products.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.08,
            alpha: 0.5,
            beta: 0.5,
            lambda: 0.5,
            normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.alpha + self.beta > 0.0) {
            return Err(Error::InvalidArgument(
                "alpha + beta must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Scalar loss components; `total` always satisfies the lambda mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mpc: f64,
    pub mic: f64,
    pub instance_count: usize,
}

/// Combines the two components: `total = lambda * mic + (1 - lambda) * mpc`.
pub fn combined_loss(mpc: f64, mic: f64, lambda: f64, instance_count: usize) -> LossValue {
    LossValue {
        total: lambda * mic + (1.0 - lambda) * mpc,
        mpc,
        mic,
        instance_count,
    }
}

/// `(unit, norm)`; a zero vector yields `(zeros, 0.0)`.
pub(crate) fn l2_normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (vec![0.0; v.len()], 0.0);
    }
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// One sampling's slice of a prototype-loss evaluation: live instance
/// vectors, their epoch-fixed cluster labels (`None` = noise, skipped), and
/// the epoch-fixed prototypes.
pub struct MpcInput<'a> {
    pub instances: &'a [Vec<f64>],
    pub labels: &'a [Option<usize>],
    pub prototypes: &'a PrototypeSet,
}

/// Result of [`mpc_loss`]; gradients follow the input layout.
pub struct MpcOutcome {
    pub loss: f64,
    /// d loss / d instance, per sampling then per instance (zeros for noise).
    pub d_instances: Vec<Vec<Vec<f64>>>,
    /// Number of clustered (non-noise) instances `N` in this evaluation.
    pub clustered: usize,
    /// True when every instance was noise; the caller skips the MPC step.
    pub all_noise: bool,
}

/// Mean over clustered instances of `-log softmax(v . p_c / tau)` against the
/// instance's own sampling's prototypes. Prototypes are constants under
/// differentiation; with `normalize` the dot products use `v / ||v||` and the
/// gradient passes through the normalization.
pub fn mpc_loss(inputs: &[MpcInput], tau: f64, normalize: bool) -> Result<MpcOutcome> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    let mut d_instances: Vec<Vec<Vec<f64>>> = Vec::with_capacity(inputs.len());
    let mut loss_sum = 0.0;
    let mut clustered = 0usize;
    for input in inputs {
        if input.instances.len() != input.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} instances with {} labels",
                input.instances.len(),
                input.labels.len()
            )));
        }
        let num_protos = input.prototypes.num_clusters();
        let mut d_set = Vec::with_capacity(input.instances.len());
        for (v, label) in input.instances.iter().zip(input.labels) {
            let dim = v.len();
            let c = match label {
                Some(c) if *c < num_protos => *c,
                Some(c) => {
                    return Err(Error::InvalidArgument(format!(
                        "label {c} out of range for {num_protos} prototypes"
                    )));
                }
                None => {
                    d_set.push(vec![0.0; dim]);
                    continue;
                }
            };
            clustered += 1;
            let (unit, norm) = if normalize {
                l2_normalize(v)
            } else {
                (v.clone(), 1.0)
            };
            // Stable log-softmax over the logits v . p_k / tau.
            let mut logits = Vec::with_capacity(num_protos);
            for p in &input.prototypes.prototypes {
                let dot: f64 = unit.iter().zip(p).map(|(a, b)| a * b).sum();
                logits.push(dot / tau);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            loss_sum += denom.ln() - (logits[c] - max);
            // d loss / d unit = sum_k (softmax_k - [k == c]) p_k / tau
            let mut d_unit = vec![0.0; dim];
            for (k, p) in input.prototypes.prototypes.iter().enumerate() {
                let softmax = (logits[k] - max).exp() / denom;
                let coeff = (softmax - if k == c { 1.0 } else { 0.0 }) / tau;
                for (acc, &pv) in d_unit.iter_mut().zip(p) {
                    *acc += coeff * pv;
                }
            }
            let d_v = if normalize {
                if norm == 0.0 {
                    vec![0.0; dim] // degenerate encoding; no direction to move
                } else {
                    // Through v/||v||: (g - (u . g) u) / ||v||
                    let proj: f64 = unit.iter().zip(&d_unit).map(|(u, g)| u * g).sum();
                    unit.iter()
                        .zip(&d_unit)
                        .map(|(u, g)| (g - proj * u) / norm)
                        .collect()
                }
            } else {
                d_unit
            };
            d_set.push(d_v);
        }
        d_instances.push(d_set);
    }
    if clustered == 0 {
        return Ok(MpcOutcome {
            loss: 0.0,
            d_instances,
            clustered: 0,
            all_noise: true,
        });
    }
    let inv = 1.0 / clustered as f64;
    for set in d_instances.iter_mut() {
        for d in set.iter_mut() {
            for g in d.iter_mut() {
                *g *= inv;
            }
        }
    }
    Ok(MpcOutcome {
        loss: loss_sum * inv,
        d_instances,
        clustered,
        all_noise: false,
    })
}

/// Result of a pairwise intra-sequence loss. The gradients on the raw
/// instances are identically zero: they are the stop-gradient operands.
pub struct MicPairOutcome {
    pub loss: f64,
    pub d_z_i: Vec<f64>,
    pub d_z_j: Vec<f64>,
    /// Always zero; kept so the stop-gradient cut is assertable.
    pub d_v_i: Vec<f64>,
    pub d_v_j: Vec<f64>,
    /// Cosine terms skipped because an operand had zero norm.
    pub degenerate_terms: usize,
}

/// `-alpha cos(z_i, v_j) - beta cos(z_j, v_i)` with `v_j` (resp. `v_i`) held
/// constant. A zero-norm operand makes that term 0 with zero gradient.
pub fn mic_loss(
    v_i: &[f64],
    v_j: &[f64],
    z_i: &[f64],
    z_j: &[f64],
    alpha: f64,
    beta: f64,
) -> MicPairOutcome {
    let dim = v_i.len();
    let mut out = MicPairOutcome {
        loss: 0.0,
        d_z_i: vec![0.0; dim],
        d_z_j: vec![0.0; dim],
        d_v_i: vec![0.0; dim],
        d_v_j: vec![0.0; dim],
        degenerate_terms: 0,
    };
    // One direction: -w * cos(z, stopgrad(v)), gradient only into z.
    let mut term = |z: &[f64], v: &[f64], weight: f64, d_z: &mut [f64]| {
        let (z_hat, z_norm) = l2_normalize(z);
        let (v_hat, v_norm) = l2_normalize(v);
        if z_norm == 0.0 || v_norm == 0.0 {
            out.degenerate_terms += 1;
            return 0.0;
        }
        let cos: f64 = z_hat.iter().zip(&v_hat).map(|(a, b)| a * b).sum();
        for ((acc, &vh), &zh) in d_z.iter_mut().zip(&v_hat).zip(&z_hat) {
            *acc += -weight * (vh - cos * zh) / z_norm;
        }
        -weight * cos
    };
    let mut loss = 0.0;
    loss += term(z_i, v_j, alpha, &mut out.d_z_i);
    loss += term(z_j, v_i, beta, &mut out.d_z_j);
    out.loss = loss;
    out
}

/// Multi-sampling intra-sequence loss for one sequence.
pub struct MicMultiOutcome {
    pub loss: f64,
    /// d loss / d z per sampling.
    pub d_z: Vec<Vec<f64>>,
    pub degenerate_terms: usize,
    /// False when q < 2 (the loss is disabled and contributes 0).
    pub enabled: bool,
}

/// For q = 2 this is exactly [`mic_loss`]; for q > 2 it is the mean over all
/// unordered sampling pairs. q < 2 disables the loss (zero contribution).
pub fn mic_loss_multi(
    instances: &[Vec<f64>],
    projections: &[Vec<f64>],
    alpha: f64,
    beta: f64,
) -> Result<MicMultiOutcome> {
    if instances.len() != projections.len() {
        return Err(Error::InvalidArgument(format!(
            "{} instances with {} projections",
            instances.len(),
            projections.len()
        )));
    }
    let q = instances.len();
    if q < 2 {
        return Ok(MicMultiOutcome {
            loss: 0.0,
            d_z: vec![vec![]; q],
            degenerate_terms: 0,
            enabled: false,
        });
    }
    let dim = instances[0].len();
    let mut d_z = vec![vec![0.0; dim]; q];
    let mut loss = 0.0;
    let mut degenerate = 0;
    let pairs = (q * (q - 1) / 2) as f64;
    for i in 0..q {
        for j in i + 1..q {
            let pair = mic_loss(
                &instances[i],
                &instances[j],
                &projections[i],
                &projections[j],
                alpha,
                beta,
            );
            loss += pair.loss;
            degenerate += pair.degenerate_terms;
            for (acc, g) in d_z[i].iter_mut().zip(&pair.d_z_i) {
                *acc += g / pairs;
            }
            for (acc, g) in d_z[j].iter_mut().zip(&pair.d_z_j) {
                *acc += g / pairs;
            }
        }
    }
    Ok(MicMultiOutcome {
        loss: loss / pairs,
        d_z,
        degenerate_terms: degenerate,
        enabled: true,
    })
}
