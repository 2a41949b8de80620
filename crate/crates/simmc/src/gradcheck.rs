//! Finite-difference verification of the combined objective's gradients.
//!
//! Builds a small random fixture (sequences, masks, prototypes, labels),
//! computes the analytic parameter gradients through the real batch path,
//! and compares every component against central differences of the loss.
//! The stop-gradient operands of the intra-sequence loss are frozen at the
//! unperturbed parameters during differencing, because the training gradient
//! is by construction the gradient of that partially-frozen functional.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::cluster::PrototypeSet;
use crate::data::{SkeletonSequence, Split};
use crate::encoder::{forward_tape, Gradients, ModelParams};
use crate::error::Result;
use crate::loss::{l2_normalize, LossConfig};
use crate::mask::{sample_masks, MaskVector};
use crate::mat::Mat;
use crate::train::batch_step;

/// Fixture dimensions and tolerances for one gradient check.
#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub masks_x: usize,
    pub samplings_q: usize,
    pub batch: usize,
    pub prototypes_per_sampling: usize,
    pub loss: LossConfig,
    pub bias: bool,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            input_dim: 6,
            hidden: 5,
            seq_len: 4,
            masks_x: 1,
            samplings_q: 2,
            batch: 8,
            prototypes_per_sampling: 3,
            loss: LossConfig::default(),
            bias: false,
            seed: 7,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Per-tensor comparison outcome.
#[derive(Debug, Clone)]
pub struct MatrixCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
}

/// Full report; `passed` means every tensor stayed under the tolerance.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub checks: Vec<MatrixCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn record_lines(&self) -> String {
        let mut out = String::new();
        for check in &self.checks {
            out.push_str(&format!(
                "record=gradcheck tensor={} max_rel_err={:.3e} max_abs_grad={:.3e} pass={}\n",
                check.name,
                check.max_rel_err,
                check.max_abs_analytic,
                check.max_rel_err < self.tolerance
            ));
        }
        out.push_str(&format!(
            "record=gradcheck_summary tolerance={:.1e} passed={}\n",
            self.tolerance, self.passed
        ));
        out
    }
}

struct Fixture {
    params: ModelParams,
    seqs: Vec<SkeletonSequence>,
    masks: Vec<Vec<MaskVector>>,
    labels: Vec<Vec<Option<usize>>>,
    prototypes: Vec<PrototypeSet>,
    loss: LossConfig,
}

fn build_fixture(cfg: &GradcheckConfig) -> Result<Fixture> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(cfg.hidden, cfg.input_dim, cfg.bias, &mut rng)?;
    let mut seqs = Vec::with_capacity(cfg.batch);
    for b in 0..cfg.batch {
        let mut frames = Mat::zeros(cfg.seq_len, cfg.input_dim);
        for v in frames.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        seqs.push(SkeletonSequence::new(
            format!("gradcheck{b}"),
            frames,
            None,
            Split::Train,
        )?);
    }
    let mut masks = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        masks.push(sample_masks(
            cfg.seq_len,
            cfg.masks_x,
            cfg.samplings_q,
            &mut rng,
        )?);
    }
    // Epoch-fixed pseudo-labels and prototypes: random unit prototypes, a
    // random cluster per instance with occasional noise.
    let mut prototypes = Vec::with_capacity(cfg.samplings_q);
    let mut labels = Vec::with_capacity(cfg.samplings_q);
    for i in 0..cfg.samplings_q {
        let protos: Vec<Vec<f64>> = (0..cfg.prototypes_per_sampling)
            .map(|_| {
                let raw: Vec<f64> = (0..cfg.hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&raw).0
            })
            .collect();
        prototypes.push(PrototypeSet {
            sampling_index: i,
            prototypes: protos,
            member_counts: vec![1; cfg.prototypes_per_sampling],
        });
        let mut set_labels: Vec<Option<usize>> = (0..cfg.batch)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    None // noise instances take no prototype term
                } else {
                    Some(rng.gen_range(0..cfg.prototypes_per_sampling))
                }
            })
            .collect();
        if i == 0 {
            set_labels[0] = Some(0); // keep at least one clustered instance
        }
        labels.push(set_labels);
    }
    Ok(Fixture {
        params,
        seqs,
        masks,
        labels,
        prototypes,
        loss: cfg.loss,
    })
}

fn combined(fix: &Fixture, params: &ModelParams, frozen: Option<&[Vec<Vec<f64>>]>) -> Result<f64> {
    let seqs: Vec<&SkeletonSequence> = fix.seqs.iter().collect();
    let masks: Vec<&[MaskVector]> = fix.masks.iter().map(|m| m.as_slice()).collect();
    let eval = batch_step(
        params,
        &seqs,
        &masks,
        &fix.labels,
        &fix.prototypes,
        &fix.loss,
        frozen,
    )?;
    Ok(fix.loss.lambda * eval.mic + (1.0 - fix.loss.lambda) * eval.mpc)
}

/// Runs the comparison; `corrupt` deliberately perturbs one analytic gradient
/// entry (the negative-control hook used to prove the harness can fail).
pub fn run_gradcheck(cfg: &GradcheckConfig, corrupt: bool) -> Result<GradcheckReport> {
    cfg.loss.validate()?;
    let fix = build_fixture(cfg)?;

    // Frozen stop-gradient operands: the instance vectors at the unperturbed
    // parameters.
    let seqs: Vec<&SkeletonSequence> = fix.seqs.iter().collect();
    let items: Vec<(&SkeletonSequence, &MaskVector)> = fix
        .seqs
        .iter()
        .zip(&fix.masks)
        .flat_map(|(s, ms)| ms.iter().map(move |m| (s, m)))
        .collect();
    let tape = forward_tape(&fix.params, &items, false)?;
    let frozen: Vec<Vec<Vec<f64>>> = (0..cfg.batch)
        .map(|b| {
            (0..cfg.samplings_q)
                .map(|i| tape.instance(b * cfg.samplings_q + i).to_vec())
                .collect()
        })
        .collect();
    drop(tape);

    let masks: Vec<&[MaskVector]> = fix.masks.iter().map(|m| m.as_slice()).collect();
    let eval = batch_step(
        &fix.params,
        &seqs,
        &masks,
        &fix.labels,
        &fix.prototypes,
        &cfg.loss,
        None,
    )?;
    let mut analytic = eval.grads;
    if corrupt {
        analytic.w1.data_mut()[0] += 1e-3;
    }

    let mut params = fix.params.clone();
    let names: Vec<&'static str> = analytic.tensors().iter().map(|(n, _)| *n).collect();
    let mut checks = Vec::with_capacity(names.len());
    for name in names {
        let len = tensor(&analytic, name).len();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for idx in 0..len {
            let orig = tensor_mut(&mut params, name)[idx];
            tensor_mut(&mut params, name)[idx] = orig + cfg.step;
            let plus = combined(&fix, &params, Some(&frozen))?;
            tensor_mut(&mut params, name)[idx] = orig - cfg.step;
            let minus = combined(&fix, &params, Some(&frozen))?;
            tensor_mut(&mut params, name)[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let got = tensor(&analytic, name)[idx];
            let rel = (got - numeric).abs() / (numeric.abs() + 1e-8);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(got.abs());
        }
        checks.push(MatrixCheck {
            name,
            max_rel_err: max_rel,
            max_abs_analytic: max_abs,
        });
    }
    let passed = checks.iter().all(|c| c.max_rel_err < cfg.tolerance);
    Ok(GradcheckReport {
        checks,
        tolerance: cfg.tolerance,
        passed,
    })
}

fn tensor<'a>(grads: &'a Gradients, name: &str) -> &'a [f64] {
    grads
        .tensors()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| t)
        .expect("known tensor name")
}

fn tensor_mut<'a>(params: &'a mut ModelParams, name: &str) -> &'a mut [f64] {
    params
        .tensors_mut()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| t)
        .expect("known tensor name")
}
