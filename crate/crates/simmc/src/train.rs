//! The alternating optimization loop: per-epoch mask sampling, full-set
//! encoding, per-sampling clustering, then minibatch Adam steps against the
//! epoch-fixed prototypes and assignments.
//!
//! Determinism contract: parameter init draws from `StdRng(seed)`; each epoch
//! draws masks then the batch shuffle from `StdRng(epoch_seed(seed, epoch))`.
//! All reductions run in fixed index order, so a fixed seed reproduces
//! parameters bit-for-bit.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::cluster::{cluster_all_samplings, ClusterAssignment, EpsSetting, PrototypeSet};
use crate::data::{train_label_reads, Dataset};
use crate::encoder::{encode_frame, forward_tape, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, l2_normalize, mic_loss_multi, mpc_loss, LossConfig, MpcInput};
use crate::mask::{sample_masks, MaskVector};

/// Full training configuration. Defaults follow the published recipe:
/// Adam at 0.00035 with batch 256, H=256, q=2 samplings with x=2 masks.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Zero-masked positions per sampling.
    pub masks_x: usize,
    /// Subsequence samplings per sequence.
    pub samplings_q: usize,
    /// Embedding size H.
    pub hidden: usize,
    pub loss: LossConfig,
    pub eps: EpsSetting,
    pub min_pts: usize,
    /// Re-sample masks and re-cluster every this many epochs.
    pub cluster_every: usize,
    pub bias: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            learning_rate: 0.00035,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            masks_x: 2,
            samplings_q: 2,
            hidden: 256,
            loss: LossConfig::default(),
            eps: EpsSetting::default(),
            min_pts: 4,
            cluster_every: 1,
            bias: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Validates the configuration against a dataset's sequence length.
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.samplings_q < 1 {
            return Err(Error::InvalidArgument("samplings q must be >= 1".into()));
        }
        if self.masks_x >= seq_len {
            return Err(Error::InvalidArgument(format!(
                "masks x={} must be < sequence length f={seq_len}",
                self.masks_x
            )));
        }
        if self.hidden < 1 {
            return Err(Error::InvalidArgument("hidden size must be >= 1".into()));
        }
        if self.min_pts < 1 {
            return Err(Error::InvalidArgument("min_pts must be >= 1".into()));
        }
        if self.cluster_every < 1 {
            return Err(Error::InvalidArgument("cluster cadence must be >= 1".into()));
        }
        if let EpsSetting::Fixed(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
            }
        }
        self.loss.validate()
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }
}

fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps_hat: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps_hat);
    }
}

/// One Adam step with bias correction over every parameter tensor.
/// A non-finite gradient aborts the step with an error.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps_hat: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::InvalidArgument(
            "non-finite gradient; optimizer step aborted".into(),
        ));
    }
    state.t += 1;
    let t = state.t;
    adam_update(
        params.w1.data_mut(),
        grads.w1.data(),
        state.m.w1.data_mut(),
        state.v.w1.data_mut(),
        lr,
        beta1,
        beta2,
        eps_hat,
        t,
    );
    adam_update(
        params.w2.data_mut(),
        grads.w2.data(),
        state.m.w2.data_mut(),
        state.v.w2.data_mut(),
        lr,
        beta1,
        beta2,
        eps_hat,
        t,
    );
    adam_update(
        params.wc.data_mut(),
        grads.wc.data(),
        state.m.wc.data_mut(),
        state.v.wc.data_mut(),
        lr,
        beta1,
        beta2,
        eps_hat,
        t,
    );
    if let (Some(pb), Some(gb)) = (params.bias.as_mut(), grads.bias.as_ref()) {
        let mb = state.m.bias.as_mut().expect("bias moment");
        // Split the borrow: v moments fetched afterwards per tensor.
        let vb = state.v.bias.as_mut().expect("bias moment");
        adam_update(&mut pb.b1, &gb.b1, &mut mb.b1, &mut vb.b1, lr, beta1, beta2, eps_hat, t);
        adam_update(&mut pb.b2, &gb.b2, &mut mb.b2, &mut vb.b2, lr, beta1, beta2, eps_hat, t);
        adam_update(&mut pb.bc, &gb.bc, &mut mb.bc, &mut vb.bc, lr, beta1, beta2, eps_hat, t);
    }
    Ok(())
}

/// Per-epoch summary, one structured record per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mpc: f64,
    pub mic: f64,
    pub total: f64,
    /// Cluster count per sampling.
    pub clusters: Vec<usize>,
    /// Noise count per sampling.
    pub noise: Vec<usize>,
    /// Clustered (non-noise) instances across samplings.
    pub clustered_instances: usize,
    pub mpc_skipped: bool,
    pub mic_enabled: bool,
    pub degenerate_mic_terms: usize,
}

impl EpochStats {
    /// Line-delimited self-describing record, stable for byte comparison.
    pub fn record_line(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "record=epoch epoch={} mpc={:.6} mic={:.6} total={:.6} clusters={} noise={} clustered={}",
            self.epoch,
            self.mpc,
            self.mic,
            self.total,
            join(&self.clusters),
            join(&self.noise),
            self.clustered_instances,
        )
    }
}

/// Epoch-fixed masks, assignments, and prototypes (refreshed together every
/// `cluster_every` epochs so pseudo-labels always refer to the subsequences
/// that were clustered).
pub struct EpochState {
    masks: Vec<Vec<MaskVector>>,
    assignments: Vec<ClusterAssignment>,
    prototypes: Vec<PrototypeSet>,
}

/// Derives the per-epoch RNG seed from the base seed.
pub fn epoch_seed(base: u64, epoch: usize) -> u64 {
    base ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Encodes every frame of every training sequence once and pools each
/// sampling's masked mean, giving `q` instance sets of `N` vectors.
fn encode_training_instances(
    params: &ModelParams,
    dataset: &Dataset,
    masks: &[Vec<MaskVector>],
    q: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let h = params.hidden_dim();
    let mut sets: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(dataset.train.len()); q];
    let mut encoded: Vec<Vec<f64>> = Vec::new();
    for (seq, seq_masks) in dataset.train.iter().zip(masks) {
        encoded.clear();
        for t in 0..seq.len() {
            encoded.push(encode_frame(params, seq.frames().row(t))?);
        }
        for (i, mask) in seq_masks.iter().enumerate() {
            let mut v = vec![0.0; h];
            for t in mask.kept_indices() {
                for (acc, &x) in v.iter_mut().zip(&encoded[t]) {
                    *acc += x;
                }
            }
            let denom = mask.kept() as f64;
            for acc in v.iter_mut() {
                *acc /= denom;
            }
            sets[i].push(v);
        }
    }
    Ok(sets)
}

fn refresh_clusters(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut StdRng,
) -> Result<EpochState> {
    let f = dataset.seq_len();
    let mut masks = Vec::with_capacity(dataset.train.len());
    for _ in 0..dataset.train.len() {
        masks.push(sample_masks(f, cfg.masks_x, cfg.samplings_q, rng)?);
    }
    let mut sets = encode_training_instances(params, dataset, &masks, cfg.samplings_q)?;
    if cfg.loss.normalize {
        for set in sets.iter_mut() {
            for v in set.iter_mut() {
                *v = l2_normalize(v).0;
            }
        }
    }
    let clustered = cluster_all_samplings(&sets, cfg.eps, cfg.min_pts)?;
    let (assignments, prototypes) = clustered.into_iter().unzip();
    Ok(EpochState {
        masks,
        assignments,
        prototypes,
    })
}

/// One batch's loss values and parameter gradients.
pub struct BatchEval {
    pub mpc: f64,
    pub mic: f64,
    /// Clustered (non-noise) instances contributing to the MPC mean.
    pub clustered: usize,
    pub degenerate_mic_terms: usize,
    pub grads: Gradients,
}

/// Evaluates the combined objective over one batch and back-propagates it.
///
/// `seqs[b]` is paired with `masks[b]` (q masks each); `labels[i][b]` is the
/// epoch-fixed cluster of sequence `b` in sampling `i`. The intra-sequence
/// loss runs when `lambda > 0` and `q >= 2`; its stop-gradient operands are
/// the live instances unless `frozen_stops[b][i]` overrides them (used by the
/// finite-difference harness, which must hold the stopped branch constant).
pub fn batch_step(
    params: &ModelParams,
    seqs: &[&crate::data::SkeletonSequence],
    masks: &[&[MaskVector]],
    labels: &[Vec<Option<usize>>],
    prototypes: &[PrototypeSet],
    lcfg: &LossConfig,
    frozen_stops: Option<&[Vec<Vec<f64>>]>,
) -> Result<BatchEval> {
    let q = masks.first().map(|m| m.len()).unwrap_or(0);
    if q == 0 || seqs.len() != masks.len() {
        return Err(Error::InvalidArgument(
            "batch needs one mask list (q >= 1 masks) per sequence".into(),
        ));
    }
    let lambda = lcfg.lambda;
    let use_mpc = lambda < 1.0 && prototypes.iter().any(|p| !p.is_empty());
    let use_mic = lambda > 0.0 && q >= 2;

    let mut items = Vec::with_capacity(seqs.len() * q);
    for (seq, seq_masks) in seqs.iter().zip(masks) {
        for mask in seq_masks.iter() {
            items.push((*seq, mask));
        }
    }
    let tape = forward_tape(params, &items, use_mic)?;

    // Upstream gradients per tape entry (batch-major, sampling-minor).
    let h = params.hidden_dim();
    let mut d_v: Vec<Vec<f64>> = vec![vec![0.0; h]; items.len()];
    let mut d_z: Vec<Vec<f64>> = if use_mic {
        vec![vec![0.0; h]; items.len()]
    } else {
        Vec::new()
    };

    let mut mpc = 0.0;
    let mut clustered = 0usize;
    if use_mpc {
        let mut per_sampling_instances: Vec<Vec<Vec<f64>>> = vec![Vec::new(); q];
        for (b, _) in seqs.iter().enumerate() {
            for i in 0..q {
                per_sampling_instances[i].push(tape.instance(b * q + i).to_vec());
            }
        }
        let inputs: Vec<MpcInput> = (0..q)
            .map(|i| MpcInput {
                instances: &per_sampling_instances[i],
                labels: &labels[i],
                prototypes: &prototypes[i],
            })
            .collect();
        let outcome = mpc_loss(&inputs, lcfg.tau, lcfg.normalize)?;
        if !outcome.all_noise {
            mpc = outcome.loss;
            clustered = outcome.clustered;
            let scale = 1.0 - lambda;
            for (b, _) in seqs.iter().enumerate() {
                for i in 0..q {
                    let entry = b * q + i;
                    for (acc, &g) in d_v[entry].iter_mut().zip(&outcome.d_instances[i][b]) {
                        *acc += scale * g;
                    }
                }
            }
        }
    }

    let mut mic = 0.0;
    let mut degenerate_mic_terms = 0usize;
    if use_mic {
        let mut mic_sum = 0.0;
        let inv_batch = 1.0 / seqs.len() as f64;
        for (b, _) in seqs.iter().enumerate() {
            let instances: Vec<Vec<f64>> = match frozen_stops {
                Some(frozen) => frozen[b].clone(),
                None => (0..q).map(|i| tape.instance(b * q + i).to_vec()).collect(),
            };
            let projections: Vec<Vec<f64>> = (0..q)
                .map(|i| tape.projection(b * q + i).expect("projection cached").to_vec())
                .collect();
            let outcome = mic_loss_multi(&instances, &projections, lcfg.alpha, lcfg.beta)?;
            mic_sum += outcome.loss;
            degenerate_mic_terms += outcome.degenerate_terms;
            for i in 0..q {
                let entry = b * q + i;
                for (acc, &g) in d_z[entry].iter_mut().zip(&outcome.d_z[i]) {
                    *acc += lambda * inv_batch * g;
                }
            }
        }
        mic = mic_sum * inv_batch;
    }

    let grads = tape.backward(params, &d_v, if use_mic { Some(&d_z) } else { None })?;
    Ok(BatchEval {
        mpc,
        mic,
        clustered,
        degenerate_mic_terms,
        grads,
    })
}

/// Runs one epoch: (re)cluster on cadence, then shuffled minibatch steps.
/// Instances are re-encoded under the live parameters each batch while the
/// epoch's masks, assignments, and prototypes stay fixed.
pub fn train_epoch(
    dataset: &Dataset,
    params: &mut ModelParams,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    state: &mut Option<EpochState>,
) -> Result<EpochStats> {
    let n = dataset.train.len();
    if n == 0 {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut rng = StdRng::seed_from_u64(epoch_seed(cfg.seed, epoch));
    if state.is_none() || epoch % cfg.cluster_every == 0 {
        *state = Some(refresh_clusters(params, dataset, cfg, &mut rng)?);
    }
    let st = state.as_ref().expect("cluster state");

    let q = cfg.samplings_q;
    let lambda = cfg.loss.lambda;
    let use_mic = lambda > 0.0 && q >= 2;
    let any_clusters = st.prototypes.iter().any(|p| !p.is_empty());
    if !any_clusters && !use_mic {
        return Err(Error::State(
            "no clusters were formed and the intra-sequence loss is disabled; \
             the epoch would be a no-op"
                .into(),
        ));
    }
    if !any_clusters {
        eprintln!(
            "warning: epoch {epoch}: all samplings produced zero clusters; \
             training degrades to the intra-sequence loss only"
        );
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut mpc_weighted = 0.0;
    let mut mpc_weight = 0usize;
    let mut mic_weighted = 0.0;
    let mut mic_weight = 0usize;
    let mut degenerate_mic = 0usize;

    for batch in order.chunks(cfg.batch_size) {
        let seqs: Vec<&crate::data::SkeletonSequence> =
            batch.iter().map(|&s| &dataset.train[s]).collect();
        let batch_masks: Vec<&[MaskVector]> =
            batch.iter().map(|&s| st.masks[s].as_slice()).collect();
        let batch_labels: Vec<Vec<Option<usize>>> = (0..q)
            .map(|i| batch.iter().map(|&s| st.assignments[i].labels[s]).collect())
            .collect();
        let eval = batch_step(
            params,
            &seqs,
            &batch_masks,
            &batch_labels,
            &st.prototypes,
            &cfg.loss,
            None,
        )?;
        adam_step(
            params,
            &eval.grads,
            adam,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        )?;

        mpc_weighted += eval.mpc * eval.clustered as f64;
        mpc_weight += eval.clustered;
        mic_weighted += eval.mic * batch.len() as f64;
        mic_weight += batch.len();
        degenerate_mic += eval.degenerate_mic_terms;
    }

    let mpc = if mpc_weight > 0 {
        mpc_weighted / mpc_weight as f64
    } else {
        0.0
    };
    let mic = if mic_weight > 0 && use_mic {
        mic_weighted / mic_weight as f64
    } else {
        0.0
    };
    let value = combined_loss(mpc, mic, lambda, mpc_weight);
    Ok(EpochStats {
        epoch,
        mpc,
        mic,
        total: value.total,
        clusters: st.prototypes.iter().map(|p| p.num_clusters()).collect(),
        noise: st
            .assignments
            .iter()
            .map(|a| a.labels.iter().filter(|l| l.is_none()).count())
            .collect(),
        clustered_instances: mpc_weight,
        mpc_skipped: !any_clusters || lambda >= 1.0,
        mic_enabled: use_mic,
        degenerate_mic_terms: degenerate_mic,
    })
}

/// Trains from scratch: seeded init, then `cfg.epochs` alternating epochs.
/// Fails if training ever reads a train-split identity label.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochStats>)> {
    cfg.validate(dataset.seq_len())?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let label_reads_before = train_label_reads();
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg.hidden, dataset.feature_dim(), cfg.bias, &mut rng)?;
    let mut adam = AdamState::new(&params);
    let mut state = None;
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        stats.push(train_epoch(
            dataset, &mut params, &mut adam, cfg, epoch, &mut state,
        )?);
    }
    if train_label_reads() != label_reads_before {
        return Err(Error::State(
            "training read identity labels of train-split sequences".into(),
        ));
    }
    Ok((params, stats))
}

/// Fine-tuning entry point: the identical pipeline run on pre-extracted
/// per-frame feature streams (K is the feature dimension).
pub fn finetune(features: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochStats>)> {
    train(features, cfg)
}
