//! Person re-identification evaluation: Euclidean probe-to-gallery ranking,
//! CMC top-k, and mean average precision.

use crate::data::{baseline_representation, Dataset};
use crate::encoder::{encode_sequence, ModelParams};
use crate::error::{Error, Result};
use crate::mask::MaskVector;

/// Per-probe gallery rankings with relevance flags.
///
/// Rankings are permutations of the gallery ordered by non-decreasing
/// distance, ties broken by ascending gallery index. Probes whose identity
/// never occurs in the gallery carry `has_match = false` and are excluded
/// from the metrics with a warning count.
#[derive(Debug, Clone)]
pub struct RankingResult {
    /// `rankings[p][r]` is the gallery index at rank `r` for probe `p`.
    pub rankings: Vec<Vec<usize>>,
    /// `relevant[p][r]` flags whether that entry shares probe `p`'s identity.
    pub relevant: Vec<Vec<bool>>,
    pub has_match: Vec<bool>,
}

impl RankingResult {
    pub fn gallery_size(&self) -> usize {
        self.rankings.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn excluded_probes(&self) -> usize {
        self.has_match.iter().filter(|&&m| !m).count()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Ranks every gallery entry for every probe by Euclidean distance.
pub fn rank_gallery(
    probe_embs: &[Vec<f64>],
    gallery_embs: &[Vec<f64>],
    probe_ids: &[u32],
    gallery_ids: &[u32],
) -> Result<RankingResult> {
    if gallery_embs.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    if probe_embs.len() != probe_ids.len() || gallery_embs.len() != gallery_ids.len() {
        return Err(Error::InvalidArgument(
            "embedding and identity counts do not match".into(),
        ));
    }
    let dim = gallery_embs[0].len();
    for e in probe_embs.iter().chain(gallery_embs) {
        if e.len() != dim {
            return Err(Error::InvalidArgument(
                "embeddings have inconsistent dimensions".into(),
            ));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
    }
    let mut rankings = Vec::with_capacity(probe_embs.len());
    let mut relevant = Vec::with_capacity(probe_embs.len());
    let mut has_match = Vec::with_capacity(probe_embs.len());
    for (p, pid) in probe_embs.iter().zip(probe_ids) {
        let mut order: Vec<usize> = (0..gallery_embs.len()).collect();
        let dists: Vec<f64> = gallery_embs.iter().map(|g| euclidean(p, g)).collect();
        order.sort_by(|&a, &b| {
            dists[a]
                .partial_cmp(&dists[b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let flags: Vec<bool> = order.iter().map(|&g| gallery_ids[g] == *pid).collect();
        has_match.push(flags.iter().any(|&f| f));
        rankings.push(order);
        relevant.push(flags);
    }
    Ok(RankingResult {
        rankings,
        relevant,
        has_match,
    })
}

/// Fraction of (included) probes with at least one same-identity entry among
/// their top-k ranked gallery entries.
pub fn cmc(ranking: &RankingResult, k: usize) -> Result<f64> {
    let gallery = ranking.gallery_size();
    if k < 1 || k > gallery {
        return Err(Error::InvalidArgument(format!(
            "k={k} must be in 1..={gallery}"
        )));
    }
    let mut hits = 0usize;
    let mut counted = 0usize;
    for (flags, &matched) in ranking.relevant.iter().zip(&ranking.has_match) {
        if !matched {
            continue;
        }
        counted += 1;
        if flags[..k].iter().any(|&f| f) {
            hits += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "no probe has a same-identity gallery entry".into(),
        ));
    }
    Ok(hits as f64 / counted as f64)
}

/// Mean over included probes of average precision: AP is the mean over
/// relevant ranks `r` (1-based) of `(relevant in top r) / r`.
pub fn mean_average_precision(ranking: &RankingResult) -> Result<f64> {
    let mut ap_sum = 0.0;
    let mut counted = 0usize;
    for (flags, &matched) in ranking.relevant.iter().zip(&ranking.has_match) {
        if !matched {
            continue;
        }
        counted += 1;
        let mut seen = 0usize;
        let mut ap = 0.0;
        for (r, &f) in flags.iter().enumerate() {
            if f {
                seen += 1;
                ap += seen as f64 / (r + 1) as f64;
            }
        }
        ap_sum += ap / seen as f64;
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "no probe has a same-identity gallery entry".into(),
        ));
    }
    Ok(ap_sum / counted as f64)
}

/// Which representation the evaluation embeds with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Unmasked pooled encoder output (the learned representation).
    Encoder,
    /// Flattened raw coordinates (the untrained ablation baseline).
    Baseline,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Encoder => "encoder",
            EvalMode::Baseline => "baseline",
        }
    }
}

/// Evaluation metrics: the CMC curve for k = 1..=k_max plus mAP.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `cmc[k-1]` is the top-k accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub excluded_probes: usize,
}

impl Metrics {
    /// Top-k accuracy with k clamped to the curve length.
    pub fn top(&self, k: usize) -> f64 {
        self.cmc[k.min(self.cmc.len()) - 1]
    }

    /// Stable line record: top-1/5/10, mAP, and exclusion count.
    pub fn record_line(&self, mode: EvalMode) -> String {
        format!(
            "record=metrics mode={} top1={:.6} top5={:.6} top10={:.6} map={:.6} excluded={}",
            mode.as_str(),
            self.top(1),
            self.top(5),
            self.top(10),
            self.map,
            self.excluded_probes
        )
    }

    /// CMC curve as CSV (`k,accuracy` rows).
    pub fn cmc_csv(&self) -> String {
        let mut out = String::from("k,accuracy\n");
        for (i, acc) in self.cmc.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", i + 1, acc));
        }
        out
    }
}

const CMC_CURVE_MAX: usize = 100;

/// Computes metrics from a finished ranking.
pub fn metrics_from_ranking(ranking: &RankingResult) -> Result<Metrics> {
    let k_max = ranking.gallery_size().min(CMC_CURVE_MAX);
    let mut curve = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        curve.push(cmc(ranking, k)?);
    }
    Ok(Metrics {
        cmc: curve,
        map: mean_average_precision(ranking)?,
        excluded_probes: ranking.excluded_probes(),
    })
}

/// Embeds probe and gallery (encoder under the all-ones mask, or the raw
/// baseline), ranks, and reduces to CMC/mAP.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, mode: EvalMode) -> Result<Metrics> {
    if dataset.probe.is_empty() || dataset.gallery.is_empty() {
        return Err(Error::InvalidArgument(
            "probe and gallery must be nonempty".into(),
        ));
    }
    let embed = |split: &[crate::data::SkeletonSequence]| -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
        let mut embs = Vec::with_capacity(split.len());
        let mut ids = Vec::with_capacity(split.len());
        for seq in split {
            let emb = match mode {
                EvalMode::Encoder => {
                    let mask = MaskVector::all_ones(seq.len(), 0);
                    encode_sequence(params, seq, &mask)?
                }
                EvalMode::Baseline => baseline_representation(seq),
            };
            let id = seq.identity().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{} sequence '{}' lacks an identity",
                    seq.split().as_str(),
                    seq.seq_id()
                ))
            })?;
            embs.push(emb);
            ids.push(id);
        }
        Ok((embs, ids))
    };
    let (probe_embs, probe_ids) = embed(&dataset.probe)?;
    let (gallery_embs, gallery_ids) = embed(&dataset.gallery)?;
    let ranking = rank_gallery(&probe_embs, &gallery_embs, &probe_ids, &gallery_ids)?;
    metrics_from_ranking(&ranking)
}
