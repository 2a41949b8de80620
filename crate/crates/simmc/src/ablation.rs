//! Ablation runs over the framework's configurations: the raw-coordinate
//! baseline, naive prototype contrast (single unmasked sampling), masked
//! prototype contrast, and the full combined objective.

use crate::data::Dataset;
use crate::encoder::ModelParams;
use crate::error::Result;
use crate::eval::{evaluate, EvalMode, Metrics};
use crate::train::{train, TrainConfig};

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    /// Flattened raw coordinates, no training.
    Baseline,
    /// Prototype contrast over original sequences: q = 1, x = 0, lambda = 0.
    Npc,
    /// Masked prototype contrast: lambda = 0.
    Mpc,
    /// Masked prototype plus intra-sequence contrast (the full objective).
    MpcMic,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Baseline,
        AblationVariant::Npc,
        AblationVariant::Mpc,
        AblationVariant::MpcMic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::Npc => "npc",
            AblationVariant::Mpc => "mpc",
            AblationVariant::MpcMic => "mpc+mic",
        }
    }

    /// Derives this variant's training configuration from the base one.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Baseline => {}
            AblationVariant::Npc => {
                cfg.samplings_q = 1;
                cfg.masks_x = 0;
                cfg.loss.lambda = 0.0;
            }
            AblationVariant::Mpc => {
                cfg.loss.lambda = 0.0;
            }
            AblationVariant::MpcMic => {}
        }
        cfg
    }
}

/// One evaluated configuration at one seed.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub metrics: Metrics,
}

impl AblationRow {
    pub fn record_line(&self) -> String {
        format!(
            "record=ablation config={} seed={} top1={:.6} top5={:.6} top10={:.6} map={:.6}",
            self.variant.as_str(),
            self.seed,
            self.metrics.top(1),
            self.metrics.top(5),
            self.metrics.top(10),
            self.metrics.map
        )
    }
}

/// All rows of one ablation run (every variant at every seed).
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn record_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&row.record_line());
            out.push('\n');
        }
        out
    }

    /// Mean top-1/mAP per configuration, formatted as a fixed-width table.
    pub fn summary_table(&self) -> String {
        let mut out = String::from("configuration  top-1   mAP\n");
        for variant in AblationVariant::ALL {
            let rows: Vec<&AblationRow> =
                self.rows.iter().filter(|r| r.variant == variant).collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            let top1: f64 = rows.iter().map(|r| r.metrics.top(1)).sum::<f64>() / n;
            let map: f64 = rows.iter().map(|r| r.metrics.map).sum::<f64>() / n;
            out.push_str(&format!(
                "{:<13}  {:>5.3}  {:>5.3}\n",
                variant.as_str(),
                top1,
                map
            ));
        }
        out
    }

    pub fn rows_for(&self, variant: AblationVariant) -> Vec<&AblationRow> {
        self.rows.iter().filter(|r| r.variant == variant).collect()
    }
}

/// Trains and evaluates every configuration at every seed. The baseline row
/// is evaluated once per seed for a rectangular table even though it does
/// not depend on the seed.
pub fn run_ablation(dataset: &Dataset, base: &TrainConfig, seeds: &[u64]) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for variant in AblationVariant::ALL {
            let metrics = match variant {
                AblationVariant::Baseline => {
                    let unused = ModelParams::zeros(1, dataset.feature_dim(), false);
                    evaluate(&unused, dataset, EvalMode::Baseline)?
                }
                _ => {
                    let mut cfg = variant.config(base);
                    cfg.seed = seed;
                    let (params, _stats) = train(dataset, &cfg)?;
                    evaluate(&params, dataset, EvalMode::Encoder)?
                }
            };
            rows.push(AblationRow {
                variant,
                seed,
                metrics,
            });
        }
    }
    Ok(AblationTable { rows })
}
