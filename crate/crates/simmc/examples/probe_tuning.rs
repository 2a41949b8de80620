// Scratch probe for picking the synthetic acceptance configuration.

use simmc::ablation::{run_ablation, AblationVariant};
use simmc::data::{generate_synthetic, SynthConfig};
use simmc::encoder::ModelParams;
use simmc::eval::{evaluate, EvalMode};
use simmc::train::TrainConfig;

fn main() {
    let unused = |k: usize| ModelParams::zeros(1, k, false);
    for joints in [4usize, 8] {
        for noise in [0.4, 0.6, 0.8, 1.0, 1.2, 1.5] {
            let ds = generate_synthetic(&SynthConfig {
                num_identities: 10,
                sequences_per_identity: 20,
                joints,
                seq_len: 6,
                noise_std: noise,
                seed: 2024,
            })
            .unwrap();
            let m = evaluate(&unused(ds.feature_dim()), &ds, EvalMode::Baseline).unwrap();
            println!("joints={joints} noise={noise}: baseline top1={:.3} map={:.3}", m.top(1), m.map);
        }
    }

    // Pick one config and run the full ablation once.
    let t0 = std::time::Instant::now();
    let ds = generate_synthetic(&SynthConfig {
        num_identities: 10,
        sequences_per_identity: 20,
        joints: 8,
        seq_len: 6,
        noise_std: 1.0,
        seed: 2024,
    })
    .unwrap();
    let base = TrainConfig::default();
    let table = run_ablation(&ds, &base, &[1]).unwrap();
    println!("{}", table.summary_table());
    println!("one-seed ablation took {:.1} s", t0.elapsed().as_secs_f64());
    for row in table.rows_for(AblationVariant::Npc) {
        println!("npc seed={} top1={:.3}", row.seed, row.metrics.top(1));
    }
}
