//! Similarity between NHA and LTA outputs on one batch before and after a
//! short training run, drawn as a coarse text heat map.
//!
//!     cargo run --release --example similarity_eval

use unicon::cli::{run_experiment, ExperimentConfig};
use unicon::eval::SimilarityMatrix;

fn heat(sim: &SimilarityMatrix, n: usize) {
    let ramp = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let m = &sim.matrix;
    let n = n.min(m.rows());
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for i in 0..n {
        let line: String = (0..n)
            .map(|j| {
                let t = if hi > lo {
                    (m.row(i)[j] - lo) / (hi - lo)
                } else {
                    0.0
                };
                ramp[((t * 9.0).round() as usize).min(9)]
            })
            .collect();
        println!("  |{line}|");
    }
    println!(
        "  diag {:.3}  off-diag {:.3}  gap {:.3}",
        sim.mean_diag,
        sim.mean_offdiag,
        sim.gap()
    );
}

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("unicon_similarity_eval");
    let mut cfg = ExperimentConfig {
        rounds: 10,
        batch_size: 16,
        out_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    cfg.optimizer.base_lr = 5e-4;
    cfg.optimizer.warmup_steps = 50;
    cfg.dataset.n = 1024;
    let summary = run_experiment(&cfg)?;
    println!("before training:");
    heat(&summary.first, 16);
    println!("after {} rounds:", summary.reports.len());
    heat(&summary.last, 16);
    println!("csv files in {}", out.display());
    Ok(())
}
