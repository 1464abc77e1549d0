//! The whole pipeline on both synthetic presets, with generation and the
//! leader loss switched on and off.
//!
//! `cargo run --release --example end_to_end [seeds]`

use ocd_engine::io::PipelineConfig;
use ocd_engine::stages::pipeline;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> ocd_engine::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    for preset in ["easy", "hard"] {
        for (label, generation, alpha) in [("full", true, 0.3), ("support-only", false, 0.0)] {
            let (mut all, mut new) = (Vec::new(), Vec::new());
            for seed in 0..seeds {
                let mut cfg = PipelineConfig::default();
                cfg.set("preset", preset)?;
                cfg.seed = seed;
                cfg.train.epochs = 30;
                cfg.enable_generation = generation;
                cfg.train.alpha = alpha;
                let run = pipeline(&cfg)?;
                all.push(run.comparison.oci.acc.acc_all);
                new.push(run.comparison.oci.acc.acc_new);
            }
            println!(
                "{preset:<5} {label:<13} ACC-ALL {:.4}  ACC-NEW {:.4}  ({seeds} seeds)",
                mean(&all),
                mean(&new)
            );
        }
    }
    Ok(())
}
