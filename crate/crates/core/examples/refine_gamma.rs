//! Diversity-driven refinement: how many composed rows survive each gamma.
//!
//! `cargo run --example refine_gamma`

use ocd_engine::compose::{compose_batch, InterpolationConfig};
use ocd_engine::eval::{make_synthetic, SyntheticSpec};
use ocd_engine::refine::{
    compute_centers, gamma_for_target, gamma_table, refine, score_batch, Benchmark,
    RefinementConfig,
};
use ocd_engine::RngSeed;

fn main() -> ocd_engine::Result<()> {
    let data = make_synthetic(&SyntheticSpec::hard(RngSeed(3)))?;
    let batch = compose_batch(&data.support, &InterpolationConfig::default(), RngSeed(3))?;
    let centers = compute_centers(&data.support)?;
    let scores = score_batch(&batch, &centers);

    let grid: Vec<f64> = (-1..=10).map(|g| g as f64 / 50.0).collect();
    println!("{} composed rows, {} known centers", batch.len(), centers.len());
    for (g, kept) in gamma_table(&scores, &grid) {
        println!("gamma {g:+.2}: retained {kept:>3}  {}", "#".repeat(kept / 5));
    }
    if let Some(g) = gamma_for_target(&scores, batch.len() / 2) {
        println!("\nhalf the batch survives at gamma = {g:.4}");
    }
    for b in [Benchmark::Cub, Benchmark::StanfordCars, Benchmark::Animalia] {
        let kept = refine(&batch, &centers, &RefinementConfig::for_benchmark(b));
        println!("{b:?} default gamma {:.2}: {} kept", b.gamma(), kept.len());
    }
    Ok(())
}
