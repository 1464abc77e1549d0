//! Spherical interpolation and synthetic-embedding composition.
//!
//! `cargo run --example slerp_compose`

use ocd_engine::compose::{compose_batch, slerp, InterpolationConfig};
use ocd_engine::eval::{make_synthetic, SyntheticSpec};
use ocd_engine::types::{cosine_similarity, norm};
use ocd_engine::RngSeed;

fn main() -> ocd_engine::Result<()> {
    let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
    for l in [0.0, 0.25, 0.5, 0.8, 1.0] {
        let z = slerp(&a, &b, l)?;
        println!("lambda {l:.2}: ({:+.6}, {:+.6})  |z| = {:.12}", z[0], z[1], norm(&z));
    }
    // magnitudes are interpolated linearly along the arc
    let z = slerp(&[2.0, 0.0], &[0.0, 4.0], 0.5)?;
    println!("mixed norms: |z| = {:.6}", norm(&z));

    let data = make_synthetic(&SyntheticSpec::easy(RngSeed(7)))?;
    let cfg = InterpolationConfig {
        pairs_per_epoch: 8,
        ..Default::default()
    };
    let batch = compose_batch(&data.support, &cfg, RngSeed(7))?;
    println!("\ncomposed {} rows with lambda_l = {}", batch.len(), cfg.lambda_l);
    for (r, ((i, j), (li, lj))) in batch.parent_pairs.iter().zip(&batch.parent_labels).enumerate() {
        let z = batch.embeddings.row(r);
        let za = data.support.embeddings().row(*i);
        let zb = data.support.embeddings().row(*j);
        println!(
            "rows ({i:>2},{j:>2}) labels ({li},{lj}): cos to parents {:.3} / {:.3}",
            cosine_similarity(z, za)?,
            cosine_similarity(z, zb)?
        );
    }
    Ok(())
}
