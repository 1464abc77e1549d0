//! Clustering the agency set, rectifying clusters against the known labels
//! and summarizing each label by a leader.
//!
//! `cargo run --example leader_encoding`

use ocd_engine::compose::{compose_batch, InterpolationConfig};
use ocd_engine::encode::{build_leaders, cluster, rectify, ClusteringConfig};
use ocd_engine::eval::{make_synthetic, SyntheticSpec};
use ocd_engine::RngSeed;

fn main() -> ocd_engine::Result<()> {
    let data = make_synthetic(&SyntheticSpec::easy(RngSeed(1)))?;
    let generated = compose_batch(&data.support, &InterpolationConfig::default(), RngSeed(1))?
        .into_dataset(&data.support)?;
    let agency = data.support.concat(&generated)?;

    for k in [3, 5, 10, 20] {
        let a = cluster(&agency, &ClusteringConfig { knn_k: k, ..Default::default() })?;
        println!("knn_k = {k:>2}: {} clusters", a.num_clusters);
    }

    let assign = cluster(&agency, &ClusteringConfig::default())?;
    let rectified = rectify(&assign, &agency)?;
    println!(
        "\nknown labels {:?}, fresh virtual labels {:?}",
        rectified.label_space().known,
        rectified.label_space().virtual_
    );
    let leaders = build_leaders(&rectified, rectified.embeddings())?;
    for (m, &label) in leaders.labels.iter().enumerate() {
        let members = rectified.labels().iter().filter(|&&l| l == label).count();
        let kind = if leaders.known_mask[m] { "known" } else { "virtual" };
        println!("label {label:>2} ({kind:<7}) {members:>3} members");
    }
    println!("delta_max = {:.6}", leaders.delta_max);
    Ok(())
}
