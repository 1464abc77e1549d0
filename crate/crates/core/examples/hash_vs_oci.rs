//! Side-by-side comparison of leader-memory and hash-code inference on the
//! same stream.
//!
//! `cargo run --release --example hash_vs_oci [seed]`

use ocd_engine::io::PipelineConfig;
use ocd_engine::stages::{compare_strategies, pipeline};

fn main() -> ocd_engine::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = PipelineConfig { seed, ..Default::default() };
    cfg.train.epochs = 30;
    let run = pipeline(&cfg)?;
    print!("{}", run.comparison.to_table());

    // the memory's threshold scale trades new-category recall against
    // fragmentation; hash codes have no such knob
    println!("\ndelta_scale sweep (oci):");
    for scale in [0.5, 1.0, 2.0, 4.0] {
        let mut opts = cfg.memory;
        opts.delta_scale = scale;
        let c = compare_strategies(&run.outcome.params, &run.outcome.leaders, opts, &run.data.query)?;
        println!(
            "  x{scale:<4} all {:.4} new {:.4} distinct {}",
            c.oci.acc.acc_all, c.oci.acc.acc_new, c.oci.distinct_predicted
        );
    }
    Ok(())
}
