//! Training the adapter, projector, hash head and classifier.
//!
//! `cargo run --release --example train_model [epochs]`

use ocd_engine::compose::{compose_batch, InterpolationConfig};
use ocd_engine::eval::{make_synthetic, SyntheticSpec};
use ocd_engine::train::{train, TrainConfig};
use ocd_engine::RngSeed;

fn main() -> ocd_engine::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let data = make_synthetic(&SyntheticSpec::easy(RngSeed(0)))?;
    let generated = compose_batch(&data.support, &InterpolationConfig::default(), RngSeed(0))?
        .into_dataset(&data.support)?;
    let agency = data.support.concat(&generated)?;

    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let out = train(&agency, &cfg, RngSeed(0))?;
    println!("epoch      lr  alpha leaders     L_sup    L_reg     L_sle      L_c");
    for h in out.history.iter().filter(|h| h.epoch % 5 == 0 || h.epoch + 1 == epochs) {
        println!(
            "{:>5} {:.1e} {:.3} {:>7} {:>9.4} {:>8.4} {:>9.4} {:>8.4}",
            h.epoch, h.lr, h.alpha, h.num_leaders, h.loss.sup, h.loss.reg, h.loss.sle, h.loss.ce
        );
    }
    println!(
        "\n{} leaders, delta_max {:.5}, classifier over {:?}",
        out.leaders.len(),
        out.leaders.delta_max,
        out.params.class_labels
    );
    Ok(())
}
