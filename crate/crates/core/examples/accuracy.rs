//! Clustering accuracy with one optimal mapping shared by the old and new
//! subsets.
//!
//! `cargo run --example accuracy`

use std::collections::BTreeSet;

use ocd_engine::eval::acc;

fn main() -> ocd_engine::Result<()> {
    let old: BTreeSet<i64> = [0, 1].into();
    let cases: [(&str, Vec<i64>, Vec<i64>); 4] = [
        ("perfect up to renaming", vec![0, 0, 1, 1, 2, 2], vec![9, 9, 4, 4, 7, 7]),
        ("two classes merged", vec![0, 1, 2, 2], vec![5, 5, 7, 7]),
        ("new class split in two", vec![0, 0, 2, 2, 2, 2], vec![1, 1, 3, 3, 8, 8]),
        ("everything in one cluster", vec![0, 1, 2, 3], vec![0, 0, 0, 0]),
    ];
    for (name, y_true, y_pred) in cases {
        let r = acc(&y_true, &y_pred, &old)?;
        println!("{name}:\n  {}", r.to_key_values().trim_end().replace('\n', "  "));
        println!("  mapping pred -> true {:?}", r.mapping);
    }
    Ok(())
}
