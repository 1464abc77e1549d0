//! Streaming category discovery with a leader memory, including a snapshot
//! taken mid-stream and resumed from disk.
//!
//! `cargo run --example online_inference`

use ocd_engine::infer::{LeaderMemory, MemoryLeader};
use ocd_engine::io::{read_leaders, write_leaders, LeaderFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let known = |label, v: [f64; 2]| MemoryLeader {
        label,
        vector: v.to_vec(),
        is_known: true,
    };
    let mut mem = LeaderMemory::new(vec![known(0, [1.0, 0.0]), known(1, [0.0, 1.0])], 0.2, 0.9)?;
    let stream = [
        [0.95, 0.05],
        [0.1, 0.9],
        [-1.0, 0.0],
        [-0.9, 0.1],
        [0.0, -1.0],
        [0.9, 0.0],
    ];
    let dir = tempfile::tempdir()?;
    let snap = dir.path().join("memory.ldr");

    for (t, x) in stream.iter().enumerate() {
        if t == 3 {
            write_leaders(&LeaderFile::Memory { memory: mem.clone(), processed: t }, &snap)?;
            println!("-- snapshot written after {t} items, resuming from disk");
            match read_leaders(&snap)? {
                LeaderFile::Memory { memory, .. } => mem = memory,
                LeaderFile::Trained(_) => unreachable!("a memory snapshot was written"),
            }
        }
        let v = mem.step(x)?;
        println!(
            "x = ({:+.2}, {:+.2}) -> label {} {:<5} min d^2 = {:.4}",
            x[0],
            x[1],
            v.assigned_label,
            if v.is_new_category { "(new)" } else { "" },
            v.min_sq_distance
        );
    }
    println!("\nmemory now holds {} leaders:", mem.len());
    for l in &mem.leaders {
        println!("  {:>2} known={:<5} ({:+.4}, {:+.4})", l.label, l.is_known, l.vector[0], l.vector[1]);
    }
    Ok(())
}
