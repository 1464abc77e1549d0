//! Writing and reading embedding files and model checkpoints, and what the
//! readers report for damaged input.
//!
//! `cargo run --example embedding_files`

use ocd_engine::eval::{make_synthetic, SyntheticSpec};
use ocd_engine::io::{
    decode_embeddings, encode_embeddings, read_checkpoint, read_embeddings, write_checkpoint,
    write_embeddings, Checkpoint,
};
use ocd_engine::train::{ModelParams, ModelShape, TrainConfig};
use ocd_engine::RngSeed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_synthetic(&SyntheticSpec::easy(RngSeed(4)))?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("query.emb");
    write_embeddings(&data.query, &path)?;
    let back = read_embeddings(&path)?;
    println!(
        "query.emb: {} rows x {} dims, known {:?}, virtual {:?}",
        back.len(),
        back.dim(),
        back.label_space().known,
        back.label_space().virtual_
    );

    let bytes = encode_embeddings(&data.query)?;
    println!("file size {} bytes; header is {:?}", bytes.len(), &bytes[..4]);
    let damaged: [(&str, Vec<u8>); 3] = [
        ("cut mid-payload", bytes[..100].to_vec()),
        ("wrong magic", [b"EMB2", &bytes[4..]].concat()),
        ("extra bytes", [&bytes[..], b"!"].concat()),
    ];
    for (what, b) in damaged {
        let err = decode_embeddings(&b).unwrap_err();
        println!("{what:<16} -> {}: {err}", err.category());
    }

    let params = ModelParams::init(ModelShape::new(16), vec![0, 1, 2, 3, 4], &mut ChaCha8Rng::seed_from_u64(0));
    let ckpt = dir.path().join("model.ckpt");
    write_checkpoint(&Checkpoint { params: params.clone(), config: TrainConfig::default(), epoch: 0 }, &ckpt)?;
    let loaded = read_checkpoint(&ckpt)?;
    let same = loaded.params.features(back.embeddings())? == params.features(back.embeddings())?;
    println!(
        "\ncheckpoint {} bytes, epoch {}, lr {}, reloaded features identical: {same}",
        std::fs::metadata(&ckpt)?.len(),
        loaded.epoch,
        loaded.config.lr
    );
    Ok(())
}
