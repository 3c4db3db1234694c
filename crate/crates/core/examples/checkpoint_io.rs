//! Saves weights, a delta and a mask in the binary checkpoint format, loads
//! them back, and shows the errors raised for a corrupted file and for a
//! delta applied to the wrong base.
//!
//! cargo run --example checkpoint_io

use smfa::model::{
    init_model, load_delta_for, load_mask, load_weights, save_delta, save_mask, save_weights,
    ModelConfig,
};
use smfa::sculptor::{conflict_mask, extract_delta};

fn main() -> smfa::Result<()> {
    let dir = std::env::temp_dir().join(format!("smfa-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| smfa::Error::io(&dir, e))?;
    let config = ModelConfig {
        feature_dim: 4,
        question_vocab: 12,
        answer_vocab: 9,
        embed_dim: 6,
        hidden_dim: 8,
        hidden_layers: 2,
        answer_len: 3,
        max_question_len: 5,
    };
    let base = init_model(&config, 1)?;
    let tuned = init_model(&config, 2)?;
    let other = init_model(&config, 3)?;

    let wpath = dir.join("base.ckpt");
    save_weights(&base, "original", 1, None, &wpath)?;
    let (loaded, meta) = load_weights(&wpath)?;
    println!(
        "weights: {} tensors, {:?}, bit-identical {}",
        loaded.tensors().len(),
        meta.kind,
        loaded.bit_eq(&base)
    );
    println!("digest {}", hex::encode(base.digest()));

    let delta = extract_delta(&tuned, &base)?;
    let dpath = dir.join("tuned.delta.ckpt");
    save_delta(&delta, &dpath)?;
    let back = load_delta_for(&dpath, &base)?;
    println!("delta: {} entries, norm {:.4}, round trip exact {}", back.num_entries(), back.frobenius_norm(), back.bit_eq(&delta));
    match load_delta_for(&dpath, &other) {
        Err(e) => println!("wrong base: {e}"),
        Ok(_) => println!("wrong base unexpectedly accepted"),
    }

    let mask = conflict_mask(&delta, &extract_delta(&other, &base)?)?;
    let mpath = dir.join("conflict.mask.ckpt");
    save_mask(&mask.masks, "conflict", &base.digest(), 1, None, &mpath)?;
    let (m, _) = load_mask(&mpath)?;
    println!("mask: {} of {} entries set", mask.count_ones(), m.values().map(|t| t.len()).sum::<usize>());

    let mut bytes = std::fs::read(&wpath).map_err(|e| smfa::Error::io(&wpath, e))?;
    bytes[0] = b'X';
    let bad = dir.join("corrupt.ckpt");
    std::fs::write(&bad, &bytes).map_err(|e| smfa::Error::io(&bad, e))?;
    if let Err(e) = load_weights(&bad) {
        println!("corrupted magic: {e}");
    }
    std::fs::remove_dir_all(&dir).map_err(|e| smfa::Error::io(&dir, e))?;
    Ok(())
}

