//! Sculpting on a hand-made pair of deltas, small enough to print in full.
//!
//! cargo run --example sculpt_masks

use std::collections::BTreeMap;

use smfa::model::{apply_delta, DeltaAdapter, DeltaMeta, ModelWeights, Sign};
use smfa::numerics::Tensor;
use smfa::sculptor::{combine_mask, conflict_mask, magnitude_mask, sculpt, SculptConfig};

fn adapter(base: &ModelWeights, method: &str, values: Vec<f64>) -> DeltaAdapter {
    DeltaAdapter {
        tensors: BTreeMap::from([("layer.weight".to_string(), Tensor::from_vec(&[3, 4], values).unwrap())]),
        meta: DeltaMeta {
            method: method.into(),
            base_digest: base.digest(),
            seed: 0,
            k: None,
        },
    }
}

fn show(label: &str, t: &Tensor) {
    println!("{label}");
    for r in 0..3 {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:>6.2}")).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() -> smfa::Result<()> {
    let base = ModelWeights::from_tensors(BTreeMap::from([(
        "layer.weight".to_string(),
        Tensor::from_vec(&[3, 4], (0..12).map(|i| i as f64 / 10.0).collect())?,
    )]));
    // The forgetting adapter pushes hard on a few entries; the anchor moves
    // most entries a little, sometimes in the opposite direction.
    let f = adapter(&base, "mfa", vec![
        0.9, -0.1, 0.05, -0.8, 0.02, 0.6, -0.03, 0.01, -0.5, 0.04, 0.3, -0.02,
    ]);
    let a = adapter(&base, "anchor", vec![
        -0.1, 0.1, 0.05, 0.2, -0.1, -0.02, 0.05, 0.1, 0.1, -0.1, -0.1, 0.03,
    ]);
    show("forgetting delta", &f.tensors["layer.weight"]);
    show("anchor delta", &a.tensors["layer.weight"]);

    let c = conflict_mask(&f, &a)?;
    show("sign conflict", &c.masks["layer.weight"]);
    for k in [0.0, 1.0, 5.0, 50.0] {
        let r = magnitude_mask(&f, &a, &SculptConfig::with_k(k))?;
        let m = combine_mask(&c, &r)?;
        let s = sculpt(&f, &m, Some(k))?;
        println!("\nk = {k}: {} of {} entries masked", m.count_ones(), m.num_entries());
        show("sculpted delta", &s.tensors["layer.weight"]);
        let merged = apply_delta(&base, &s, Sign::Plus)?;
        let moved = merged.tensors()["layer.weight"]
            .data()
            .iter()
            .zip(base.tensors()["layer.weight"].data())
            .filter(|(x, y)| x != y)
            .count();
        println!("  {moved} base entries changed after merging");
    }
    Ok(())
}
