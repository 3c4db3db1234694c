//! Runs every unlearning method from the same original and prints one line
//! per method: forgetting on the forget split, what survives on the retain
//! split, and how often answers stay well formed.
//!
//! cargo run --release --example baselines [-- full]

#[path = "common/mod.rs"]
mod common;

use smfa::datagen::Category;
use smfa::eval::{evaluate_model, EvalReport};
use smfa::methods::{
    ga_difference_unlearn, idk_tuning_unlearn, kl_minimization_unlearn, manu_unlearn, smfa_unlearn,
};
use smfa::model::ModelWeights;

fn pooled(r: &EvalReport, split: &str, memory: bool, f: impl Fn(&smfa::eval::MetricRow) -> f64) -> f64 {
    let rows: Vec<_> = r
        .rows
        .iter()
        .filter(|m| m.split == split && (m.category != Category::Understanding.as_str()) == memory)
        .collect();
    let n: usize = rows.iter().map(|m| m.n_items).sum();
    rows.iter().map(|m| f(m) * m.n_items as f64).sum::<f64>() / n as f64
}

fn main() -> smfa::Result<()> {
    let s = common::setup(2)?;
    let forget = s.data.forget_set();
    let retain = s.data.retain_few_set();
    let (train, pool) = (&s.cfg.unlearn_train, &s.data.pool);

    let mut models: Vec<(&str, ModelWeights)> = vec![("original", s.base.clone())];
    let smfa = smfa_unlearn(&s.base, &s.config, &forget, &retain, pool, train, &s.cfg.sculpt)?;
    models.push(("smfa", smfa.weights));
    models.push(("idk", idk_tuning_unlearn(&s.base, &s.config, &forget, &retain, pool, train)?));
    models.push(("ga-diff", ga_difference_unlearn(&s.base, &s.config, &forget, &retain, train)?));
    models.push(("kl-min", kl_minimization_unlearn(&s.base, &s.config, &forget, &retain, train)?));
    let manu = manu_unlearn(&s.base, &s.config, &forget, &retain, &s.cfg.manu)?;
    println!("manu pruned {} trunk neurons", manu.pruned.len());
    models.push(("manu", manu.weights));

    println!(
        "\n{:<9} {:>13} {:>15} {:>13} {:>15} {:>11}",
        "method", "forget exact", "forget refusal", "retain exact", "understanding", "wellformed"
    );
    for (name, w) in &models {
        let r = evaluate_model(w, &s.config, &s.data, pool)?;
        let all_wellformed = r.rows.iter().map(|m| m.wellformed_rate * m.n_items as f64).sum::<f64>()
            / r.rows.iter().map(|m| m.n_items).sum::<usize>() as f64;
        println!(
            "{name:<9} {:>13.3} {:>15.3} {:>13.3} {:>15.3} {:>11.3}",
            pooled(&r, "forget", true, |m| m.exact_match),
            pooled(&r, "forget", true, |m| m.refusal_rate),
            pooled(&r, "retain", true, |m| m.exact_match),
            pooled(&r, "retain", false, |m| m.exact_match),
            all_wellformed,
        );
    }
    Ok(())
}
