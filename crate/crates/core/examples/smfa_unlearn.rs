//! Forgets the forget-set profiles with a sculpted adapter and shows what
//! changed, split by report split and question category.
//!
//! cargo run --release --example smfa_unlearn [-- full]

#[path = "common/mod.rs"]
mod common;

use smfa::eval::evaluate_model;
use smfa::methods::smfa_unlearn;

fn main() -> smfa::Result<()> {
    let s = common::setup(1)?;
    let forget = s.data.forget_set();
    let retain = s.data.retain_few_set();
    println!("{} forget items, {} few-shot retain items", forget.len(), retain.len());

    let out = smfa_unlearn(
        &s.base,
        &s.config,
        &forget,
        &retain,
        &s.data.pool,
        &s.cfg.unlearn_train,
        &s.cfg.sculpt,
    )?;
    println!(
        "k = {}: masked {} of {} entries ({:.2}%)",
        s.cfg.sculpt.k,
        out.stats.masked_entries,
        out.stats.total_entries,
        100.0 * out.stats.masked_fraction()
    );
    for (name, l) in &out.stats.layers {
        println!(
            "  {name:<18} rho {:>8.3}  conflict {:.3}  masked {:.3}",
            l.rho, l.conflict_fraction, l.masked_fraction
        );
    }

    let before = evaluate_model(&s.base, &s.config, &s.data, &s.data.pool)?;
    let after = evaluate_model(&out.weights, &s.config, &s.data, &s.data.pool)?;
    println!("\n{:<8} {:<15} {:>9} {:>9} {:>9}", "split", "category", "exact", "exact'", "refusal'");
    for (b, a) in before.rows.iter().zip(&after.rows) {
        println!(
            "{:<8} {:<15} {:>9.3} {:>9.3} {:>9.3}",
            b.split, b.category, b.exact_match, a.exact_match, a.refusal_rate
        );
    }
    Ok(())
}
