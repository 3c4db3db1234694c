//! Trains the two adapters once and sculpts them at several values of k.
//! Larger k masks fewer entries, so forgetting grows with k while retained
//! knowledge shrinks.
//!
//! cargo run --release --example k_sweep [-- full]

#[path = "common/mod.rs"]
mod common;

use smfa::datagen::Category;
use smfa::eval::evaluate_model;
use smfa::methods::train_adapters;
use smfa::sculptor::{sculpt_pipeline, SculptConfig};

fn main() -> smfa::Result<()> {
    let s = common::setup(3)?;
    let forget = s.data.forget_set();
    let retain = s.data.retain_few_set();
    let pair = train_adapters(&s.base, &s.config, &forget, &retain, &s.data.pool, &s.cfg.unlearn_train)?;

    println!("{:>8} {:>9} {:>15} {:>13}", "k", "masked", "forget refusal", "retain exact");
    for k in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 100.0] {
        let out = sculpt_pipeline(&s.base, &pair.forget, &pair.anchor, &SculptConfig { k, ..s.cfg.sculpt })?;
        let r = evaluate_model(&out.weights, &s.config, &s.data, &s.data.pool)?;
        let f = r.row("forget", Category::ImageMemory).expect("forget row");
        let t = r.row("retain", Category::ImageMemory).expect("retain row");
        println!(
            "{k:>8} {:>8.2}% {:>15.3} {:>13.3}",
            100.0 * out.stats.masked_fraction(),
            f.refusal_rate,
            t.exact_match
        );
    }
    Ok(())
}
