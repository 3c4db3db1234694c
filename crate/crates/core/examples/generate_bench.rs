//! Generates the synthetic benchmark, writes it to disk and prints a few
//! items from each split.
//!
//! cargo run --example generate_bench -- [out_dir] [seed]

use std::collections::BTreeMap;
use std::path::PathBuf;

use smfa::datagen::{BenchSpec, Dataset};

fn main() -> smfa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("smfa_runs/data"));
    let seed = args.get(1).map_or(1, |s| s.parse().expect("seed must be an integer"));

    let spec = BenchSpec {
        seed,
        ..BenchSpec::default()
    };
    let data = Dataset::generate(&spec)?;
    let l = &data.layout;
    println!(
        "answer vocab {} (refusal {}+{}, buckets {}, attributes {}), question vocab {}",
        l.answer_vocab, l.refuse_start_len, l.refuse_body_len, l.bucket_len, l.attribute_len, l.question_vocab
    );
    println!("refusal pool: {} templates", data.pool.len());

    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for item in &data.items {
        *counts
            .entry((item.split.as_str().to_string(), item.category.as_str().to_string()))
            .or_default() += 1;
    }
    for ((split, category), n) in &counts {
        println!("  {split:<11} {category:<15} {n:>5}");
    }

    let mut shown = BTreeMap::new();
    for item in &data.items {
        let seen = shown.entry((item.split, item.category)).or_insert(0);
        if *seen == 0 && item.variant == 0 {
            println!(
                "{:<11} {:<15} image {:<5} q {:?} -> a {:?}",
                item.split.as_str(),
                item.category.as_str(),
                item.feature.is_some(),
                item.question,
                item.answer
            );
        }
        *seen += 1;
    }

    data.write(&out, "bench")?;
    println!("wrote {}", out.join("bench.jsonl").display());
    assert_eq!(Dataset::read(&out, "bench")?, data);
    Ok(())
}
