//! Scoring functions on hand-written predictions, then a full report for an
//! untrained and a briefly trained model, written as JSON and CSV and
//! diffed.
//!
//! cargo run --release --example metrics_report

use smfa::datagen::{BenchSpec, Dataset};
use smfa::eval::{
    accuracy, diff_reports, evaluate_model, is_wellformed, read_report, refusal_rate, rouge_l,
    write_report, ReportFormat,
};
use smfa::methods::{train_on_items, Trainable, TrainConfig};
use smfa::model::init_model;

fn main() -> smfa::Result<()> {
    let r = rouge_l(&[1, 2, 3, 4], &[1, 3, 4, 5]);
    println!("rouge-l: precision {:.3} recall {:.3} f1 {:.3}", r.precision, r.recall, r.f1);
    let preds = vec![vec![1, 2, 3], vec![4, 5, 6], vec![1, 2, 0]];
    let refs = vec![vec![1, 2, 3], vec![4, 5, 7], vec![1, 2, 0]];
    let acc = accuracy(&preds, &refs)?;
    println!("exact {:.3}, token accuracy {:.3}", acc.exact_match, acc.token_accuracy);
    println!("refusal rate with starts {{1}}: {:.3}", refusal_rate(&preds, &[1]));

    let spec = BenchSpec {
        n_profiles: 40,
        n_holdout: 10,
        n_unknown: 10,
        ..BenchSpec::default()
    };
    let data = Dataset::generate(&spec)?;
    let sample = &data.items[0].answer;
    println!("{sample:?} well formed: {}", is_wellformed(sample, &data.layout, &data.pool));

    let config = data.model_config(16, 32, 2);
    let untrained = init_model(&config, 1)?;
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let (trained, _) = train_on_items(&untrained, &config, &data.training_items(), &cfg, Trainable::All, |_, _| Ok(false))?;

    let before = evaluate_model(&untrained, &config, &data, &data.pool)?;
    let after = evaluate_model(&trained, &config, &data, &data.pool)?;
    let dir = std::env::temp_dir().join(format!("smfa-report-{}", std::process::id()));
    write_report(&after, &dir.join("trained.json"), ReportFormat::Json)?;
    write_report(&after, &dir.join("trained.csv"), ReportFormat::Csv)?;
    // Reports store metrics rounded to six decimals.
    let back = read_report(&dir.join("trained.json"))?;
    assert_eq!(back.rows.len(), after.rows.len());
    println!("\n{}", after.to_csv());
    println!("trained minus untrained:\n{}", diff_reports(&after, &before)?);
    std::fs::remove_dir_all(&dir).map_err(|e| smfa::Error::io(&dir, e))?;
    Ok(())
}
