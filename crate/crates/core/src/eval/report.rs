//! Per-(split, category) metric tables and their canonical file forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, refusal_rate, rouge_l, strip_pad, wellformed_rate};
use crate::datagen::{Category, Dataset, QAItem, RefusalPool, Split, VocabLayout};
use crate::error::{Error, Result};
use crate::model::{predict_batch, ModelConfig, ModelWeights};

pub const CSV_HEADER: &str = "split,category,n,rouge_l_f1,exact,token,refusal,wellformed";

const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub split: String,
    pub category: String,
    pub n_items: usize,
    pub rouge_l_f1: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub exact_match: f64,
    pub token_accuracy: f64,
    pub refusal_rate: f64,
    pub wellformed_rate: f64,
    /// `1 - exact_match`.
    pub forget_rate: f64,
    /// Reserved for judge-based scoring; always null here.
    pub fact_score: Option<f64>,
    pub meaningful_score: Option<f64>,
}

impl MetricRow {
    pub fn key(&self) -> (&str, &str) {
        (&self.split, &self.category)
    }

    fn metrics(&self) -> [f64; 5] {
        [
            self.rouge_l_f1,
            self.exact_match,
            self.token_accuracy,
            self.refusal_rate,
            self.wellformed_rate,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub manifest: BTreeMap<String, String>,
}

/// Report split for an item: the few-shot subset is part of the retain set.
pub fn report_split(split: Split) -> &'static str {
    match split {
        Split::Forget => "forget",
        Split::Retain | Split::RetainFew => "retain",
        Split::Holdout => "holdout",
        Split::Unknown => "unknown",
    }
}

/// Metrics for one group of predictions against references.
pub fn metric_row(
    split: &str,
    category: &str,
    predictions: &[Vec<usize>],
    references: &[Vec<usize>],
    layout: &VocabLayout,
    pool: &RefusalPool,
) -> Result<MetricRow> {
    let acc = accuracy(predictions, references)?;
    let n = predictions.len();
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (pred, reference) in predictions.iter().zip(references) {
        let s = rouge_l(strip_pad(pred), strip_pad(reference));
        p += s.precision;
        r += s.recall;
        f += s.f1;
    }
    let denom = n.max(1) as f64;
    Ok(MetricRow {
        split: split.to_string(),
        category: category.to_string(),
        n_items: n,
        rouge_l_f1: f / denom,
        rouge_l_precision: p / denom,
        rouge_l_recall: r / denom,
        exact_match: acc.exact_match,
        token_accuracy: acc.token_accuracy,
        refusal_rate: refusal_rate(predictions, &pool.refuse_start),
        wellformed_rate: wellformed_rate(predictions, layout, pool),
        forget_rate: if n == 0 { 0.0 } else { 1.0 - acc.exact_match },
        fact_score: None,
        meaningful_score: None,
    })
}

/// Predictions for `items`, in order.
pub fn predict_items(
    weights: &ModelWeights,
    config: &ModelConfig,
    items: &[QAItem],
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(PREDICT_CHUNK) {
        let queries: Vec<_> = chunk.iter().map(QAItem::query).collect();
        out.extend(predict_batch(weights, config, &queries)?);
    }
    Ok(out)
}

type PredictionsAndRefs = (Vec<Vec<usize>>, Vec<Vec<usize>>);

/// Groups `items` by (report split, category) and scores each group.
pub fn report_for_items(
    weights: &ModelWeights,
    config: &ModelConfig,
    items: &[QAItem],
    layout: &VocabLayout,
    pool: &RefusalPool,
) -> Result<EvalReport> {
    let preds = predict_items(weights, config, items)?;
    let mut groups: BTreeMap<(&str, &str), PredictionsAndRefs> = BTreeMap::new();
    for (item, pred) in items.iter().zip(preds) {
        let g = groups
            .entry((report_split(item.split), item.category.as_str()))
            .or_default();
        g.0.push(pred);
        g.1.push(item.answer.clone());
    }
    let rows = groups
        .into_iter()
        .map(|((split, category), (p, r))| metric_row(split, category, &p, &r, layout, pool))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        rows,
        manifest: BTreeMap::new(),
    })
}

/// Scores every evaluation variant (variant >= 1) of `dataset`.
pub fn evaluate_model(
    weights: &ModelWeights,
    config: &ModelConfig,
    dataset: &Dataset,
    pool: &RefusalPool,
) -> Result<EvalReport> {
    let items = dataset.eval_items();
    if items.is_empty() {
        return Err(Error::Config("dataset has no evaluation variants".into()));
    }
    report_for_items(weights, config, &items, &dataset.layout, pool)
}

impl EvalReport {
    pub fn row(&self, split: &str, category: Category) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.category == category.as_str())
    }

    /// Canonical JSON: sorted keys, `%.6f` floats, one row per line.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n  \"manifest\": {");
        for (i, (k, v)) in self.manifest.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "\n    {}: {}",
                serde_json::to_string(k).expect("string"),
                serde_json::to_string(v).expect("string")
            );
        }
        if !self.manifest.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("},\n  \"rows\": [");
        for (i, r) in self.rows.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let opt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| format!("{x:.6}"));
            let _ = write!(
                s,
                "\n    {{\"category\": {}, \"exact_match\": {:.6}, \"fact_score\": {}, \
                 \"forget_rate\": {:.6}, \"meaningful_score\": {}, \"n_items\": {}, \
                 \"refusal_rate\": {:.6}, \"rouge_l_f1\": {:.6}, \"rouge_l_precision\": {:.6}, \
                 \"rouge_l_recall\": {:.6}, \"split\": {}, \"token_accuracy\": {:.6}, \
                 \"wellformed_rate\": {:.6}}}",
                serde_json::to_string(&r.category).expect("string"),
                r.exact_match,
                opt(r.fact_score),
                r.forget_rate,
                opt(r.meaningful_score),
                r.n_items,
                r.refusal_rate,
                r.rouge_l_f1,
                r.rouge_l_precision,
                r.rouge_l_recall,
                serde_json::to_string(&r.split).expect("string"),
                r.token_accuracy,
                r.wellformed_rate,
            );
        }
        if !self.rows.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("]\n}\n");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.split,
                r.category,
                r.n_items,
                r.rouge_l_f1,
                r.exact_match,
                r.token_accuracy,
                r.refusal_rate,
                r.wellformed_rate
            );
        }
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_json(&text)
}

fn expect_same_keys(a: &EvalReport, b: &EvalReport) -> Result<()> {
    let ka: Vec<_> = a.rows.iter().map(MetricRow::key).collect();
    let kb: Vec<_> = b.rows.iter().map(MetricRow::key).collect();
    if ka != kb {
        return Err(Error::SchemaMismatch(format!(
            "report rows differ: {ka:?} vs {kb:?}"
        )));
    }
    Ok(())
}

/// `a - b` metric by metric, as CSV with the report columns. `n` is the
/// difference in item counts.
pub fn diff_reports(a: &EvalReport, b: &EvalReport) -> Result<String> {
    expect_same_keys(a, b)?;
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let d: Vec<String> = ra
            .metrics()
            .iter()
            .zip(rb.metrics())
            .map(|(x, y)| format!("{:.6}", x - y))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            ra.split,
            ra.category,
            ra.n_items as i64 - rb.n_items as i64,
            d.join(",")
        );
    }
    Ok(s)
}

/// Side-by-side CSV: one row per (split, category), one column group per
/// labelled report in input order.
pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<String> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    for (_, r) in &reports[1..] {
        expect_same_keys(first, r)?;
    }
    let metrics = ["n", "rouge_l_f1", "exact", "token", "refusal", "wellformed"];
    let mut s = String::from("split,category");
    for (label, _) in reports {
        for m in metrics {
            let _ = write!(s, ",{label}:{m}");
        }
    }
    s.push('\n');
    for (i, row) in first.rows.iter().enumerate() {
        let _ = write!(s, "{},{}", row.split, row.category);
        for (_, r) in reports {
            let r = &r.rows[i];
            let _ = write!(s, ",{}", r.n_items);
            for v in r.metrics() {
                let _ = write!(s, ",{v:.6}");
            }
        }
        s.push('\n');
    }
    Ok(s)
}
