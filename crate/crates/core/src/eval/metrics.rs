use crate::datagen::{AnswerClass, RefusalPool, VocabLayout, ANSWER_PAD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence (two-row dynamic program).
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sequence-level ROUGE-L with the balanced (β = 1) F-measure.
/// Any empty side scores zero.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    RougeScore {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    }
}

/// Drops trailing PAD tokens.
pub fn strip_pad(tokens: &[usize]) -> &[usize] {
    let end = tokens
        .iter()
        .rposition(|&t| t != ANSWER_PAD)
        .map_or(0, |p| p + 1);
    &tokens[..end]
}

/// Fraction of predictions whose first token is a refusal start.
pub fn refusal_rate(predictions: &[Vec<usize>], refuse_start: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let n = predictions
        .iter()
        .filter(|p| p.first().is_some_and(|t| refuse_start.contains(t)))
        .count();
    n as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub exact_match: f64,
    pub token_accuracy: f64,
}

/// Exact match of PAD-stripped sequences, and per-position agreement
/// where every position of the longer sequence counts.
pub fn accuracy(predictions: &[Vec<usize>], references: &[Vec<usize>]) -> Result<Accuracy> {
    if predictions.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(Accuracy {
            exact_match: 0.0,
            token_accuracy: 0.0,
        });
    }
    let mut exact = 0usize;
    let mut tokens = 0.0;
    for (p, r) in predictions.iter().zip(references) {
        let (p, r) = (strip_pad(p), strip_pad(r));
        if p == r {
            exact += 1;
        }
        let longest = p.len().max(r.len());
        tokens += if longest == 0 {
            1.0
        } else {
            p.iter().zip(r).filter(|(a, b)| a == b).count() as f64 / longest as f64
        };
    }
    let n = predictions.len() as f64;
    Ok(Accuracy {
        exact_match: exact as f64 / n,
        token_accuracy: tokens / n,
    })
}

/// A prediction is well-formed if it is exactly a pool refusal, or if its
/// non-PAD tokens all come from one answer sub-vocabulary and its PADs form
/// a contiguous suffix.
pub fn is_wellformed(prediction: &[usize], layout: &VocabLayout, pool: &RefusalPool) -> bool {
    let body = strip_pad(prediction);
    if pool.contains(body) {
        return true;
    }
    if body.is_empty() {
        return false;
    }
    let mut class = None;
    for &t in body {
        match layout.classify_answer(t) {
            Some(AnswerClass::Pad) | None => return false,
            Some(c) => match class {
                None => class = Some(c),
                Some(prev) if prev != c => return false,
                _ => {}
            },
        }
    }
    // refusal tokens only count through exact pool membership
    class != Some(AnswerClass::Refusal)
}

pub fn wellformed_rate(predictions: &[Vec<usize>], layout: &VocabLayout, pool: &RefusalPool) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let n = predictions
        .iter()
        .filter(|p| is_wellformed(p, layout, pool))
        .count();
    n as f64 / predictions.len() as f64
}
