//! Synthetic forget/retain/understanding benchmark.
//!
//! Each profile owns a standard-normal feature vector (its "image"), a pair
//! of name tokens, and `A` attributes whose answers are drawn uniformly at
//! random and independently of the feature, so they can only be memorized.
//! Understanding questions ask for the quartile bucket of one feature
//! component and are answerable from the input alone.
//!
//! A further set of unknown profiles never has its attributes revealed: their
//! memory questions are answered with a refusal in the fine-tuning set, so
//! the original model already knows how to decline questions about people it
//! has not memorized.
//!
//! Question templates (one filler token per surface variant; variant 0 is
//! the canonical training phrasing):
//!
//! ```text
//! image_memory   [IMG, attr_k, filler]              feature = profile feature
//! text_memory    [TXT, name_a, name_b, attr_k, filler]  feature = zero
//! understanding  [UND, comp_j, filler]              feature = profile feature
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Query};
use crate::numerics::SeededRng;

/// Quartile thresholds of the standard normal distribution.
pub const BUCKET_THRESHOLDS: [f64; 3] = [-0.6745, 0.0, 0.6745];

pub const ANSWER_PAD: usize = 0;
pub const QUESTION_PAD: usize = 0;

const ALLOWED_RATIOS: [f64; 3] = [0.05, 0.10, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ImageMemory,
    TextMemory,
    Understanding,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::ImageMemory,
        Category::TextMemory,
        Category::Understanding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ImageMemory => "image_memory",
            Category::TextMemory => "text_memory",
            Category::Understanding => "understanding",
        }
    }

    pub fn is_memory(self) -> bool {
        !matches!(self, Category::Understanding)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Forget,
    RetainFew,
    Retain,
    Holdout,
    Unknown,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Forget => "forget",
            Split::RetainFew => "retain_few",
            Split::Retain => "retain",
            Split::Holdout => "holdout",
            Split::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Benchmark sizing and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub n_profiles: usize,
    pub n_holdout: usize,
    /// Profiles whose memory questions are trained with refusal answers.
    pub n_unknown: usize,
    pub feature_dim: usize,
    pub n_attributes: usize,
    pub n_understanding: usize,
    pub forget_ratio: f64,
    pub n_variants: usize,
    pub seed: u64,
    pub answer_len: usize,
    /// Tokens per memorized attribute answer.
    pub memory_answer_len: usize,
    pub n_attribute_values: usize,
    pub n_name_tokens: usize,
    pub n_fillers: usize,
    pub pool_size: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_profiles: 200,
            n_holdout: 50,
            n_unknown: 50,
            feature_dim: 16,
            n_attributes: 4,
            n_understanding: 4,
            forget_ratio: 0.10,
            n_variants: 3,
            seed: 1,
            answer_len: 4,
            memory_answer_len: 3,
            n_attribute_values: 16,
            n_name_tokens: 26,
            n_fillers: 12,
            pool_size: 16,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_RATIOS
            .iter()
            .any(|r| (r - self.forget_ratio).abs() < 1e-12)
        {
            return Err(Error::Config(format!(
                "forget_ratio {} not in {{0.05, 0.10, 0.15}}",
                self.forget_ratio
            )));
        }
        let positive = [
            ("n_profiles", self.n_profiles),
            ("feature_dim", self.feature_dim),
            ("n_attributes", self.n_attributes),
            ("n_understanding", self.n_understanding),
            ("n_variants", self.n_variants),
            ("answer_len", self.answer_len),
            ("memory_answer_len", self.memory_answer_len),
            ("n_attribute_values", self.n_attribute_values),
            ("n_name_tokens", self.n_name_tokens),
            ("n_fillers", self.n_fillers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("bench.{name} must be >= 1")));
            }
        }
        if self.n_variants < 2 {
            return Err(Error::Config(
                "bench.n_variants must be >= 2 (variant 0 trains, >= 1 evaluates)".into(),
            ));
        }
        if self.n_understanding > self.feature_dim {
            return Err(Error::Config(format!(
                "n_understanding {} exceeds feature_dim {}",
                self.n_understanding, self.feature_dim
            )));
        }
        if self.memory_answer_len > self.answer_len || self.answer_len < 2 {
            return Err(Error::Config(
                "answers (memory and 2-token refusals) must fit in answer_len".into(),
            ));
        }
        if self.n_fillers < self.n_variants {
            return Err(Error::VocabOverflow(format!(
                "{} variants need at least as many filler tokens, have {}",
                self.n_variants, self.n_fillers
            )));
        }
        let total = self.total_profiles();
        let pairs = self.n_name_tokens * (self.n_name_tokens.saturating_sub(1)) / 2;
        if pairs < total {
            return Err(Error::VocabOverflow(format!(
                "{} name tokens give {pairs} distinct names for {total} profiles",
                self.n_name_tokens
            )));
        }
        let layout = VocabLayout::new(self);
        if self.pool_size < 8 || self.pool_size > layout.refuse_start_len * layout.refuse_body_len {
            return Err(Error::Config(format!(
                "pool_size {} outside [8, {}]",
                self.pool_size,
                layout.refuse_start_len * layout.refuse_body_len
            )));
        }
        Ok(())
    }

    pub fn total_profiles(&self) -> usize {
        self.n_profiles + self.n_holdout + self.n_unknown
    }

    /// Number of forget profiles, `round_half_up(ratio · n_profiles)`.
    pub fn forget_profiles(&self) -> usize {
        round_half_up(self.forget_ratio * self.n_profiles as f64)
    }
}

/// Round half up, robust to ratios such as 0.15 · 10 = 1.4999999999999998.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Token id ranges for both vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub answer_pad: usize,
    pub refuse_start_begin: usize,
    pub refuse_start_len: usize,
    pub refuse_body_begin: usize,
    pub refuse_body_len: usize,
    pub bucket_begin: usize,
    pub bucket_len: usize,
    pub attribute_begin: usize,
    pub attribute_len: usize,
    pub answer_vocab: usize,

    pub question_pad: usize,
    pub image_marker: usize,
    pub text_marker: usize,
    pub understanding_marker: usize,
    pub attr_key_begin: usize,
    pub attr_key_len: usize,
    pub component_key_begin: usize,
    pub component_key_len: usize,
    pub name_begin: usize,
    pub name_len: usize,
    pub filler_begin: usize,
    pub filler_len: usize,
    pub question_vocab: usize,
    pub max_question_len: usize,
}

/// Answer sub-vocabularies used by the well-formedness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerClass {
    Pad,
    Refusal,
    Bucket,
    Attribute,
}

impl VocabLayout {
    pub fn new(spec: &BenchSpec) -> Self {
        let refuse_start_len = 4;
        let refuse_body_len = 4;
        let refuse_start_begin = 1;
        let refuse_body_begin = refuse_start_begin + refuse_start_len;
        let bucket_begin = refuse_body_begin + refuse_body_len;
        let bucket_len = 4;
        let attribute_begin = bucket_begin + bucket_len;
        let answer_vocab = attribute_begin + spec.n_attribute_values;

        let attr_key_begin = 4;
        let component_key_begin = attr_key_begin + spec.n_attributes;
        let name_begin = component_key_begin + spec.n_understanding;
        let filler_begin = name_begin + spec.n_name_tokens;
        let question_vocab = filler_begin + spec.n_fillers;
        Self {
            answer_pad: ANSWER_PAD,
            refuse_start_begin,
            refuse_start_len,
            refuse_body_begin,
            refuse_body_len,
            bucket_begin,
            bucket_len,
            attribute_begin,
            attribute_len: spec.n_attribute_values,
            answer_vocab,
            question_pad: QUESTION_PAD,
            image_marker: 1,
            text_marker: 2,
            understanding_marker: 3,
            attr_key_begin,
            attr_key_len: spec.n_attributes,
            component_key_begin,
            component_key_len: spec.n_understanding,
            name_begin,
            name_len: spec.n_name_tokens,
            filler_begin,
            filler_len: spec.n_fillers,
            question_vocab,
            max_question_len: 5,
        }
    }

    pub fn refuse_start_tokens(&self) -> Vec<usize> {
        (self.refuse_start_begin..self.refuse_start_begin + self.refuse_start_len).collect()
    }

    pub fn bucket_token(&self, bucket: usize) -> usize {
        self.bucket_begin + bucket
    }

    pub fn classify_answer(&self, token: usize) -> Option<AnswerClass> {
        let in_range = |begin: usize, len: usize| token >= begin && token < begin + len;
        if token == self.answer_pad {
            Some(AnswerClass::Pad)
        } else if in_range(self.refuse_start_begin, self.refuse_start_len)
            || in_range(self.refuse_body_begin, self.refuse_body_len)
        {
            Some(AnswerClass::Refusal)
        } else if in_range(self.bucket_begin, self.bucket_len) {
            Some(AnswerClass::Bucket)
        } else if in_range(self.attribute_begin, self.attribute_len) {
            Some(AnswerClass::Attribute)
        } else {
            None
        }
    }

    /// Model configuration sized for this vocabulary.
    pub fn model_config(
        &self,
        spec: &BenchSpec,
        embed_dim: usize,
        hidden_dim: usize,
        hidden_layers: usize,
    ) -> ModelConfig {
        ModelConfig {
            feature_dim: spec.feature_dim,
            question_vocab: self.question_vocab,
            answer_vocab: self.answer_vocab,
            embed_dim,
            hidden_dim,
            hidden_layers,
            answer_len: spec.answer_len,
            max_question_len: self.max_question_len,
        }
    }
}

/// Maps a real value to its quartile bucket index 0..4 (Q1..Q4).
/// Intervals are closed on the left: `[-0.6745, 0)` is Q2, `[0, 0.6745)` is Q3.
pub fn bucket_index(value: f64) -> usize {
    BUCKET_THRESHOLDS.iter().filter(|&&t| value >= t).count()
}

/// Understanding answer token for `value`.
pub fn bucket(layout: &VocabLayout, value: f64) -> usize {
    layout.bucket_token(bucket_index(value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: usize,
    pub feature: Vec<f64>,
    pub name_tokens: Vec<usize>,
    pub attributes: Vec<Vec<usize>>,
    pub holdout: bool,
    pub unknown: bool,
}

/// `n_profiles` trained profiles, then `n_holdout` holdout and `n_unknown`
/// unknown profiles.
pub fn generate_profiles(spec: &BenchSpec) -> Result<Vec<Profile>> {
    spec.validate()?;
    let layout = VocabLayout::new(spec);
    let total = spec.total_profiles();
    let unknown_begin = spec.n_profiles + spec.n_holdout;

    let mut pairs = Vec::new();
    for a in 0..spec.n_name_tokens {
        for b in a + 1..spec.n_name_tokens {
            pairs.push([layout.name_begin + a, layout.name_begin + b]);
        }
    }
    SeededRng::stream(spec.seed, 0x4E41_4D45).shuffle(&mut pairs);

    Ok((0..total)
        .map(|id| {
            let mut rng = SeededRng::stream(spec.seed, 0x1000_0000 + id as u64);
            let feature = (0..spec.feature_dim).map(|_| rng.normal()).collect();
            let attributes = (0..spec.n_attributes)
                .map(|_| {
                    (0..spec.memory_answer_len)
                        .map(|_| layout.attribute_begin + rng.below(spec.n_attribute_values))
                        .collect()
                })
                .collect();
            Profile {
                id,
                feature,
                name_tokens: pairs[id].to_vec(),
                attributes,
                holdout: id >= spec.n_profiles && id < unknown_begin,
                unknown: id >= unknown_begin,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub profile: usize,
    pub category: Category,
    pub split: Split,
    pub variant: usize,
    /// `None` is the zero vector (text-only input).
    pub feature: Option<Vec<f64>>,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
}

impl QAItem {
    pub fn query(&self) -> Query<'_> {
        Query::new(self.feature.as_deref(), &self.question)
    }

    /// The attribute or component key token, shared across variants.
    pub fn key_token(&self) -> usize {
        match self.category {
            Category::TextMemory => self.question[3],
            _ => self.question[1],
        }
    }

    /// Identity of the underlying fact: (profile, category, key).
    pub fn fact_id(&self) -> (usize, Category, usize) {
        (self.profile, self.category, self.key_token())
    }
}

/// Fixed set of refusal answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalPool {
    pub sequences: Vec<Vec<usize>>,
    pub refuse_start: Vec<usize>,
}

impl RefusalPool {
    /// Two-token refusals `[start, body]`, `spec.pool_size` of them chosen
    /// from all start/body combinations.
    pub fn build(spec: &BenchSpec, layout: &VocabLayout) -> Result<Self> {
        spec.validate()?;
        let mut all = Vec::new();
        for s in 0..layout.refuse_start_len {
            for b in 0..layout.refuse_body_len {
                all.push(vec![layout.refuse_start_begin + s, layout.refuse_body_begin + b]);
            }
        }
        SeededRng::stream(spec.seed, 0x4944_4B00).shuffle(&mut all);
        all.truncate(spec.pool_size);
        Ok(Self {
            sequences: all,
            refuse_start: layout.refuse_start_tokens(),
        })
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        self.sequences.iter().any(|s| s == seq)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Variant 0 is the canonical fixed-format question and always uses the
/// first filler; evaluation variants draw distinct paraphrase fillers from
/// the rest, shuffled per fact.
fn variant_fillers(spec: &BenchSpec, layout: &VocabLayout, fact: u64) -> Vec<usize> {
    let mut fillers: Vec<usize> = (1..spec.n_fillers).map(|f| layout.filler_begin + f).collect();
    SeededRng::stream(spec.seed, 0x2000_0000 ^ fact).shuffle(&mut fillers);
    fillers.truncate(spec.n_variants - 1);
    fillers.insert(0, layout.filler_begin);
    fillers
}

/// Every QA item in every surface variant. Trained profiles start tagged
/// `retain` and holdout profiles `holdout`; [`split_sets`] assigns the rest.
/// Unknown profiles get memory items only, tagged `unknown` and answered
/// with a pool refusal.
pub fn build_qa(profiles: &[Profile], spec: &BenchSpec, pool: &RefusalPool) -> Result<Vec<QAItem>> {
    spec.validate()?;
    let layout = VocabLayout::new(spec);
    for p in profiles {
        for answer in &p.attributes {
            if pool.contains(answer) {
                return Err(Error::Config("refusal pool overlaps an attribute answer".into()));
            }
        }
    }
    let mut items = Vec::new();
    for p in profiles {
        let split = if p.holdout {
            Split::Holdout
        } else if p.unknown {
            Split::Unknown
        } else {
            Split::Retain
        };
        let mut refusals = SeededRng::stream(spec.seed, 0x554E_4B00_0000 + p.id as u64);
        let mut answer_for = |attr: &Vec<usize>| {
            if p.unknown {
                pool.sequences[refusals.below(pool.len())].clone()
            } else {
                attr.clone()
            }
        };
        let fact_base = (p.id as u64) << 16;
        let mut push = |category: Category, key: usize, question: &dyn Fn(usize) -> Vec<usize>, answer: Vec<usize>, feature: Option<&Vec<f64>>| {
            let cat_id = Category::ALL.iter().position(|c| *c == category).unwrap() as u64;
            let fillers = variant_fillers(spec, &layout, fact_base | (cat_id << 8) | key as u64);
            for (variant, filler) in fillers.into_iter().enumerate() {
                items.push(QAItem {
                    profile: p.id,
                    category,
                    split,
                    variant,
                    feature: feature.cloned(),
                    question: question(filler),
                    answer: answer.clone(),
                });
            }
        };
        if !p.holdout {
            for (k, answer) in p.attributes.iter().enumerate() {
                let attr = layout.attr_key_begin + k;
                push(
                    Category::ImageMemory,
                    k,
                    &|f| vec![layout.image_marker, attr, f],
                    answer_for(answer),
                    Some(&p.feature),
                );
            }
            for (k, answer) in p.attributes.iter().enumerate() {
                let attr = layout.attr_key_begin + k;
                let names = p.name_tokens.clone();
                push(
                    Category::TextMemory,
                    k,
                    &|f| vec![layout.text_marker, names[0], names[1], attr, f],
                    answer_for(answer),
                    None,
                );
            }
        }
        if p.unknown {
            continue;
        }
        for j in 0..spec.n_understanding {
            let comp = layout.component_key_begin + j;
            push(
                Category::Understanding,
                j,
                &|f| vec![layout.understanding_marker, comp, f],
                vec![bucket(&layout, p.feature[j])],
                Some(&p.feature),
            );
        }
    }
    Ok(items)
}

/// Tagged benchmark items with split accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: BenchSpec,
    pub layout: VocabLayout,
    pub pool: RefusalPool,
    pub items: Vec<QAItem>,
}

/// Picks forget profiles uniformly at random and tags their memory items
/// `forget`; then, per memory category, tags as many retain facts
/// `retain_few` as there are forget facts. Understanding items keep their
/// profile's split (`forget`, `retain` or `holdout`).
pub fn split_sets(mut items: Vec<QAItem>, spec: &BenchSpec) -> Result<Vec<QAItem>> {
    spec.validate()?;
    let trained: BTreeSet<usize> = items
        .iter()
        .filter(|i| i.split == Split::Retain)
        .map(|i| i.profile)
        .collect();
    let wanted = spec.forget_profiles();
    if wanted > trained.len() {
        return Err(Error::RatioTooLarge {
            wanted,
            available: trained.len(),
        });
    }
    let mut candidates: Vec<usize> = trained.into_iter().collect();
    let mut rng = SeededRng::stream(spec.seed, 0x5350_4C54);
    rng.shuffle(&mut candidates);
    let forget: BTreeSet<usize> = candidates[..wanted].iter().copied().collect();

    for item in items.iter_mut() {
        if item.split == Split::Retain && forget.contains(&item.profile) {
            item.split = Split::Forget;
        }
    }

    for category in [Category::ImageMemory, Category::TextMemory] {
        let facts = |split: Split| -> Vec<(usize, Category, usize)> {
            let set: BTreeSet<_> = items
                .iter()
                .filter(|i| i.category == category && i.split == split)
                .map(QAItem::fact_id)
                .collect();
            set.into_iter().collect()
        };
        let n_forget = facts(Split::Forget).len();
        let mut retain_facts = facts(Split::Retain);
        rng.shuffle(&mut retain_facts);
        let chosen: BTreeSet<_> = retain_facts.into_iter().take(n_forget).collect();
        for item in items.iter_mut() {
            if item.category == category
                && item.split == Split::Retain
                && chosen.contains(&item.fact_id())
            {
                item.split = Split::RetainFew;
            }
        }
    }
    Ok(items)
}

/// Replaces each answer with a refusal drawn uniformly from `pool`.
pub fn make_refusal_set(forget: &[QAItem], pool: &RefusalPool, seed: u64) -> Result<Vec<QAItem>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = SeededRng::stream(seed, 0x5245_4655);
    Ok(forget
        .iter()
        .map(|item| QAItem {
            answer: pool.sequences[rng.below(pool.len())].clone(),
            ..item.clone()
        })
        .collect())
}

impl Dataset {
    /// Profiles, QA items, splits and refusal pool for `spec`.
    pub fn generate(spec: &BenchSpec) -> Result<Self> {
        spec.validate()?;
        let layout = VocabLayout::new(spec);
        let pool = RefusalPool::build(spec, &layout)?;
        let profiles = generate_profiles(spec)?;
        let items = build_qa(&profiles, spec, &pool)?;
        let items = split_sets(items, spec)?;
        Ok(Self {
            spec: spec.clone(),
            layout,
            pool,
            items,
        })
    }

    fn select(&self, pred: impl Fn(&QAItem) -> bool) -> Vec<QAItem> {
        self.items.iter().filter(|i| pred(i)).cloned().collect()
    }

    /// Variant-0 items of every trained profile: the original fine-tuning set.
    pub fn training_items(&self) -> Vec<QAItem> {
        self.select(|i| i.variant == 0 && i.split != Split::Holdout)
    }

    /// Variant-0 memory items of forget profiles (`D_f`).
    pub fn forget_set(&self) -> Vec<QAItem> {
        self.select(|i| i.variant == 0 && i.split == Split::Forget && i.category.is_memory())
    }

    /// Variant-0 few-shot retain items (`D_r^few`).
    pub fn retain_few_set(&self) -> Vec<QAItem> {
        self.select(|i| i.variant == 0 && i.split == Split::RetainFew)
    }

    /// Items with variant >= 1, used for evaluation.
    pub fn eval_items(&self) -> Vec<QAItem> {
        self.select(|i| i.variant >= 1)
    }

    /// Understanding items of every profile (`D_u`).
    pub fn understanding_set(&self) -> Vec<QAItem> {
        self.select(|i| i.category == Category::Understanding)
    }

    pub fn model_config(&self, embed_dim: usize, hidden_dim: usize, hidden_layers: usize) -> ModelConfig {
        self.layout
            .model_config(&self.spec, embed_dim, hidden_dim, hidden_layers)
    }

    /// Writes `<stem>.jsonl` (one item per line) and `<stem>.meta.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{stem}.jsonl"));
        let mut buf = Vec::new();
        for item in &self.items {
            serde_json::to_writer(&mut buf, item)?;
            buf.push(b'\n');
        }
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;

        let meta = Sidecar {
            bench: self.spec.clone(),
            vocab: self.layout.clone(),
            pool: self.pool.clone(),
        };
        let meta_path = dir.join(format!("{stem}.meta.json"));
        let mut f = std::fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{stem}.meta.json"));
        let meta_bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Sidecar = serde_json::from_slice(&meta_bytes)?;
        let path = dir.join(format!("{stem}.jsonl"));
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut items = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            spec: meta.bench,
            layout: meta.vocab,
            pool: meta.pool,
            items,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    bench: BenchSpec,
    vocab: VocabLayout,
    pool: RefusalPool,
}
