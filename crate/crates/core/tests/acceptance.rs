//! End-to-end acceptance suite. Each test prints one PASS/FAIL line to
//! stderr (bypassing the harness capture) and then asserts.
//!
//! The three desk-scale seeds are trained once and shared by the
//! experiment-level criteria.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use smfa::cli::{cmd_eval, cmd_gen, cmd_sweep_k, cmd_train, cmd_unlearn, ExperimentConfig, Paths};
use smfa::datagen::{Category, Dataset};
use smfa::eval::{evaluate_model, rouge_l, EvalReport};
use smfa::methods::{
    ablate_neurons, fit_original, ga_difference_unlearn, kl_minimization_unlearn,
    manu_prune_count, manu_unlearn, train_adapters, trunk_activations, FitMetrics, ManuConfig,
};
use smfa::model::{
    apply_delta, load_checkpoint, load_weights, save_weights, Checkpoint, DeltaAdapter, DeltaMeta,
    ModelWeights, Sign,
};
use smfa::numerics::{SeededRng, Tape, Tensor, Var};
use smfa::sculptor::{
    combine_mask, conflict_mask, magnitude_mask, sculpt, sculpt_pipeline, MaskSet, SculptConfig,
};
use smfa::Error;

const SEEDS: [u64; 3] = [1, 2, 3];
const SWEEP_K: [f64; 4] = [0.0, 1.0, 5.0, 25.0];

fn verdict(n: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {n:>2} [{tag}] {detail}");
}

// ---------------------------------------------------------------------------
// random delta pairs

fn entry(rng: &mut SeededRng) -> f64 {
    // small integers make zeros and exact ties common
    if rng.uniform() < 0.4 {
        rng.below(7) as f64 - 3.0
    } else {
        rng.uniform() * 10.0 - 5.0
    }
}

fn dense_entry(rng: &mut SeededRng) -> f64 {
    let m = 0.5 + 1.5 * rng.uniform();
    if rng.uniform() < 0.5 {
        -m
    } else {
        m
    }
}

struct Pair {
    base: ModelWeights,
    f: DeltaAdapter,
    a: DeltaAdapter,
}

fn random_pair(rng: &mut SeededRng, dense_anchor: bool) -> Pair {
    let layers = 1 + rng.below(3);
    let mut base = BTreeMap::new();
    let mut f = BTreeMap::new();
    let mut a = BTreeMap::new();
    for l in 0..layers {
        let (r, c) = (1 + rng.below(8), 1 + rng.below(8));
        let name = format!("l{l}.weight");
        let n = r * c;
        let bv: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let fv: Vec<f64> = (0..n).map(|_| entry(rng)).collect();
        let av: Vec<f64> = (0..n)
            .map(|_| if dense_anchor { dense_entry(rng) } else { entry(rng) })
            .collect();
        base.insert(name.clone(), Tensor::from_vec(&[r, c], bv).unwrap());
        f.insert(name.clone(), Tensor::from_vec(&[r, c], fv).unwrap());
        a.insert(name, Tensor::from_vec(&[r, c], av).unwrap());
    }
    let base = ModelWeights::from_tensors(base);
    let meta = |m: &str| DeltaMeta {
        method: m.into(),
        base_digest: base.digest(),
        seed: 0,
        k: None,
    };
    let f = DeltaAdapter {
        tensors: f,
        meta: meta("mfa"),
    };
    let a = DeltaAdapter {
        tensors: a,
        meta: meta("anchor"),
    };
    Pair { base, f, a }
}

/// Brute-force masks and sculpted delta for one layer, straight from the
/// definitions.
fn oracle_layer(f: &[f64], a: &[f64], k: f64, eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut fsq = 0.0;
    let mut asq = 0.0;
    for i in 0..f.len() {
        fsq += f[i] * f[i];
        asq += a[i] * a[i];
    }
    let rho = fsq.sqrt() / (asq.sqrt() + eps);
    let mut c = Vec::new();
    let mut r = Vec::new();
    let mut m = Vec::new();
    let mut sculpted = Vec::new();
    for i in 0..f.len() {
        let ci = (f[i] > 0.0 && a[i] < 0.0) || (f[i] < 0.0 && a[i] > 0.0);
        let ri = k * rho * a[i].abs() < f[i].abs();
        c.push(if ci { 1.0 } else { 0.0 });
        r.push(if ri { 1.0 } else { 0.0 });
        m.push(if ci && ri { 1.0 } else { 0.0 });
        sculpted.push(if ci && ri { 0.0 } else { f[i] });
    }
    (c, r, m, sculpted)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn criterion_01_mask_oracle() {
    let mut rng = SeededRng::new(101);
    let pairs: Vec<(Pair, f64)> = (0..100)
        .map(|i| {
            let k = [0.0, 0.5, 1.0, 5.0, 25.0][i % 5] + if i % 7 == 0 { rng.uniform() } else { 0.0 };
            (random_pair(&mut rng, false), k)
        })
        .collect();
    let start = Instant::now();
    let computed: Vec<_> = pairs
        .iter()
        .map(|(p, k)| {
            let cfg = SculptConfig::with_k(*k);
            let c = conflict_mask(&p.f, &p.a).unwrap();
            let r = magnitude_mask(&p.f, &p.a, &cfg).unwrap();
            let m = combine_mask(&c, &r).unwrap();
            let s = sculpt(&p.f, &m, Some(*k)).unwrap();
            (c, r, m, s)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let mut mismatches = 0;
    for ((p, k), (c, r, m, s)) in pairs.iter().zip(&computed) {
        for (name, ft) in &p.f.tensors {
            let (oc, or, om, os) = oracle_layer(ft.data(), p.a.tensors[name].data(), *k, 1e-8);
            let same = bits(c.masks[name].data()) == bits(&oc)
                && bits(r.masks[name].data()) == bits(&or)
                && bits(m.masks[name].data()) == bits(&om)
                && bits(s.tensors[name].data()) == bits(&os);
            if !same {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0 && secs < 1.0;
    verdict(
        1,
        pass,
        &format!("mask oracle: {mismatches} mismatching layers over 100 pairs, {secs:.4}s (< 1s)"),
    );
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_02_k_monotonicity() {
    let ks = [0.0, 0.5, 1.0, 5.0, 25.0, 1e6];
    let mut rng = SeededRng::new(202);
    let mut ok = true;
    let mut notes = Vec::new();
    for i in 0..20 {
        let p = random_pair(&mut rng, true);
        let masks: Vec<MaskSet> = ks
            .iter()
            .map(|&k| sculpt_pipeline(&p.base, &p.f, &p.a, &SculptConfig::with_k(k)).unwrap().mask)
            .collect();
        for w in masks.windows(2) {
            if w[1].count_ones() > w[0].count_ones() {
                ok = false;
                notes.push(format!("pair {i}: count increased"));
            }
            for (name, m1) in &w[0].masks {
                let m2 = &w[1].masks[name];
                if m1.data().iter().zip(m2.data()).any(|(a, b)| b > a) {
                    ok = false;
                    notes.push(format!("pair {i}: entrywise increase in {name}"));
                }
            }
        }
        let last = sculpt_pipeline(&p.base, &p.f, &p.a, &SculptConfig::with_k(1e6)).unwrap();
        if last.mask.count_ones() != 0 {
            ok = false;
            notes.push(format!("pair {i}: mask nonzero at k=1e6"));
        }
        for (name, b) in p.base.tensors() {
            let expect: Vec<f64> = b
                .data()
                .iter()
                .zip(p.f.tensors[name].data())
                .map(|(x, d)| x + d)
                .collect();
            if bits(last.weights.tensors()[name].data()) != bits(&expect) {
                ok = false;
                notes.push(format!("pair {i}: W_final != base + delta in {name}"));
            }
        }
    }
    verdict(
        2,
        ok,
        &format!("k-monotonicity over 20 pairs and k in {ks:?}; issues: {}", notes.len()),
    );
    assert!(ok, "{notes:?}");
}

#[test]
fn criterion_03_sculpting_identities() {
    let mut rng = SeededRng::new(303);
    let mut ok = true;
    let mut notes = Vec::new();
    for i in 0..50 {
        let p = random_pair(&mut rng, true);

        // identical updates never conflict
        let same = sculpt_pipeline(&p.base, &p.f, &p.f, &SculptConfig::with_k(0.0)).unwrap();
        if same.mask.count_ones() != 0 {
            ok = false;
            notes.push(format!("pair {i}: conflicts with itself"));
        }

        // an all-ones mask restores the base
        let ones = MaskSet {
            masks: p
                .f
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::ones(t.shape())))
                .collect(),
        };
        let restored = apply_delta(&p.base, &sculpt(&p.f, &ones, None).unwrap(), Sign::Plus).unwrap();
        if !restored.bit_eq(&p.base) {
            ok = false;
            notes.push(format!("pair {i}: all-ones mask did not restore base"));
        }
        // the same through the pipeline: opposite dense updates at k = 0
        let neg = DeltaAdapter {
            tensors: p.a.tensors.iter().map(|(n, t)| (n.clone(), t.scale(-1.0))).collect(),
            meta: p.f.meta.clone(),
        };
        let full = sculpt_pipeline(&p.base, &neg, &p.a, &SculptConfig::with_k(0.0)).unwrap();
        if full.mask.count_ones() != full.mask.num_entries() || !full.weights.bit_eq(&p.base) {
            ok = false;
            notes.push(format!("pair {i}: full mask via pipeline did not restore base"));
        }

        // unmasked entries are copied bit for bit
        let out = sculpt_pipeline(&p.base, &p.f, &p.a, &SculptConfig::with_k(1.0)).unwrap();
        for (name, ft) in &p.f.tensors {
            let m = out.mask.masks[name].data();
            let s = out.sculpted.tensors[name].data();
            for j in 0..m.len() {
                if m[j] == 0.0 && s[j].to_bits() != ft.data()[j].to_bits() {
                    ok = false;
                    notes.push(format!("pair {i}: unmasked entry changed in {name}"));
                }
            }
        }
    }
    verdict(3, ok, &format!("sculpting identities over 50 pairs; issues: {}", notes.len()));
    assert!(ok, "{notes:?}");
}

// ---------------------------------------------------------------------------
// gradients

struct Net {
    shapes: Vec<Vec<usize>>,
    kind: usize,
    input: Tensor,
    input2: Tensor,
    targets: Vec<usize>,
    reference: Tensor,
}

impl Net {
    fn random(rng: &mut SeededRng, kind: usize) -> Self {
        let batch = 1 + rng.below(3);
        let d_in = 1 + rng.below(3);
        let hidden = 1 + rng.below(4);
        let classes = 2 + rng.below(3);
        let shapes = match kind {
            // x -> W1 + b1 -> gelu -> W2 + b2 -> cross-entropy
            0 => vec![vec![hidden, d_in], vec![hidden], vec![classes, hidden], vec![classes]],
            // [x | gelu(x W1)] -> W2 -> KL to a fixed reference
            1 => vec![vec![hidden, d_in], vec![classes, d_in + hidden]],
            // (x W1) * (x W2) - x W3, squared norm and mean
            _ => vec![vec![hidden, d_in], vec![hidden, d_in], vec![hidden, d_in]],
        };
        assert!(shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() <= 64);
        let mut t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
        };
        let input = t(&[batch, d_in]);
        let input2 = t(&[batch, d_in]);
        let logits = t(&[batch, classes]);
        let reference = smfa::numerics::log_softmax_rows(&logits).unwrap();
        let targets = (0..batch).map(|_| rng.below(classes)).collect();
        Self {
            shapes,
            kind,
            input,
            input2,
            targets,
            reference,
        }
    }

    fn loss(&self, tape: &mut Tape, p: &[Var]) -> Var {
        let x = tape.constant(self.input.clone());
        match self.kind {
            0 => {
                let h = tape.matmul_nt(x, p[0]).unwrap();
                let h = tape.add_bias(h, p[1]).unwrap();
                let h = tape.gelu(h);
                let o = tape.matmul_nt(h, p[2]).unwrap();
                let o = tape.add_bias(o, p[3]).unwrap();
                tape.softmax_cross_entropy(o, &self.targets).unwrap()
            }
            1 => {
                let h = tape.matmul_nt(x, p[0]).unwrap();
                let h = tape.gelu(h);
                let z = tape.concat_cols(x, h).unwrap();
                let o = tape.matmul_nt(z, p[1]).unwrap();
                tape.kl_from_reference(o, &self.reference).unwrap()
            }
            _ => {
                let x2 = tape.constant(self.input2.clone());
                let a = tape.matmul_nt(x, p[0]).unwrap();
                let b = tape.matmul_nt(x2, p[1]).unwrap();
                let c = tape.matmul_nt(x, p[2]).unwrap();
                let ab = tape.mul(a, b).unwrap();
                let d = tape.sub(ab, c).unwrap();
                let s = tape.sum_squares(d);
                let s = tape.scale(s, 0.5);
                let m = tape.mean(ab);
                tape.add(s, m).unwrap()
            }
        }
    }

    fn eval(&self, params: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let l = self.loss(&mut tape, &vars);
        tape.value(l).item().unwrap()
    }
}

#[test]
fn criterion_04_gradient_check() {
    let h = 1e-5;
    let mut rng = SeededRng::new(404);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let net = Net::random(&mut rng, i % 3);
        let params: Vec<Tensor> = net
            .shapes
            .iter()
            .map(|s| {
                let n = s.iter().product();
                Tensor::from_vec(s, (0..n).map(|_| rng.normal()).collect()).unwrap()
            })
            .collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let loss = net.loss(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        for (pi, v) in vars.iter().enumerate() {
            let g = grads.get(*v).unwrap();
            for j in 0..params[pi].len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[j] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[j] -= h;
                let fd = (net.eval(&plus) - net.eval(&minus)) / (2.0 * h);
                let an = g.data()[j];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let pass = worst <= 1e-4;
    verdict(4, pass, &format!("gradient check on 50 networks: max relative error {worst:.2e} (<= 1e-4)"));
    assert!(pass, "criterion failed; see the verdict line above");
}

// ---------------------------------------------------------------------------
// ROUGE-L

fn lcs_table(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn rouge_oracle(c: &[u32], r: &[u32]) -> f64 {
    let l = lcs_table(c, r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

#[test]
fn criterion_05_rouge_golden() {
    let mut ok = rouge_l(&[1, 2, 3], &[1, 2, 3]).f1 == 1.0;
    ok &= (rouge_l(&['a', 'x', 'c'], &['a', 'b', 'c']).f1 - 2.0 / 3.0).abs() <= 1e-12;
    ok &= rouge_l::<u32>(&[], &[1, 2]).f1 == 0.0;
    ok &= rouge_l::<u32>(&[1], &[]).f1 == 0.0;
    ok &= rouge_l::<u32>(&[], &[]).f1 == 0.0;
    let mut rng = SeededRng::new(505);
    let mut mismatches = 0;
    for _ in 0..200 {
        let lc = rng.below(9);
        let lr = rng.below(9);
        let alpha = 1 + rng.below(5) as u32;
        let c: Vec<u32> = (0..lc).map(|_| rng.below(alpha as usize) as u32).collect();
        let r: Vec<u32> = (0..lr).map(|_| rng.below(alpha as usize) as u32).collect();
        if rouge_l(&c, &r).f1.to_bits() != rouge_oracle(&c, &r).to_bits() {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    verdict(5, ok, &format!("ROUGE-L golden cases; {mismatches} of 200 random pairs differ from the oracle"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// desk-scale experiments

struct SeedRun {
    seed: u64,
    fit_secs: f64,
    epochs: usize,
    fit: FitMetrics,
    original: EvalReport,
    idk: EvalReport,
    c_only: EvalReport,
    r_only: EvalReport,
    /// One report per entry of `SWEEP_K`; the k = 5 entry is SMFA.
    sweep: Vec<EvalReport>,
    ga: EvalReport,
    kl: EvalReport,
    counts: (usize, usize, usize),
    combined_within: bool,
}

impl SeedRun {
    fn smfa(&self) -> &EvalReport {
        &self.sweep[SWEEP_K.iter().position(|&k| k == 5.0).unwrap()]
    }
}

fn run_seed(seed: u64) -> smfa::Result<SeedRun> {
    let cfg = ExperimentConfig::default().with_seed(seed);
    let data = Dataset::generate(&cfg.bench)?;
    let config = cfg.model_config();
    let start = Instant::now();
    let fit = fit_original(&data, &config, &cfg.train, &cfg.targets)?;
    let fit_secs = start.elapsed().as_secs_f64();
    let base = fit.weights;
    let eval = |w: &ModelWeights| evaluate_model(w, &config, &data, &data.pool);

    let forget = data.forget_set();
    let retain = data.retain_few_set();
    let pair = train_adapters(&base, &config, &forget, &retain, &data.pool, &cfg.unlearn_train)?;
    let sculpt_cfg = SculptConfig { k: 5.0, ..cfg.sculpt };
    let c = conflict_mask(&pair.forget, &pair.anchor)?;
    let r = magnitude_mask(&pair.forget, &pair.anchor, &sculpt_cfg)?;
    let m = combine_mask(&c, &r)?;
    let combined_within = m.masks.iter().all(|(name, mm)| {
        mm.data()
            .iter()
            .zip(c.masks[name].data())
            .zip(r.masks[name].data())
            .all(|((x, y), z)| *x <= *y && *x <= *z)
    });
    let with_mask = |mask: &MaskSet| -> smfa::Result<EvalReport> {
        eval(&apply_delta(&base, &sculpt(&pair.forget, mask, Some(5.0))?, Sign::Plus)?)
    };
    let sweep = SWEEP_K
        .iter()
        .map(|&k| {
            let out = sculpt_pipeline(&base, &pair.forget, &pair.anchor, &SculptConfig { k, ..cfg.sculpt })?;
            eval(&out.weights)
        })
        .collect::<smfa::Result<Vec<_>>>()?;
    Ok(SeedRun {
        seed,
        fit_secs,
        epochs: fit.epochs_run,
        fit: fit.metrics,
        original: eval(&base)?,
        idk: eval(&apply_delta(&base, &pair.forget, Sign::Plus)?)?,
        c_only: with_mask(&c)?,
        r_only: with_mask(&r)?,
        sweep,
        ga: eval(&ga_difference_unlearn(&base, &config, &forget, &retain, &cfg.unlearn_train)?)?,
        kl: eval(&kl_minimization_unlearn(&base, &config, &forget, &retain, &cfg.unlearn_train)?)?,
        counts: (c.count_ones(), r.count_ones(), m.count_ones()),
        combined_within,
    })
}

fn runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Result<Vec<SeedRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&s| run_seed(s).map_err(|e| format!("seed {s}: {e}")))
            .collect()
    })
    .as_ref()
    .expect("desk-scale runs failed")
}

fn pooled(report: &EvalReport, split: Option<&str>, keep: impl Fn(&str) -> bool, value: impl Fn(&smfa::eval::MetricRow) -> f64) -> f64 {
    let rows: Vec<_> = report
        .rows
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s) && keep(&r.category))
        .collect();
    let n: usize = rows.iter().map(|r| r.n_items).sum();
    rows.iter().map(|r| value(r) * r.n_items as f64).sum::<f64>() / n as f64
}

fn is_memory(c: &str) -> bool {
    c == Category::ImageMemory.as_str() || c == Category::TextMemory.as_str()
}

fn row(report: &EvalReport, split: &str, c: Category) -> smfa::eval::MetricRow {
    report.row(split, c).cloned().unwrap_or_else(|| panic!("missing row {split}/{c:?}"))
}

fn forget_image_refusal(r: &EvalReport) -> f64 {
    row(r, "forget", Category::ImageMemory).refusal_rate
}

fn retain_image_em(r: &EvalReport) -> f64 {
    row(r, "retain", Category::ImageMemory).exact_match
}

fn retain_memory_em(r: &EvalReport) -> f64 {
    pooled(r, Some("retain"), is_memory, |x| x.exact_match)
}

fn forget_memory(r: &EvalReport, value: impl Fn(&smfa::eval::MetricRow) -> f64) -> f64 {
    pooled(r, Some("forget"), is_memory, value)
}

fn understanding_em(r: &EvalReport) -> f64 {
    pooled(r, None, |c| c == Category::Understanding.as_str(), |x| x.exact_match)
}

fn min_wellformed(r: &EvalReport) -> f64 {
    r.rows.iter().map(|x| x.wellformed_rate).fold(1.0, f64::min)
}

fn pooled_wellformed(r: &EvalReport) -> f64 {
    pooled(r, None, |_| true, |x| x.wellformed_rate)
}

fn at_least_two(passes: &[bool]) -> bool {
    passes.iter().filter(|&&p| p).count() >= 2
}

#[test]
fn criterion_06_original_fit() {
    let runs = runs();
    let mut details = Vec::new();
    let mut pass = true;
    for r in runs {
        let ok = r.fit.memory_exact_match >= 0.95
            && r.fit.holdout_understanding >= 0.80
            && r.epochs <= 400
            && r.fit_secs <= 180.0;
        pass &= ok;
        details.push(format!(
            "seed {}: memory {:.3}, holdout understanding {:.3}, {} epochs, {:.0}s",
            r.seed, r.fit.memory_exact_match, r.fit.holdout_understanding, r.epochs, r.fit_secs
        ));
    }
    verdict(6, pass, &format!("original fit (memory >= 0.95, holdout >= 0.80, <= 180s): {}", details.join("; ")));
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_07_smfa_end_to_end() {
    let runs = runs();
    let mut passes = Vec::new();
    let mut details = Vec::new();
    for r in runs {
        let s = r.smfa();
        let a = forget_image_refusal(s);
        let b = retain_image_em(s) - retain_image_em(&r.original);
        let c = understanding_em(s) - understanding_em(&r.original);
        let d = min_wellformed(s);
        passes.push(a >= 0.8 && b >= -0.15 && c >= -0.10 && d >= 0.9);
        details.push(format!(
            "seed {}: refusal {a:.3}, retain drop {:.3}, understanding drop {:.3}, wellformed {d:.3}",
            r.seed, -b, -c
        ));
    }
    let pass = at_least_two(&passes);
    verdict(7, pass, &format!("SMFA k=5 on >= 2 seeds: {}", details.join("; ")));
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_08_ablation_trend() {
    let runs = runs();
    let mut passes = Vec::new();
    let mut details = Vec::new();
    let mut exact = true;
    for r in runs {
        let smfa = r.smfa();
        let (nc, nr, nm) = r.counts;
        exact &= r.combined_within && nm <= nc.min(nr);
        let ref_smfa = forget_image_refusal(smfa);
        let ref_mfa = forget_image_refusal(&r.idk);
        let ref_c = forget_image_refusal(&r.c_only);
        let ref_r = forget_image_refusal(&r.r_only);
        let ok = retain_memory_em(&r.idk) <= retain_memory_em(smfa)
            && ref_c <= ref_smfa + 0.05
            && ref_r <= ref_smfa + 0.05
            && ref_c <= ref_mfa
            && ref_r <= ref_mfa;
        passes.push(ok);
        details.push(format!(
            "seed {}: retain MFA {:.3} vs SMFA {:.3}; refusal SMFA {ref_smfa:.3}, C {ref_c:.3}, R {ref_r:.3}, MFA {ref_mfa:.3}; |C| {nc} |R| {nr} |M| {nm}",
            r.seed,
            retain_memory_em(&r.idk),
            retain_memory_em(smfa)
        ));
    }
    let pass = exact && at_least_two(&passes);
    verdict(8, pass, &format!("ablation trend: {}", details.join("; ")));
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_09_k_sweep_trend() {
    let runs = runs();
    let mut passes = Vec::new();
    let mut details = Vec::new();
    for r in runs {
        let curve: Vec<f64> = r.sweep.iter().map(|s| forget_memory(s, |x| x.rouge_l_f1)).collect();
        let rises: Vec<f64> = curve.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
        passes.push(rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.03));
        let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
        details.push(format!("seed {}: [{}]", r.seed, shown.join(", ")));
    }
    let pass = at_least_two(&passes);
    verdict(9, pass, &format!("forget ROUGE-L over k {SWEEP_K:?}: {}", details.join("; ")));
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_10_baseline_degradation() {
    let runs = runs();
    let mut passes = Vec::new();
    let mut details = Vec::new();
    for r in runs {
        let smfa = r.smfa();
        let mut ok = true;
        for (name, rep) in [("GA", &r.ga), ("KL", &r.kl)] {
            let fem = forget_memory(rep, |x| x.exact_match);
            let rem = retain_memory_em(rep);
            let wf = pooled_wellformed(rep);
            ok &= fem <= 0.2 && rem <= retain_memory_em(smfa) - 0.2 && wf <= pooled_wellformed(smfa);
            details.push(format!(
                "seed {} {name}: forget em {fem:.3}, retain em {rem:.3} (SMFA {:.3}), wellformed {wf:.3} (SMFA {:.3})",
                r.seed,
                retain_memory_em(smfa),
                pooled_wellformed(smfa)
            ));
        }
        passes.push(ok);
    }
    let pass = at_least_two(&passes);
    verdict(10, pass, &format!("baseline degradation: {}", details.join("; ")));
    assert!(pass, "criterion failed; see the verdict line above");
}

#[test]
fn criterion_11_manu_sanity() {
    let cfg = ExperimentConfig::default().with_seed(11);
    let mut bench = cfg.bench.clone();
    bench.n_profiles = 40;
    bench.n_holdout = 10;
    bench.n_unknown = 10;
    let data = Dataset::generate(&bench).unwrap();
    let config = data.model_config(cfg.model.embed_dim, cfg.model.hidden_dim, cfg.model.hidden_layers);
    let base = smfa::model::init_model(&config, 11).unwrap();
    let forget = data.forget_set();
    let retain = data.retain_few_set();
    let neurons = config.hidden_dim * config.hidden_layers;

    let manu = ManuConfig { alpha: 10.0, ..cfg.manu };
    let out = manu_unlearn(&base, &config, &forget, &retain, &manu).unwrap();
    let count_ok = out.pruned.len() == manu_prune_count(10.0, neurons) && out.pruned.len() == neurons / 10;
    let acts = trunk_activations(&out.weights, &config, &data.eval_items()).unwrap();
    let zero_ok = out
        .pruned
        .iter()
        .all(|n| acts[n.layer][n.unit].iter().all(|&v| v == 0.0));

    let none = ManuConfig { alpha: 0.1, ..cfg.manu };
    assert_eq!(manu_prune_count(0.1, neurons), 0);
    let kept = manu_unlearn(&base, &config, &forget, &retain, &none).unwrap();
    let identity_ok = kept.pruned.is_empty()
        && kept.weights.bit_eq(&base)
        && ablate_neurons(&base, &config, &[]).unwrap().bit_eq(&base);

    let pass = count_ok && zero_ok && identity_ok;
    verdict(
        11,
        pass,
        &format!(
            "MANU: pruned {} of {neurons} (floor ok: {count_ok}), pruned activations zero: {zero_ok}, zero-prune identity: {identity_ok}",
            out.pruned.len()
        ),
    );
    assert!(pass, "criterion failed; see the verdict line above");
}

// ---------------------------------------------------------------------------
// determinism and formats

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if rel.ends_with(".manifest.json") {
                // wall time is the one field allowed to differ
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_secs");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn small_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(12);
    cfg.bench.n_profiles = 40;
    cfg.bench.n_holdout = 10;
    cfg.bench.n_unknown = 10;
    cfg.train.epochs = 3;
    cfg.targets.memory_exact_match = 0.0;
    cfg.targets.holdout_understanding = 0.0;
    cfg.unlearn_train.epochs = 2;
    cfg.paths = Paths::under(root);
    cfg
}

fn run_all_commands(cfg: &ExperimentConfig) {
    cmd_gen(cfg, None).unwrap();
    let trained = cmd_train(cfg).unwrap();
    cmd_eval(cfg, &trained.checkpoint).unwrap();
    for m in ["smfa", "idk", "ga-diff", "kl-min", "manu"] {
        let out = cmd_unlearn(cfg, m).unwrap();
        cmd_eval(cfg, &out.checkpoint).unwrap();
    }
    cmd_sweep_k(cfg, &[0.0, 5.0], 2).unwrap();
}

fn corrupted_header_errors(bytes: &[u8]) -> Vec<String> {
    let mut bad = Vec::new();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("magic", {
            let mut b = bytes.to_vec();
            b[0] ^= 0xFF;
            b
        }),
        ("version", {
            let mut b = bytes.to_vec();
            b[4] = b[4].wrapping_add(7);
            b
        }),
        ("header length", {
            let mut b = bytes.to_vec();
            b[8..16].copy_from_slice(&(u64::MAX / 2).to_le_bytes());
            b
        }),
        ("header json", {
            let mut b = bytes.to_vec();
            b[16] = b'#';
            b
        }),
        ("header body", {
            let mut b = bytes.to_vec();
            b[16 + header_len / 2] = b'\x01';
            b
        }),
        ("truncated header", bytes[..16 + header_len / 2].to_vec()),
        ("truncated prefix", bytes[..6].to_vec()),
        ("truncated payload", bytes[..bytes.len() - 3].to_vec()),
    ];
    for (name, b) in cases {
        match Checkpoint::from_bytes(&b) {
            Err(Error::Format(_)) => {}
            other => bad.push(format!("{name}: {:?}", other.map(|_| "parsed")))
        }
    }
    bad
}

#[test]
fn criterion_12_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run_all_commands(&cfg);
    let first = snapshot(dir.path());
    run_all_commands(&cfg);
    let second = snapshot(dir.path());
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let rerun_ok = differing.is_empty() && first.len() == second.len() && first.len() > 20;

    // round trips
    let data = Dataset::read(&cfg.paths.data, "bench").unwrap();
    let regen = Dataset::generate(&cfg.bench).unwrap();
    let dataset_ok = data == regen && {
        let again = dir.path().join("again");
        data.write(&again, "bench").unwrap();
        std::fs::read(again.join("bench.jsonl")).unwrap()
            == std::fs::read(cfg.paths.data.join("bench.jsonl")).unwrap()
    };
    let (weights, meta) = load_weights(&cfg.original_path()).unwrap();
    let copy = dir.path().join("copy.ckpt");
    save_weights(&weights, &meta.method, meta.seed, None, &copy).unwrap();
    let ckpt_ok = load_weights(&copy).unwrap().0.bit_eq(&weights)
        && std::fs::read(&copy).unwrap() == std::fs::read(cfg.original_path()).unwrap()
        && load_checkpoint(&copy).is_ok();

    let bytes = std::fs::read(cfg.original_path()).unwrap();
    let mut bad = corrupted_header_errors(&bytes);
    let mask_bytes = std::fs::read(cfg.paths.checkpoints.join("smfa.mask.ckpt")).unwrap();
    bad.extend(corrupted_header_errors(&mask_bytes));

    let pass = rerun_ok && dataset_ok && ckpt_ok && bad.is_empty();
    verdict(
        12,
        pass,
        &format!(
            "determinism: {} files, {} differ on re-run; dataset round trip {dataset_ok}; checkpoint round trip {ckpt_ok}; corrupted headers not rejected: {}",
            first.len(),
            differing.len(),
            bad.len()
        ),
    );
    assert!(pass, "differing {differing:?}, bad {bad:?}");
}

/// Not a numbered criterion: the fitted original recalls memory facts under
/// the unseen evaluation phrasings too.
#[test]
fn original_recalls_evaluation_variants() {
    for r in runs() {
        for split in ["forget", "retain"] {
            let em = pooled(&r.original, Some(split), is_memory, |x| x.exact_match);
            assert!(em >= 0.95, "seed {} {split}: memory exact_match {em}", r.seed);
        }
    }
}
