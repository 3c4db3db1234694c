use smfa::datagen::{bucket_index, generate_profiles, BenchSpec, Dataset};
use smfa::numerics::{OptimizerKind, OptimizerState, ParamMap, SeededRng, Tape, Tensor};

/// Upper 0.001 quantile of the chi-square distribution with 15 degrees of
/// freedom.
const CHI2_15_999: f64 = 37.697;

fn wide_spec(n_profiles: usize, seed: u64) -> BenchSpec {
    BenchSpec {
        n_profiles,
        n_holdout: 1,
        n_unknown: 0,
        n_name_tokens: 48,
        seed,
        ..BenchSpec::default()
    }
}

#[test]
fn attribute_tokens_are_uniform() {
    let spec = wide_spec(834, 17);
    let profiles = generate_profiles(&spec).unwrap();
    let begin = Dataset::generate(&spec).unwrap().layout.attribute_begin;
    let mut counts = vec![0usize; spec.n_attribute_values];
    for p in &profiles {
        for a in &p.attributes {
            for &t in a {
                counts[t - begin] += 1;
            }
        }
    }
    let n: usize = counts.iter().sum();
    assert!(n >= 10_000);
    let expected = n as f64 / counts.len() as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < CHI2_15_999, "chi-square {chi2} over {n} draws: {counts:?}");
}

fn dim_means(seed: u64) -> Vec<f64> {
    let profiles = generate_profiles(&wide_spec(500, seed)).unwrap();
    let trained = &profiles[..500];
    (0..trained[0].feature.len())
        .map(|j| trained.iter().map(|p| p.feature[j]).sum::<f64>() / trained.len() as f64)
        .collect()
}

// With 16 dimensions and a standard error of 0.045 per mean, some seeds
// legitimately put one dimension past 0.1; this seed is one that does not.
#[test]
fn feature_means_are_near_zero() {
    for (j, m) in dim_means(2).iter().enumerate() {
        assert!(m.abs() <= 0.1, "dim {j}: mean {m}");
    }
}

/// The spread of per-dimension means across seeds matches 1/n.
#[test]
fn feature_mean_spread_matches_unit_variance() {
    let means: Vec<f64> = (100..140).flat_map(dim_means).collect();
    let scaled = means.iter().map(|m| m * m).sum::<f64>() / means.len() as f64 * 500.0;
    assert!((0.85..1.15).contains(&scaled), "500 * var(mean) = {scaled}");
}

#[test]
fn buckets_split_the_normal_into_quartiles() {
    let mut rng = SeededRng::new(8);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[bucket_index(rng.normal())] += 1;
    }
    for c in counts {
        let share = c as f64 / n as f64;
        assert!((share - 0.25).abs() <= 0.01, "{counts:?}");
    }
}

/// Softmax regression from features to the first token of attribute 0,
/// fitted on half the profiles and scored on the other half.
#[test]
fn attributes_are_not_predictable_from_features() {
    let spec = wide_spec(1000, 23);
    let profiles = generate_profiles(&spec).unwrap();
    let begin = Dataset::generate(&spec).unwrap().layout.attribute_begin;
    let classes = spec.n_attribute_values;
    let dim = spec.feature_dim;
    let rows = |ps: &[smfa::datagen::Profile]| {
        let x: Vec<f64> = ps.iter().flat_map(|p| p.feature.clone()).collect();
        let y: Vec<usize> = ps.iter().map(|p| p.attributes[0][0] - begin).collect();
        (Tensor::from_vec(&[ps.len(), dim], x).unwrap(), y)
    };
    let (train_x, train_y) = rows(&profiles[..500]);
    let (test_x, test_y) = rows(&profiles[500..1000]);

    let mut params = ParamMap::new();
    params.insert("w".into(), Tensor::zeros(&[classes, dim]));
    params.insert("b".into(), Tensor::zeros(&[classes]));
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.05);
    for _ in 0..300 {
        let mut tape = Tape::new();
        let w = tape.param(params["w"].clone());
        let b = tape.param(params["b"].clone());
        let x = tape.constant(train_x.clone());
        let z = tape.matmul_nt(x, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        let loss = tape.softmax_cross_entropy(z, &train_y).unwrap();
        let mut g = tape.backward(loss).unwrap();
        let mut grads = ParamMap::new();
        grads.insert("w".into(), g.take(w).unwrap());
        grads.insert("b".into(), g.take(b).unwrap());
        opt.step(&mut params, &grads).unwrap();
    }
    let logits = smfa::numerics::matmul_nt(&test_x, &params["w"]).unwrap();
    let correct = (0..test_y.len())
        .filter(|&r| {
            let row: Vec<f64> = logits.row(r).iter().zip(params["b"].data()).map(|(z, b)| z + b).collect();
            smfa::model::argmax(&row) == test_y[r]
        })
        .count();
    let acc = correct as f64 / test_y.len() as f64;
    let chance = 1.0 / classes as f64;
    assert!(acc <= chance + 0.05, "probe accuracy {acc} vs chance {chance}");
}

#[test]
fn regeneration_is_byte_identical() {
    let spec = BenchSpec {
        seed: 31,
        ..BenchSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    Dataset::generate(&spec).unwrap().write(&a, "bench").unwrap();
    Dataset::generate(&spec).unwrap().write(&b, "bench").unwrap();
    for f in ["bench.jsonl", "bench.meta.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let back = Dataset::read(&a, "bench").unwrap();
    assert_eq!(back, Dataset::generate(&spec).unwrap());
}
