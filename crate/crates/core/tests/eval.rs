use proptest::prelude::*;
use takunet_core::arch::{analyze, count_params, ArchConfig, Model};
use takunet_core::data::{BatchIterator, SyntheticSource};
use takunet_core::eval::*;
use takunet_core::Precision;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn hand_computed_f1() {
    let cm = ConfusionMatrix::from_predictions(2, &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    let f = f1_scores(&cm).unwrap();
    assert!(close(f.per_class[0], 2.0 / 3.0));
    assert!(close(f.per_class[1], 4.0 / 5.0));
    assert!(close(f.macro_f1, 11.0 / 15.0));
    let perfect = ConfusionMatrix::from_predictions(3, &[0, 1, 2], &[0, 1, 2]).unwrap();
    assert_eq!(f1_scores(&perfect).unwrap().macro_f1, 1.0);
}

#[test]
fn always_first_class_on_balanced_five() {
    let truth: Vec<usize> = (0..50).map(|i| i % 5).collect();
    let cm = ConfusionMatrix::from_predictions(5, &truth, &[0; 50]).unwrap();
    let f = f1_scores(&cm).unwrap();
    // Class 0: P = 1/5, R = 1, F1 = 1/3; all others 0.
    assert!(close(f.per_class[0], 1.0 / 3.0));
    assert!(f.per_class[1..].iter().all(|&v| v == 0.0));
    assert!(close(f.macro_f1, 1.0 / 15.0));
    assert_eq!(cm.total(), 50);
}

#[test]
fn degenerate_inputs() {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 0], vec![2, 0]]).unwrap();
    let f = f1_scores(&cm).unwrap();
    assert_eq!(f.per_class[1], 0.0);
    assert!(f.macro_f1.is_finite());
    assert!(f1_scores(&ConfusionMatrix::new(1)).is_err());
    assert!(ConfusionMatrix::from_predictions(2, &[0, 2], &[0, 1]).is_err());
}

fn matrix(k: usize) -> impl Strategy<Value = ConfusionMatrix> {
    prop::collection::vec(0u64..20, k * k)
        .prop_map(move |v| ConfusionMatrix::from_rows(&v.chunks(k).map(<[u64]>::to_vec).collect::<Vec<_>>()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn macro_f1_ignores_relabeling(cm in matrix(4), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let a = f1_scores(&cm).unwrap();
        let b = f1_scores(&cm.permute(&perm)).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(cm.permute(&perm).total(), cm.total());
    }

    #[test]
    fn per_class_f1_is_transpose_symmetric(cm in matrix(5)) {
        let a = f1_scores(&cm).unwrap();
        let b = f1_scores(&cm.transpose()).unwrap();
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

fn mini() -> ArchConfig {
    ArchConfig {
        input_size: (64, 64),
        stem_channels: 4,
        stage_depths: [1, 1, 1, 1],
        stage_out_channels: [8, 8, 8, 8],
        precision: Precision::F32,
        ..Default::default()
    }
}

#[test]
fn evaluation_is_linear_in_the_dataset_and_pure() {
    let mut model = Model::new(&mini(), 3).unwrap();
    let src = SyntheticSource::new(10, 5, (64, 64), 6);
    let once: Vec<usize> = (0..10).collect();
    let twice: Vec<usize> = once.iter().chain(&once).copied().collect();
    let run = |m: &mut Model, idx: &[usize]| evaluate(m, BatchIterator::new(&src, idx, 4, (64, 64), None).unwrap()).unwrap();
    let a = run(&mut model, &once);
    let b = run(&mut model, &twice);
    assert_eq!(a, run(&mut model, &once));
    assert_eq!(a.samples, 10);
    for t in 0..5 {
        for p in 0..5 {
            assert_eq!(b.confusion.get(t, p), 2 * a.confusion.get(t, p));
        }
    }
    assert!((a.loss - b.loss).abs() < 1e-9);
    assert!(evaluate(&mut model, BatchIterator::new(&src, &[], 4, (64, 64), None).unwrap()).is_err());
}

#[test]
fn latency_report_has_every_sample() {
    let mut model = Model::new(&mini(), 0).unwrap();
    let r = bench_model(&mut model, 3, 100).unwrap();
    assert_eq!(r.samples_ms.len(), 100);
    assert_eq!((r.timed_iters, r.warmup_iters, r.batch, r.input), (100, 3, 1, (64, 64)));
    assert!((r.fps - 1000.0 / r.mean_ms).abs() < 1e-9);
    assert!(r.samples_ms.iter().all(|&s| s > 0.0));
    assert!(r.mean_ms >= 0.5 * r.median_ms);
    assert!(r.p95_ms >= r.median_ms);
    assert!(bench_model(&mut model, 0, 29).is_err());
    let again = bench_model(&mut model, 3, 30).unwrap();
    eprintln!("fps {:.1} then {:.1}", r.fps, again.fps);
}

#[test]
fn activation_time_scales_with_iterations() {
    let total = |iters| bench_activations((10_000, 100), iters, false).unwrap().iter().map(|r| r.total_ms).sum::<f64>();
    total(1);
    let (one, two) = (total(4), total(8));
    let ratio = two / one;
    eprintln!("4 iters {one:.1} ms, 8 iters {two:.1} ms, ratio {ratio:.2}");
    assert!((1.4..=2.6).contains(&ratio), "ratio {ratio}");
}

fn fixed_report() -> Report {
    let cfg = ArchConfig::default();
    let cm = ConfusionMatrix::from_rows(&[
        vec![9, 1, 0, 0, 0],
        vec![0, 10, 0, 0, 0],
        vec![0, 0, 8, 2, 0],
        vec![0, 0, 0, 10, 0],
        vec![1, 0, 0, 0, 9],
    ])
    .unwrap();
    let metrics = MetricsReport { f1: f1_scores(&cm).unwrap(), confusion: cm, loss: 0.25, samples: 50 };
    let latency = LatencyReport::from_samples("golden", 5, (1..=40).map(f64::from).collect(), (240, 240)).unwrap();
    report(&cfg, &analyze(&cfg).unwrap(), Some(&metrics), Some(&latency))
}

#[test]
fn report_matches_golden_and_round_trips() {
    let r = fixed_report();
    assert_eq!(r.model.params, count_params(&ArchConfig::default()).unwrap());
    assert_eq!(r.model.size_bytes, 4 * r.model.params);
    let json = r.to_json();
    assert_eq!(json, include_str!("golden/report.json"));
    let back: Report = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for (section, keys) in [
        ("model", &["params", "flops", "size_bytes", "config"][..]),
        ("metrics", &["confusion", "f1_per_class", "f1_macro"][..]),
        ("latency", &["device", "batch", "input", "mean_ms", "median_ms", "p95_ms", "fps"][..]),
    ] {
        let obj = v[section].as_object().unwrap();
        assert_eq!(obj.len(), keys.len(), "{section}");
        for k in keys {
            assert!(obj.contains_key(*k), "{section}.{k}");
        }
    }
}
