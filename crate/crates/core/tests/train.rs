use std::collections::BTreeSet;

use takunet_core::arch::*;
use takunet_core::data::{BatchIterator, ImageSource, SyntheticSource};
use takunet_core::eval::evaluate;
use takunet_core::nn::softmax_cross_entropy;
use takunet_core::train::*;
use takunet_core::{Precision, Tensor};

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

fn quick(epochs: usize, k_folds: usize) -> TrainConfig {
    TrainConfig { epochs, k_folds, batch_size: 8, augment: false, seed: 3, ..Default::default() }
}

#[test]
fn schedule_matches_closed_form_over_the_full_run() {
    let cfg = TrainConfig::default();
    for t in 0..300 {
        let want = 1e-3 * 0.975f64.powi((t / 2) as i32);
        assert!((lr_at_epoch(&cfg, t) - want).abs() <= 1e-12 * want);
        if t > 0 {
            assert!(lr_at_epoch(&cfg, t) <= lr_at_epoch(&cfg, t - 1));
        }
        if t % 2 == 1 {
            assert_eq!(lr_at_epoch(&cfg, t), lr_at_epoch(&cfg, t - 1));
        }
    }
    assert_eq!(lr_at_epoch(&cfg, 0), 1e-3);
    assert!((lr_at_epoch(&cfg, 2) - 9.75e-4).abs() < 1e-12 * 9.75e-4);
    assert!((lr_at_epoch(&cfg, 5) - 9.50625e-4).abs() < 1e-12 * 9.50625e-4);
}

#[test]
fn zero_grad_with_decay_shrinks_weights() {
    let cfg = TrainConfig::default();
    let w0 = vec![0.5f64, -1.5, 2.0, 0.0, 3.0];
    let mut w = w0.clone();
    let (mut v, mut m) = (vec![0.0; 5], vec![0.0; 5]);
    rmsprop_update(&mut w, &[0.0; 5], &mut v, &mut m, 1e-3, &cfg);
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm(&w) < norm(&w0));
    assert!(v.iter().all(|&x| x >= 0.0));
}

#[test]
fn zero_grad_without_decay_is_a_fixed_point() {
    let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
    let mut w = vec![0.3f32, -0.7];
    let (mut v, mut m) = (vec![0.0; 2], vec![0.0; 2]);
    rmsprop_update(&mut w, &[0.0; 2], &mut v, &mut m, 1e-3, &cfg);
    assert_eq!(w, vec![0.3, -0.7]);
}

#[test]
fn momentum_keeps_moving_after_the_gradient_stops() {
    let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
    let (mut w, mut v, mut m) = (vec![1.0f64], vec![0.0], vec![0.0]);
    rmsprop_update(&mut w, &[1.0], &mut v, &mut m, 1e-3, &cfg);
    assert!((v[0] - 0.1).abs() < 1e-15);
    assert!((m[0] - 1.0 / (0.1f64 + 1e-8).sqrt()).abs() < 1e-12);
    assert!((w[0] - (1.0 - 1e-3 / (0.1f64 + 1e-8).sqrt())).abs() < 1e-12);
    let mut prev = w[0];
    let mut steps = Vec::new();
    for _ in 0..2 {
        rmsprop_update(&mut w, &[0.0], &mut v, &mut m, 1e-3, &cfg);
        assert!(w[0] < prev);
        steps.push(prev - w[0]);
        prev = w[0];
    }
    // Each move is the previous one scaled by the momentum factor.
    assert!((steps[1] / steps[0] - 0.9).abs() < 1e-9);
}

fn one_step(model: &mut Model, opt: &mut RmsProp, cfg: &TrainConfig, src: &SyntheticSource, seed: u64) {
    let idx: Vec<usize> = (0..src.len()).collect();
    let it = BatchIterator::new(src, &idx, 4, model.config().input_size, Some(seed)).unwrap();
    train_epoch(model, it, opt, cfg, 0).unwrap();
}

#[test]
fn optimizer_state_mirrors_parameters() {
    let cfg = TrainConfig::default();
    let mut model = Model::new(&mini(), 1).unwrap();
    let mut opt = RmsProp::new(&model);
    let src = SyntheticSource::new(8, 5, (64, 64), 2);
    for s in 0..2 {
        one_step(&mut model, &mut opt, &cfg, &src, s);
        let params = model.params();
        assert_eq!(opt.params.len(), params.len());
        for (st, (name, t)) in opt.params.iter().zip(&params) {
            assert_eq!(&st.name, name);
            for x in [&st.master, &st.v, &st.m] {
                assert_eq!(x.shape(), t.shape());
                assert_eq!(x.precision(), Precision::F32);
            }
            assert!(st.v.to_f64_vec().iter().all(|&v| v >= 0.0));
        }
        assert!(state_is_sane(&opt));
    }
}

#[test]
fn half_models_keep_single_precision_masters() {
    let cfg = TrainConfig::default();
    let mut model = Model::new(&ArchConfig { precision: Precision::F16, ..mini() }, 1).unwrap();
    let mut opt = RmsProp::new(&model);
    one_step(&mut model, &mut opt, &cfg, &SyntheticSource::new(8, 5, (64, 64), 2), 0);
    for (st, (_, t)) in opt.params.iter().zip(model.params()) {
        assert_eq!(st.master.precision(), Precision::F32);
        assert_eq!(t.precision(), Precision::F16);
        assert!(t.bit_eq(&st.master.cast(Precision::F16)));
    }
}

#[test]
fn checkpoint_restores_optimizer_state() {
    let cfg = TrainConfig::default();
    let src = SyntheticSource::new(8, 5, (64, 64), 2);
    let mut model = Model::new(&mini(), 4).unwrap();
    let mut opt = RmsProp::new(&model);
    one_step(&mut model, &mut opt, &cfg, &src, 0);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.tkck");
    save_checkpoint(&Checkpoint::from_model(&model, 1).with_optimizer_state(opt.state_tensors()), &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let mut model2 = ck.to_model(None).unwrap();
    let mut opt2 = RmsProp::from_state(&model2, &ck.optimizer_tensors()).unwrap();
    for (a, b) in opt.state_tensors().iter().zip(opt2.state_tensors()) {
        assert_eq!(a.0, b.0);
        assert!(a.1.bit_eq(&b.1));
    }
    // Resuming continues exactly as the uninterrupted run.
    one_step(&mut model, &mut opt, &cfg, &src, 1);
    one_step(&mut model2, &mut opt2, &cfg, &src, 1);
    for ((_, a), (_, b)) in model.params().iter().zip(model2.params()) {
        assert!(a.bit_eq(b));
    }
    assert!(RmsProp::from_state(&model2, &ck.optimizer_tensors()[3..]).is_err());
}

#[test]
fn kfold_is_a_stratified_partition() {
    let labels: Vec<usize> = (0..53).map(|i| [0, 0, 0, 1, 1, 2][i % 6]).collect();
    let idx: Vec<usize> = (100..153).collect();
    let folds = kfold_split(&idx, &labels, 5, 9).unwrap();
    assert_eq!(folds.len(), 5);
    let all: BTreeSet<usize> = folds.iter().flat_map(|f| f.val.iter().copied()).collect();
    assert_eq!(all, idx.iter().copied().collect());
    assert_eq!(folds.iter().map(|f| f.val.len()).sum::<usize>(), 53);
    let label_of = |i: usize| labels[i - 100];
    for f in &folds {
        let (mn, mx) = folds.iter().map(|g| g.val.len()).fold((usize::MAX, 0), |(a, b), n| (a.min(n), b.max(n)));
        assert!(mx - mn <= 1);
        let train: BTreeSet<usize> = f.train.iter().copied().collect();
        assert!(f.val.iter().all(|i| !train.contains(i)));
        assert_eq!(train.len() + f.val.len(), 53);
        for c in 0..3 {
            let global = labels.iter().filter(|&&l| l == c).count() as f64;
            let here = f.val.iter().filter(|&&i| label_of(i) == c).count() as f64;
            assert!((here - global / 5.0).abs() <= 1.0, "class {c}: {here} vs {}", global / 5.0);
        }
    }
    assert_eq!(kfold_split(&idx, &labels, 5, 9).unwrap(), folds);
    assert!(kfold_split(&idx, &labels, 1, 9).is_err());
    assert!(kfold_split(&[1, 2, 3], &[0, 0, 1], 2, 0).is_err());
}

#[test]
fn empty_epoch_is_an_error() {
    let mut model = Model::new(&mini(), 0).unwrap();
    let mut opt = RmsProp::new(&model);
    let src = SyntheticSource::new(4, 5, (64, 64), 0);
    let it = BatchIterator::new(&src, &[], 4, (64, 64), None).unwrap();
    assert!(train_epoch(&mut model, it, &mut opt, &TrainConfig::default(), 0).is_err());
}

#[test]
fn frozen_norm_gives_identical_losses_on_a_repeated_batch() {
    let mut model = Model::new(&mini(), 5).unwrap();
    let src = SyntheticSource::new(6, 5, (64, 64), 1);
    let batch = BatchIterator::new(&src, &[0, 1, 2, 3, 4, 5], 6, (64, 64), None).unwrap().next().unwrap().unwrap();
    let twice = BatchIterator::new(&src, &[0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5], 6, (64, 64), None).unwrap();
    let losses: Vec<f64> = twice
        .map(|b| {
            let b = b.unwrap();
            assert!(b.x.bit_eq(&batch.x));
            softmax_cross_entropy(&model.forward(&b.x, Mode::Eval).unwrap(), &b.labels).unwrap().0
        })
        .collect();
    assert_eq!(losses[0].to_bits(), losses[1].to_bits());
}

#[test]
fn miniature_model_overfits_sixty_four_samples() {
    let arch = ArchConfig { stage_out_channels: [16, 16, 16, 16], ..mini() };
    let cfg = TrainConfig { batch_size: 16, ..TrainConfig::default() };
    let src = SyntheticSource::new(64, 5, (64, 64), 8);
    let idx: Vec<usize> = (0..64).collect();
    let mut model = Model::new(&arch, 2).unwrap();
    let mut opt = RmsProp::new(&model);
    let mut last = f64::INFINITY;
    for epoch in 0..200 {
        let it = BatchIterator::new(&src, &idx, cfg.batch_size, (64, 64), Some(epoch as u64)).unwrap();
        last = train_epoch(&mut model, it, &mut opt, &cfg, epoch).unwrap().loss;
        if last < 0.05 {
            break;
        }
    }
    assert!(last < 0.05, "final loss {last}");
    let eval = evaluate(&mut model, BatchIterator::new(&src, &idx, 16, (64, 64), None).unwrap()).unwrap();
    assert_eq!(eval.samples, 64);
}

#[test]
fn five_folds_give_five_logs() {
    let src = SyntheticSource::new(25, 5, (64, 64), 3);
    let mut seen = Vec::new();
    let out = fit(&mini(), &quick(2, 5), &src, None, false, &mut |e| {
        seen.push((e.fold, e.epoch));
        Ok(())
    })
    .unwrap();
    assert_eq!(out.folds.len(), 5);
    for (i, f) in out.folds.iter().enumerate() {
        assert_eq!(f.fold, i);
        assert_eq!(f.log.len(), 2);
        assert!(f.log.iter().all(|e| e.wall_ms == 0 && e.train_loss.is_finite()));
        assert_eq!(f.checkpoint.epoch as usize, f.best_epoch);
        assert_eq!(f.best_f1, f.log[f.best_epoch].val_f1_macro);
        assert!(!f.checkpoint.optimizer_tensors().is_empty());
    }
    assert_eq!(seen.len(), 10);
    assert!(out.folds.iter().all(|f| f.best_f1 <= out.best().best_f1));
}

#[test]
fn seeded_fit_is_bit_reproducible() {
    let src = SyntheticSource::new(12, 5, (40, 40), 3);
    let cfg = TrainConfig { augment: true, ..quick(2, 0) };
    let run = || {
        let mut lines = String::new();
        let out = fit(&mini(), &cfg, &src, None, false, &mut |e| {
            lines.push_str(&e.to_json_line());
            Ok(())
        })
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &out.best().checkpoint).unwrap();
        (lines, bytes)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.lines().count(), 2);
    assert_eq!(a, b);
    let other = fit(&mini(), &TrainConfig { seed: 4, ..cfg.clone() }, &src, None, false, &mut |_| Ok(())).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &other.best().checkpoint).unwrap();
    assert_ne!(bytes, a.1);
}

#[test]
fn fit_rejects_mismatched_classes() {
    let src = SyntheticSource::new(12, 3, (64, 64), 3);
    assert!(fit(&mini(), &quick(1, 0), &src, None, false, &mut |_| Ok(())).is_err());
}

#[test]
fn log_line_is_one_json_object() {
    let e = EpochLog { epoch: 1, fold: 0, lr: 1e-3, train_loss: 0.5, train_acc: 0.75, val_loss: 0.6, val_f1_macro: 0.7, wall_ms: 0 };
    let line = e.to_json_line();
    assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
    let back: EpochLog = serde_json::from_str(&line).unwrap();
    assert_eq!(back, e);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    for k in ["epoch", "fold", "lr", "train_loss", "val_loss", "val_f1_macro", "wall_ms"] {
        assert!(v.get(k).is_some(), "{k}");
    }
}

#[test]
fn input_tensor_is_cast_to_model_precision() {
    let mut model = Model::new(&ArchConfig { precision: Precision::F64, ..mini() }, 0).unwrap();
    let x = Tensor::full(&[1, 3, 64, 64], 0.5, Precision::F32);
    assert_eq!(model.forward(&x, Mode::Eval).unwrap().precision(), Precision::F64);
}
