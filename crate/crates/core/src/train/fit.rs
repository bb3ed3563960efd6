use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::kfold::kfold_split;
use super::optim::{lr_at_epoch, RmsProp};
use crate::arch::{ArchConfig, Checkpoint, Mode, Model};
use crate::data::{mix_seed, AugmentPolicy, Batch, BatchIterator, ImageSource};
use crate::error::{Error, Result};
use crate::eval::{argmax_rows, evaluate};
use crate::nn::softmax_cross_entropy;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean loss.
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
    pub samples: usize,
    pub batches: usize,
}

/// One optimizer step per batch at `lr_at_epoch(cfg, epoch)`.
pub fn train_epoch<I>(model: &mut Model, batches: I, opt: &mut RmsProp, cfg: &TrainConfig, epoch: usize) -> Result<EpochStats>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let lr = lr_at_epoch(cfg, epoch);
    let (mut loss_sum, mut correct, mut samples, mut count) = (0.0, 0usize, 0usize, 0usize);
    for b in batches {
        let b = b?;
        let logits = model.forward(&b.x, Mode::Train)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &b.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "train_epoch loss" });
        }
        correct += argmax_rows(&logits).iter().zip(&b.labels).filter(|(p, t)| p == t).count();
        drop(logits);
        let grads = model.backward(&grad)?;
        opt.step(model, &grads, lr, cfg)?;
        loss_sum += loss * b.labels.len() as f64;
        samples += b.labels.len();
        count += 1;
    }
    if samples == 0 {
        return Err(Error::Empty("training epoch without batches".into()));
    }
    Ok(EpochStats { loss: loss_sum / samples as f64, accuracy: correct as f64 / samples as f64, samples, batches: count })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub fold: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_f1_macro: f64,
    /// Zero when timing is disabled.
    pub wall_ms: u64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain struct serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_f1: f64,
    /// Model and optimizer state at the best epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub folds: Vec<FoldOutcome>,
    pub best_fold: usize,
}

impl FitOutcome {
    pub fn best(&self) -> &FoldOutcome {
        &self.folds[self.best_fold]
    }
}

/// Trains `k_folds` models (or one when `k_folds < 2`) and keeps, per fold, the
/// checkpoint with the best validation macro-F1 (first epoch wins ties).
///
/// With folds, validation is the held-out fold of `train`. Without folds it is
/// `val` when given, otherwise `train` itself evaluated without augmentation.
/// Every epoch is passed to `on_epoch` as it completes.
pub fn fit(
    arch: &ArchConfig,
    cfg: &TrainConfig,
    train: &dyn ImageSource,
    val: Option<&dyn ImageSource>,
    timing: bool,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if train.num_classes() != arch.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model {}",
            train.num_classes(),
            arch.num_classes
        )));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let plans: Vec<(Vec<usize>, (&dyn ImageSource, Vec<usize>))> = if cfg.k_folds >= 2 {
        kfold_split(&all, &train.labels(), cfg.k_folds, cfg.seed)?
            .into_iter()
            .map(|f| (f.train, (train, f.val)))
            .collect()
    } else {
        let v = match val {
            Some(v) => (v, (0..v.len()).collect()),
            None => (train, all.clone()),
        };
        vec![(all, v)]
    };
    let policy = cfg.augment.then(AugmentPolicy::default);
    let mut folds = Vec::new();
    for (fold, (train_idx, (val_src, val_idx))) in plans.into_iter().enumerate() {
        let fold_seed = mix_seed(cfg.seed, fold as u64);
        let mut model = Model::new(arch, fold_seed)?;
        let mut opt = RmsProp::new(&model);
        let mut best: Option<(usize, f64, Checkpoint)> = None;
        let mut log = Vec::new();
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            let epoch_seed = mix_seed(fold_seed, epoch as u64 + 1);
            let mut it = BatchIterator::new(train, &train_idx, cfg.batch_size, arch.input_size, Some(epoch_seed))?;
            if let Some(p) = &policy {
                it = it.with_augmentation(p, mix_seed(epoch_seed, 0xA06));
            }
            let stats = train_epoch(&mut model, it, &mut opt, cfg, epoch)?;
            let vb = BatchIterator::new(val_src, &val_idx, cfg.batch_size, arch.input_size, None)?;
            let report = evaluate(&mut model, vb)?;
            let entry = EpochLog {
                epoch,
                fold,
                lr: lr_at_epoch(cfg, epoch),
                train_loss: stats.loss,
                train_acc: stats.accuracy,
                val_loss: report.loss,
                val_f1_macro: report.f1.macro_f1,
                wall_ms: if timing { start.elapsed().as_millis() as u64 } else { 0 },
            };
            on_epoch(&entry)?;
            log.push(entry);
            if best.as_ref().is_none_or(|b| report.f1.macro_f1 > b.1) {
                let ck = Checkpoint::from_model(&model, epoch as u32).with_optimizer_state(opt.state_tensors());
                best = Some((epoch, report.f1.macro_f1, ck));
            }
        }
        let (best_epoch, best_f1, checkpoint) = best.expect("at least one epoch");
        folds.push(FoldOutcome { fold, best_epoch, best_f1, checkpoint, log });
    }
    let best_fold = folds
        .iter()
        .enumerate()
        .fold(0, |b, (i, f)| if f.best_f1 > folds[b].best_f1 { i } else { b });
    Ok(FitOutcome { folds, best_fold })
}
