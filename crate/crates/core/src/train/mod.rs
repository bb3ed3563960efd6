//! Optimizer, learning-rate schedule, k-fold cross-validation and the fit loop.

mod config;
mod fit;
mod kfold;
mod optim;

pub use config::{EpsPlacement, TrainConfig, TRAIN_KEYS};
pub use fit::{fit, train_epoch, EpochLog, EpochStats, FitOutcome, FoldOutcome};
pub use kfold::{kfold_split, Fold};
pub use optim::{lr_at_epoch, rmsprop_update, state_is_sane, ParamState, RmsProp};
