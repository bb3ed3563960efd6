use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

/// Where the RMSProp epsilon enters the denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EpsPlacement {
    /// `g / sqrt(v + eps)`
    Inside,
    /// `g / (sqrt(v) + eps)`
    Outside,
}

impl fmt::Display for EpsPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpsPlacement::Inside => "inside",
            EpsPlacement::Outside => "outside",
        })
    }
}

impl FromStr for EpsPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inside" => Ok(EpsPlacement::Inside),
            "outside" => Ok(EpsPlacement::Outside),
            _ => Err(Error::Config(format!("eps_placement: expected inside|outside, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub rms_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub eps: f64,
    pub eps_placement: EpsPlacement,
    pub seed: u64,
    /// Below 2: a single train/validation split.
    pub k_folds: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            rms_decay: 0.9,
            momentum: 0.9,
            weight_decay: 1e-5,
            gamma: 0.975,
            step_size: 2,
            epochs: 300,
            batch_size: 64,
            eps: 1e-8,
            eps_placement: EpsPlacement::Inside,
            seed: 0,
            k_folds: 5,
            augment: true,
        }
    }
}

pub const TRAIN_KEYS: [&str; 13] = [
    "lr0",
    "rms_decay",
    "momentum",
    "weight_decay",
    "gamma",
    "step_size",
    "epochs",
    "batch_size",
    "eps",
    "eps_placement",
    "seed",
    "k_folds",
    "augment",
];

impl TrainConfig {
    /// Applies one `key=value` pair; `Ok(false)` when the key is not a training key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "lr0" => self.lr0 = kv::parse_num(key, v)?,
            "rms_decay" => self.rms_decay = kv::parse_num(key, v)?,
            "momentum" => self.momentum = kv::parse_num(key, v)?,
            "weight_decay" => self.weight_decay = kv::parse_num(key, v)?,
            "gamma" => self.gamma = kv::parse_num(key, v)?,
            "step_size" => self.step_size = kv::parse_num(key, v)?,
            "epochs" => self.epochs = kv::parse_num(key, v)?,
            "batch_size" => self.batch_size = kv::parse_num(key, v)?,
            "eps" => self.eps = kv::parse_num(key, v)?,
            "eps_placement" => self.eps_placement = v.parse()?,
            "seed" => self.seed = kv::parse_num(key, v)?,
            "k_folds" => self.k_folds = kv::parse_num(key, v)?,
            "augment" => self.augment = kv::parse_bool(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let vals = [
            self.lr0.to_string(),
            self.rms_decay.to_string(),
            self.momentum.to_string(),
            self.weight_decay.to_string(),
            self.gamma.to_string(),
            self.step_size.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.eps.to_string(),
            self.eps_placement.to_string(),
            self.seed.to_string(),
            self.k_folds.to_string(),
            self.augment.to_string(),
        ];
        TRAIN_KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        for (k, v) in kv::parse(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::Config(format!("unknown training key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        unit("lr0", self.lr0)?;
        unit("rms_decay", self.rms_decay)?;
        unit("momentum", self.momentum)?;
        unit("gamma", self.gamma)?;
        if !(0.0..=1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!("weight_decay must be in [0, 1], got {}", self.weight_decay)));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.step_size == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("step_size, batch_size and epochs must be at least 1".into()));
        }
        Ok(())
    }
}
