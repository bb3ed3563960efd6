//! Resolved run configuration: architecture, training and run-level keys.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use takunet_core::arch::ArchConfig;
use takunet_core::data::SplitMode;
use takunet_core::kv;
use takunet_core::train::TrainConfig;

/// How `--data` directories are split when no manifest is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitChoice {
    /// Predefined when the directory has a `train/` subdirectory, ratio otherwise.
    Auto,
    Aider,
    AiderV2,
}

impl SplitChoice {
    fn name(self) -> &'static str {
        match self {
            SplitChoice::Auto => "auto",
            SplitChoice::Aider => "aider",
            SplitChoice::AiderV2 => "aiderv2",
        }
    }

    pub fn resolve(self, root: &std::path::Path) -> Result<SplitMode> {
        let name = match self {
            SplitChoice::Auto if root.join("train").is_dir() => "aiderv2",
            SplitChoice::Auto | SplitChoice::Aider => "aider",
            SplitChoice::AiderV2 => "aiderv2",
        };
        Ok(SplitMode::parse(name)?)
    }
}

pub const RUN_KEYS: [&str; 4] = ["split", "warmup", "act_shape", "gelu"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub split: SplitChoice,
    /// Untimed forward passes before a latency measurement.
    pub warmup: usize,
    /// `(rows, cols)` of the activation microbenchmark tensor.
    pub act_shape: (usize, usize),
    pub exact_gelu: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            split: SplitChoice::Auto,
            warmup: 10,
            act_shape: (10_000, 100),
            exact_gelu: false,
        }
    }
}

/// A key that no section recognises.
#[derive(Debug)]
pub struct UnknownKey(pub String);

impl std::fmt::Display for UnknownKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown config key {:?}", self.0)
    }
}

impl std::error::Error for UnknownKey {}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if self.arch.set(key, v)? || self.train.set(key, v)? {
            return Ok(());
        }
        match key {
            "split" => {
                self.split = match v {
                    "auto" => SplitChoice::Auto,
                    "aider" => SplitChoice::Aider,
                    "aiderv2" => SplitChoice::AiderV2,
                    _ => bail!("split: expected auto|aider|aiderv2, got {v:?}"),
                }
            }
            "warmup" => self.warmup = kv::parse_num(key, v)?,
            "act_shape" => self.act_shape = kv::parse_hw(key, v)?,
            "gelu" => {
                self.exact_gelu = match v {
                    "tanh" => false,
                    "erf" => true,
                    _ => bail!("gelu: expected tanh|erf, got {v:?}"),
                }
            }
            _ => return Err(UnknownKey(key.to_string()).into()),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c = RunConfig::default();
        c.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = self.arch.to_pairs();
        out.extend(self.train.to_pairs());
        let run = [
            self.split.name().to_string(),
            self.warmup.to_string(),
            format!("{}x{}", self.act_shape.0, self.act_shape.1),
            if self.exact_gelu { "erf" } else { "tanh" }.to_string(),
        ];
        out.extend(RUN_KEYS.iter().map(|k| k.to_string()).zip(run));
        out
    }

    /// Canonical text; parsing it back yields the same configuration.
    pub fn to_kv(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// SHA-256 of the canonical text, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("classes=4\nsplit=aiderv2\ngelu=erf\nepochs=3\n").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_typed() {
        let err = RunConfig::default().set("learning_rate", "1").unwrap_err();
        assert!(err.downcast_ref::<UnknownKey>().is_some());
        assert!(RunConfig::default().set("split", "kfold").is_err());
    }

    #[test]
    fn shipped_default_matches_the_library_defaults() {
        let text = include_str!("../../../configs/default.cfg");
        let mut c = RunConfig::default();
        c.apply_text(text).unwrap();
        assert_eq!(c, RunConfig::default());
    }
}
