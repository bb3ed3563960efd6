//! `takunet`: train, evaluate, analyze and benchmark TakuNet from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use takunet_core::{kv, Precision};

use config::{RunConfig, UnknownKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Train,
    Eval,
    Analyze,
    Bench,
    BenchAct,
    DeriveChannels,
    Split,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
            Command::Bench => "bench",
            Command::BenchAct => "bench-act",
            Command::DeriveChannels => "derive-channels",
            Command::Split => "split",
        }
    }
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    kv::parse_hw("input", s).map_err(|e| e.to_string())
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "takunet", version, about = "Train, evaluate and benchmark TakuNet")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Config file (key=value lines); flags and overrides are applied on top.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, split manifest (.csv) or `synthetic:N[:SEED]`.
    #[arg(long)]
    pub data: Option<String>,
    /// Output directory (train) or file (everything else; stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained checkpoint for eval and bench.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Input size as HxW.
    #[arg(long, value_parser = parse_hw)]
    pub input: Option<(usize, usize)>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Write zero for every wall-clock field.
    #[arg(long)]
    pub no_timing: bool,
    /// `key=value` overrides.
    #[arg(value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
}

/// A command-line mistake; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Config file first, then `key=value` overrides, then the dedicated flags.
pub fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let usage = |e: anyhow::Error| -> anyhow::Error {
        if e.downcast_ref::<UnknownKey>().is_some() {
            e
        } else {
            Usage(format!("{e:#}")).into()
        }
    };
    for (k, v) in &cli.overrides {
        cfg.set(k, v).map_err(usage)?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.arch.precision = p;
    }
    if let Some(hw) = cli.input {
        cfg.arch.input_size = hw;
    }
    if let Some(k) = cli.classes {
        cfg.arch.num_classes = k;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<UnknownKey>().is_some();
            let line = serde_json::json!({
                "error": format!("{e:#}"),
                "kind": if usage { "usage" } else { "runtime" },
                "command": cli.command.name(),
            });
            eprintln!("{line}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
