use std::fmt;

use crate::error::{Error, Result};
use crate::kv;
use crate::nn::pool_output_hw;
use crate::tensor::Precision;

pub const IN_CHANNELS: usize = 3;

/// Convolutions whose bias term is optional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BiasRole {
    StemConv,
    StemDw,
    BlockDw,
    DownsamplerPw,
    RefinerDw,
}

impl BiasRole {
    pub const ALL: [BiasRole; 5] = [
        BiasRole::StemConv,
        BiasRole::StemDw,
        BiasRole::BlockDw,
        BiasRole::DownsamplerPw,
        BiasRole::RefinerDw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiasRole::StemConv => "stem_conv",
            BiasRole::StemDw => "stem_dw",
            BiasRole::BlockDw => "block_dw",
            BiasRole::DownsamplerPw => "downsampler_pw",
            BiasRole::RefinerDw => "refiner_dw",
        }
    }

    fn parse(s: &str) -> Result<BiasRole> {
        BiasRole::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bias role {s:?}")))
    }
}

/// Set of [`BiasRole`]s that carry a bias.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BiasSet(u8);

impl BiasSet {
    pub const NONE: BiasSet = BiasSet(0);

    pub fn from_bits(bits: u8) -> BiasSet {
        BiasSet(bits & 0b1_1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn with(self, role: BiasRole) -> BiasSet {
        BiasSet(self.0 | 1 << role as u8)
    }

    pub fn has(self, role: BiasRole) -> bool {
        self.0 & (1 << role as u8) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn roles(self) -> impl Iterator<Item = BiasRole> {
        BiasRole::ALL.into_iter().filter(move |&r| self.has(r))
    }
}

impl fmt::Display for BiasSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.roles().map(BiasRole::name).collect();
        f.write_str(&names.join(","))
    }
}

impl std::str::FromStr for BiasSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<BiasSet> {
        if s.trim() == "none" || s.trim().is_empty() {
            return Ok(BiasSet::NONE);
        }
        s.split(',')
            .try_fold(BiasSet::NONE, |acc, r| Ok(acc.with(BiasRole::parse(r.trim())?)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrnShape {
    PerChannel,
    Scalar,
}

impl GrnShape {
    pub fn name(self) -> &'static str {
        match self {
            GrnShape::PerChannel => "channel",
            GrnShape::Scalar => "scalar",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Grouped pointwise stage of a downsampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DownsamplerSpec {
    /// Channels entering the stage (the dense-connection source).
    pub in_channels: usize,
    /// Channels leaving the last Taku block.
    pub out_channels: usize,
    /// Input width of the pointwise conv: `in + out` with dense connections, `out` without.
    pub pw_in: usize,
    pub groups: usize,
    pub target_channels: usize,
    pub pool: PoolKind,
}

/// All hyperparameters of the network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub input_size: (usize, usize),
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stage_depths: [usize; 4],
    pub stage_out_channels: [usize; 4],
    pub dense_connections: bool,
    pub grn: bool,
    pub channel_shuffle: bool,
    pub refiner: bool,
    /// Groups of the channel shuffle ahead of each pointwise conv.
    pub shuffle_groups: usize,
    pub grn_shape: GrnShape,
    pub bias: BiasSet,
    pub precision: Precision,
}

/// Widths found by the channel derivation (see `derive`).
pub const DEFAULT_STAGE_CHANNELS: [usize; 4] = [80, 160, 240, 240];

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: (240, 240),
            num_classes: 5,
            stem_channels: 40,
            stage_depths: [5, 5, 5, 4],
            stage_out_channels: DEFAULT_STAGE_CHANNELS,
            dense_connections: true,
            grn: true,
            channel_shuffle: true,
            refiner: true,
            shuffle_groups: 2,
            grn_shape: GrnShape::PerChannel,
            bias: BiasSet::NONE.with(BiasRole::DownsamplerPw),
            precision: Precision::F32,
        }
    }
}

pub const ARCH_KEYS: [&str; 13] = [
    "input",
    "classes",
    "stem_channels",
    "stage_depths",
    "stage_channels",
    "dense",
    "grn",
    "shuffle",
    "refiner",
    "shuffle_groups",
    "grn_shape",
    "bias",
    "precision",
];

impl ArchConfig {
    /// Applies one `key=value` pair; `Ok(false)` when the key is not an arch key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input" => self.input_size = kv::parse_hw(key, value)?,
            "classes" => self.num_classes = kv::parse_num(key, value)?,
            "stem_channels" => self.stem_channels = kv::parse_num(key, value)?,
            "stage_depths" => self.stage_depths = four(key, value)?,
            "stage_channels" => self.stage_out_channels = four(key, value)?,
            "dense" => self.dense_connections = kv::parse_bool(key, value)?,
            "grn" => self.grn = kv::parse_bool(key, value)?,
            "shuffle" => self.channel_shuffle = kv::parse_bool(key, value)?,
            "refiner" => self.refiner = kv::parse_bool(key, value)?,
            "shuffle_groups" => self.shuffle_groups = kv::parse_num(key, value)?,
            "grn_shape" => {
                self.grn_shape = match value {
                    "channel" => GrnShape::PerChannel,
                    "scalar" => GrnShape::Scalar,
                    _ => return Err(Error::Config(format!("grn_shape: expected channel|scalar, got {value:?}"))),
                }
            }
            "bias" => self.bias = value.parse()?,
            "precision" => self.precision = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical key-value pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let v = [
            format!("{}x{}", self.input_size.0, self.input_size.1),
            self.num_classes.to_string(),
            self.stem_channels.to_string(),
            kv::join(&self.stage_depths),
            kv::join(&self.stage_out_channels),
            self.dense_connections.to_string(),
            self.grn.to_string(),
            self.channel_shuffle.to_string(),
            self.refiner.to_string(),
            self.shuffle_groups.to_string(),
            self.grn_shape.name().to_string(),
            self.bias.to_string(),
            self.precision.name().to_string(),
        ];
        ARCH_KEYS.iter().zip(v).map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_kv(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// Parses canonical text; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ArchConfig::default();
        for (k, v) in kv::parse(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown arch key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration with every ablation toggle off.
    pub fn ablated(&self) -> Self {
        ArchConfig {
            dense_connections: false,
            grn: false,
            channel_shuffle: false,
            refiner: false,
            ..self.clone()
        }
    }

    /// Channel count entering stage `s` (0-based).
    pub fn stage_in_channels(&self, s: usize) -> usize {
        if s == 0 {
            self.stem_channels
        } else {
            self.stage_out_channels[s - 1]
        }
    }

    pub fn downsampler(&self, s: usize) -> DownsamplerSpec {
        let a = self.stage_in_channels(s);
        let pw_in = if self.dense_connections { 2 * a } else { a };
        DownsamplerSpec {
            in_channels: a,
            out_channels: a,
            pw_in,
            groups: pw_in / 4,
            target_channels: self.stage_out_channels[s],
            pool: if s == 3 { PoolKind::Avg } else { PoolKind::Max },
        }
    }

    /// Spatial extents after the stem and after each stage.
    pub fn spatial_chain(&self) -> Result<[(usize, usize); 5]> {
        let (h, w) = self.input_size;
        let stem1 = |n: usize| (n + 2 * 2).checked_sub(2 * 2 + 1).map(|v| v / 2 + 1);
        let stem2 = |n: usize| (n + 2).checked_sub(3).map(|v| v / 2 + 1);
        let collapse = || Error::Config(format!("input {h}x{w} collapses to zero extent"));
        let (h1, w1) = (stem1(h).ok_or_else(collapse)?, stem1(w).ok_or_else(collapse)?);
        let (h2, w2) = (stem2(h1).ok_or_else(collapse)?, stem2(w1).ok_or_else(collapse)?);
        if pool_output_hw(h1, w1, 2, 2) != Some((h2, w2)) {
            return Err(Error::Config(format!(
                "input {h}x{w}: stem residual {h1}x{w1} cannot be pooled onto {h2}x{w2}"
            )));
        }
        let mut out = [(h2, w2); 5];
        let mut cur = (h2, w2);
        for slot in out.iter_mut().skip(1) {
            cur = pool_output_hw(cur.0, cur.1, 2, 2).ok_or_else(collapse)?;
            *slot = cur;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return bad("input size must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.stem_channels == 0 || self.stage_out_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.stage_depths.contains(&0) {
            return bad("stage depths must be at least 1".into());
        }
        for s in 0..4 {
            let d = self.downsampler(s);
            if d.groups == 0 || d.pw_in % d.groups != 0 || d.target_channels % d.groups != 0 {
                return bad(format!(
                    "stage {}: pointwise groups {} must divide input {} and output {}",
                    s + 1,
                    d.groups,
                    d.pw_in,
                    d.target_channels
                ));
            }
            if self.channel_shuffle && (self.shuffle_groups == 0 || d.pw_in % self.shuffle_groups != 0) {
                return bad(format!(
                    "stage {}: shuffle groups {} must divide {} channels",
                    s + 1,
                    self.shuffle_groups,
                    d.pw_in
                ));
            }
        }
        self.spatial_chain()?;
        Ok(())
    }
}

fn four(key: &str, v: &str) -> Result<[usize; 4]> {
    let l: Vec<usize> = kv::parse_list(key, v)?;
    l.try_into()
        .map_err(|l: Vec<usize>| Error::Config(format!("{key}: expected 4 values, got {}", l.len())))
}
