//! Static shape, parameter and FLOP analysis derived from the configuration alone.
//!
//! FLOPs follow the 1 MAC = 1 FLOP convention: convolutions and the linear
//! layer count their multiply-accumulates; batch-norm, ReLU6 and every pooling
//! layer count one op per output element. Residual adds, concatenation,
//! shuffle, GRN and bias terms count zero.

use super::config::{ArchConfig, BiasRole, GrnShape, PoolKind, IN_CHANNELS};
use crate::error::Result;
use crate::nn::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu6,
    MaxPool,
    AvgPool,
    AdaptivePool,
    Add,
    Concat,
    Shuffle,
    Grn,
    Linear,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Relu6 => "relu6",
            LayerKind::MaxPool => "max_pool",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::AdaptivePool => "adaptive_pool",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
            LayerKind::Shuffle => "shuffle",
            LayerKind::Grn => "grn",
            LayerKind::Linear => "linear",
        }
    }
}

/// One node of the analysed graph. Shapes are per sample, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub out_shape: [usize; 3],
    pub params: usize,
    pub flops: u64,
    /// Set for convolutions whose bias is optional.
    pub bias_role: Option<BiasRole>,
    /// Bias parameters included in `params` (0 when the bias is disabled).
    pub bias_params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub input: [usize; 3],
    pub layers: Vec<LayerInfo>,
}

impl Analysis {
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Sum of the `params` of layers whose name starts with `prefix`.
    pub fn params_under(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.params)
            .sum()
    }
}

struct Builder<'a> {
    cfg: &'a ArchConfig,
    layers: Vec<LayerInfo>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, kind: LayerKind, out: [usize; 3], params: usize, flops: u64) {
        self.layers.push(LayerInfo {
            name,
            kind,
            out_shape: out,
            params,
            flops,
            bias_role: None,
            bias_params: 0,
        });
    }

    fn conv(&mut self, name: String, spec: ConvSpec, input: [usize; 3], role: BiasRole) -> Result<[usize; 3]> {
        let (oh, ow) = spec.output_hw(input[1], input[2])?;
        let out = [spec.out_channels, oh, ow];
        let bias_params = if spec.bias { spec.out_channels } else { 0 };
        self.layers.push(LayerInfo {
            name,
            kind: LayerKind::Conv,
            out_shape: out,
            params: spec.param_count(),
            flops: spec.macs(oh, ow),
            bias_role: Some(role),
            bias_params,
        });
        Ok(out)
    }

    fn elems(s: [usize; 3]) -> u64 {
        (s[0] * s[1] * s[2]) as u64
    }

    /// conv -> bn -> (relu6)
    fn unit(&mut self, conv: &str, bn: &str, act: Option<&str>, spec: ConvSpec, input: [usize; 3], role: BiasRole) -> Result<[usize; 3]> {
        let out = self.conv(conv.to_string(), spec, input, role)?;
        self.push(bn.to_string(), LayerKind::BatchNorm, out, 2 * out[0], Self::elems(out));
        if let Some(act) = act {
            self.push(act.to_string(), LayerKind::Relu6, out, 0, Self::elems(out));
        }
        Ok(out)
    }

    fn pool(&mut self, name: String, kind: LayerKind, input: [usize; 3]) -> [usize; 3] {
        let out = [input[0], input[1] / 2, input[2] / 2];
        self.push(name, kind, out, 0, Self::elems(out));
        out
    }
}

/// Conv hyperparameters of every layer, shared by the analysis and the model.
pub(crate) mod specs {
    use super::*;

    pub fn stem_conv(cfg: &ArchConfig) -> ConvSpec {
        ConvSpec::new(IN_CHANNELS, cfg.stem_channels, 3)
            .stride(2)
            .padding(2)
            .dilation(2)
            .bias(cfg.bias.has(BiasRole::StemConv))
    }

    pub fn stem_dw(cfg: &ArchConfig) -> ConvSpec {
        ConvSpec::depthwise(cfg.stem_channels, 3)
            .stride(2)
            .padding(1)
            .bias(cfg.bias.has(BiasRole::StemDw))
    }

    pub fn block_dw(cfg: &ArchConfig, channels: usize) -> ConvSpec {
        ConvSpec::depthwise(channels, 3)
            .padding(1)
            .bias(cfg.bias.has(BiasRole::BlockDw))
    }

    pub fn downsampler_pw(cfg: &ArchConfig, stage: usize) -> ConvSpec {
        let d = cfg.downsampler(stage);
        ConvSpec::new(d.pw_in, d.target_channels, 1)
            .groups(d.groups)
            .bias(cfg.bias.has(BiasRole::DownsamplerPw))
    }

    pub fn refiner_dw(cfg: &ArchConfig) -> ConvSpec {
        ConvSpec::depthwise(cfg.stage_out_channels[3], 3)
            .padding(1)
            .bias(cfg.bias.has(BiasRole::RefinerDw))
    }

    pub fn grn_len(cfg: &ArchConfig, channels: usize) -> usize {
        match cfg.grn_shape {
            GrnShape::PerChannel => channels,
            GrnShape::Scalar => 1,
        }
    }
}

/// Per-layer shapes, parameters and FLOPs for one sample at `cfg.input_size`.
pub fn analyze(cfg: &ArchConfig) -> Result<Analysis> {
    cfg.validate()?;
    let (h, w) = cfg.input_size;
    let input = [IN_CHANNELS, h, w];
    let mut b = Builder { cfg, layers: Vec::new() };

    let y = b.unit("stem.conv", "stem.bn", Some("stem.act"), specs::stem_conv(cfg), input, BiasRole::StemConv)?;
    let z = b.unit("stem.dw", "stem.dw_bn", Some("stem.dw_act"), specs::stem_dw(cfg), y, BiasRole::StemDw)?;
    b.pool("stem.pool".into(), LayerKind::AvgPool, y);
    b.push("stem.add".into(), LayerKind::Add, z, 0, 0);

    let mut x = z;
    for s in 0..4 {
        let stage_in = x;
        for k in 0..cfg.stage_depths[s] {
            let p = format!("stage{}.block{}", s + 1, k + 1);
            x = b.unit(&format!("{p}.dw"), &format!("{p}.bn"), Some(&format!("{p}.act")), specs::block_dw(cfg, x[0]), x, BiasRole::BlockDw)?;
            b.push(format!("{p}.add"), LayerKind::Add, x, 0, 0);
        }
        let p = format!("downsampler{}", s + 1);
        if b.cfg.dense_connections {
            x = [stage_in[0] + x[0], x[1], x[2]];
            b.push(format!("{p}.concat"), LayerKind::Concat, x, 0, 0);
        }
        if b.cfg.channel_shuffle {
            b.push(format!("{p}.shuffle"), LayerKind::Shuffle, x, 0, 0);
        }
        x = b.unit(&format!("{p}.pw"), &format!("{p}.bn"), Some(&format!("{p}.act")), specs::downsampler_pw(cfg, s), x, BiasRole::DownsamplerPw)?;
        let kind = match cfg.downsampler(s).pool {
            PoolKind::Max => LayerKind::MaxPool,
            PoolKind::Avg => LayerKind::AvgPool,
        };
        x = b.pool(format!("{p}.pool"), kind, x);
        if b.cfg.grn {
            b.push(format!("{p}.grn"), LayerKind::Grn, x, 2 * specs::grn_len(cfg, x[0]), 0);
        }
    }
    if cfg.refiner {
        x = b.unit("refiner.dw", "refiner.bn", None, specs::refiner_dw(cfg), x, BiasRole::RefinerDw)?;
    }
    let pooled = [x[0], 1, 1];
    b.push("pool".into(), LayerKind::AdaptivePool, pooled, 0, x[0] as u64);
    let k = cfg.num_classes;
    b.push("classifier".into(), LayerKind::Linear, [k, 1, 1], x[0] * k + k, (x[0] * k) as u64);
    Ok(Analysis { input, layers: b.layers })
}

pub fn count_params(cfg: &ArchConfig) -> Result<usize> {
    Ok(analyze(cfg)?.total_params())
}

/// FLOPs for one sample at the given input size.
pub fn count_flops(cfg: &ArchConfig, input_size: (usize, usize)) -> Result<u64> {
    let cfg = ArchConfig { input_size, ..cfg.clone() };
    Ok(analyze(&cfg)?.total_flops())
}
