//! The network graph: stem, four stages with downsamplers, refiner and classifier.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::analysis::specs;
use super::config::{ArchConfig, PoolKind, IN_CHANNELS};
use super::layers::{add_grads, init_uniform, Act, Bn, Conv, GradSink, Grn, Mode, TensorRole, Trace, Unit};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{add, slice_channels, Precision, Tensor};

#[derive(Clone, Debug)]
struct Stem {
    first: Unit,
    dw: Unit,
    pooled_shape: Vec<usize>,
}

impl Stem {
    fn forward(&mut self, x: &Act, mode: Mode, tr: &mut Trace) -> Result<Act> {
        let y = self.first.forward(x, mode, tr)?;
        let z = self.dw.forward(&y, mode, tr)?;
        let p = nn::avg_pool2d(&y, 2, 2)?;
        tr.push("stem.pool", &p);
        self.pooled_shape = y.shape().to_vec();
        let out = add(&z, &p)?;
        tr.push("stem.add", &out);
        Ok(Arc::new(out))
    }

    fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<()> {
        let g_pool = nn::avg_pool2d_vjp(&self.pooled_shape, 2, 2, g)?;
        let g_dw = self.dw.backward(g, sink)?;
        let g_y = add_grads(g_dw, g_pool)?;
        self.first.backward(&g_y, sink)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    unit: Unit,
    add_name: String,
}

#[derive(Clone, Debug)]
struct Downsampler {
    prefix: String,
    dense: bool,
    shuffle: Option<usize>,
    unit: Unit,
    pool: PoolKind,
    grn: Option<Grn>,
    split: usize,
    pool_in: Option<Act>,
}

impl Downsampler {
    fn forward(&mut self, stage_in: &Act, block_out: &Act, mode: Mode, tr: &mut Trace) -> Result<Act> {
        let mut x = block_out.clone();
        if self.dense {
            x = Arc::new(crate::tensor::concat_channels(stage_in, block_out)?);
            tr.push(&format!("{}.concat", self.prefix), &x);
        }
        if let Some(g) = self.shuffle {
            x = Arc::new(nn::channel_shuffle(&x, g)?);
            tr.push(&format!("{}.shuffle", self.prefix), &x);
        }
        let u = self.unit.forward(&x, mode, tr)?;
        drop(x);
        let p = match self.pool {
            PoolKind::Max => nn::max_pool2d(&u, 2, 2)?,
            PoolKind::Avg => nn::avg_pool2d(&u, 2, 2)?,
        };
        tr.push(&format!("{}.pool", self.prefix), &p);
        if mode.caches() {
            self.pool_in = Some(u);
        }
        let p = Arc::new(p);
        match &mut self.grn {
            Some(grn) => grn.forward(&p, mode, tr),
            None => Ok(p),
        }
    }

    /// Returns the gradient reaching the stage input through the dense path
    /// (if any) and the gradient reaching the last block's output.
    fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<(Option<Tensor>, Tensor)> {
        let g = match &mut self.grn {
            Some(grn) => grn.backward(g, sink)?,
            None => g.clone(),
        };
        let u = self.pool_in.take().ok_or(Error::NoForwardCache)?;
        let g = match self.pool {
            PoolKind::Max => nn::max_pool2d_vjp(&u, 2, 2, &g)?,
            PoolKind::Avg => nn::avg_pool2d_vjp(u.shape(), 2, 2, &g)?,
        };
        drop(u);
        let mut g = self.unit.backward(&g, sink)?.expect("pointwise conv computes its input gradient");
        if let Some(groups) = self.shuffle {
            g = nn::channel_shuffle_vjp(&g, groups)?;
        }
        if self.dense {
            let c = g.shape()[1];
            Ok((Some(slice_channels(&g, 0..self.split)?), slice_channels(&g, self.split..c)?))
        } else {
            Ok((None, g))
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    blocks: Vec<Block>,
    down: Downsampler,
}

impl Stage {
    fn forward(&mut self, x: &Act, mode: Mode, tr: &mut Trace) -> Result<Act> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            let u = b.unit.forward(&h, mode, tr)?;
            let out = add(&u, &h)?;
            tr.push(&b.add_name, &out);
            h = Arc::new(out);
        }
        self.down.forward(x, &h, mode, tr)
    }

    fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<Tensor> {
        let (g_dense, mut g_h) = self.down.backward(g, sink)?;
        for b in self.blocks.iter_mut().rev() {
            let g_u = b.unit.backward(&g_h, sink)?.expect("depthwise conv computes its input gradient");
            g_h = add(&g_u, &g_h)?;
        }
        add_grads(g_dense, g_h)
    }
}

#[derive(Clone, Debug)]
struct Head {
    w: Tensor,
    b: Tensor,
    pooled: Option<Tensor>,
    pool_in_shape: Vec<usize>,
}

/// A built network with its parameters, running statistics and forward caches.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ArchConfig,
    stem: Stem,
    stages: Vec<Stage>,
    refiner: Option<Unit>,
    head: Head,
}

/// Parameter gradients in parameter order.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl Model {
    /// Builds and initializes a model; the seed fixes every initial weight.
    pub fn new(cfg: &ArchConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let p = cfg.precision;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let unit = |conv: &str, bn: &str, act: Option<&str>, spec: nn::ConvSpec, rng: &mut ChaCha8Rng| {
            Unit::new(
                Conv::new(conv, spec, rng, p),
                Bn::new(bn, spec.out_channels, p),
                act.map(str::to_string),
            )
        };
        let mut first = unit("stem.conv", "stem.bn", Some("stem.act"), specs::stem_conv(cfg), rng);
        first.conv.input_grad = false;
        let stem = Stem {
            first,
            dw: unit("stem.dw", "stem.dw_bn", Some("stem.dw_act"), specs::stem_dw(cfg), rng),
            pooled_shape: Vec::new(),
        };
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let a = cfg.stage_in_channels(s);
            let blocks = (0..cfg.stage_depths[s])
                .map(|k| {
                    let pre = format!("stage{}.block{}", s + 1, k + 1);
                    Block {
                        unit: unit(&format!("{pre}.dw"), &format!("{pre}.bn"), Some(&format!("{pre}.act")), specs::block_dw(cfg, a), rng),
                        add_name: format!("{pre}.add"),
                    }
                })
                .collect();
            let pre = format!("downsampler{}", s + 1);
            let d = cfg.downsampler(s);
            let down = Downsampler {
                prefix: pre.clone(),
                dense: cfg.dense_connections,
                shuffle: cfg.channel_shuffle.then_some(cfg.shuffle_groups),
                unit: unit(&format!("{pre}.pw"), &format!("{pre}.bn"), Some(&format!("{pre}.act")), specs::downsampler_pw(cfg, s), rng),
                pool: d.pool,
                grn: cfg
                    .grn
                    .then(|| Grn::new(&format!("{pre}.grn"), specs::grn_len(cfg, d.target_channels), p)),
                split: a,
                pool_in: None,
            };
            stages.push(Stage { blocks, down });
        }
        let refiner = cfg
            .refiner
            .then(|| unit("refiner.dw", "refiner.bn", None, specs::refiner_dw(cfg), rng));
        let f = cfg.stage_out_channels[3];
        let k = cfg.num_classes;
        let head = Head {
            w: init_uniform(&[k, f], f, rng, p),
            b: init_uniform(&[k], f, rng, p),
            pooled: None,
            pool_in_shape: Vec::new(),
        };
        Ok(Model { cfg: cfg.clone(), stem, stages, refiner, head })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn precision(&self) -> Precision {
        self.cfg.precision
    }

    fn run(&mut self, x: &Tensor, mode: Mode, tr: &mut Trace) -> Result<Tensor> {
        let [_, c, h, w] = x.dims4()?;
        if c != IN_CHANNELS || (h, w) != self.cfg.input_size {
            return Err(Error::shape(
                "forward",
                format!(
                    "input {:?} does not match configured {}x{}x{}",
                    x.shape(),
                    IN_CHANNELS,
                    self.cfg.input_size.0,
                    self.cfg.input_size.1
                ),
            ));
        }
        if !mode.caches() {
            self.clear_caches();
        }
        let x = Arc::new(x.cast(self.cfg.precision));
        let mut h = self.stem.forward(&x, mode, tr)?;
        for s in &mut self.stages {
            h = s.forward(&h, mode, tr)?;
        }
        if let Some(r) = &mut self.refiner {
            h = r.forward(&h, mode, tr)?;
        }
        let pooled = nn::adaptive_avg_pool(&h)?;
        tr.push("pool", &pooled);
        let logits = nn::linear(&pooled, &self.head.w, Some(&self.head.b))?;
        tr.push("classifier", &logits);
        if mode.caches() {
            self.head.pooled = Some(pooled);
            self.head.pool_in_shape = h.shape().to_vec();
        }
        Ok(logits)
    }

    /// Logits of shape `(N, num_classes)` in the model precision.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.run(x, mode, &mut Trace::default())
    }

    /// As [`Model::forward`], also returning every layer's executed output shape.
    pub fn forward_traced(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<(String, Vec<usize>)>)> {
        let mut tr = Trace { on: true, rec: Vec::new() };
        let y = self.run(x, mode, &mut tr)?;
        Ok((y, tr.rec))
    }

    /// Gradients of every parameter given `d loss / d logits` of the last cached forward.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Gradients> {
        let pooled = self.head.pooled.take().ok_or(Error::NoForwardCache)?;
        let mut sink: GradSink = Vec::new();
        let lg = nn::linear_vjp(&pooled, &self.head.w, grad_logits)?;
        sink.push(("classifier.w".into(), lg.w));
        sink.push(("classifier.b".into(), lg.b));
        let mut g = nn::adaptive_avg_pool_vjp(&self.head.pool_in_shape, &lg.x)?;
        if let Some(r) = &mut self.refiner {
            g = r.backward(&g, &mut sink)?.expect("refiner conv computes its input gradient");
        }
        for s in self.stages.iter_mut().rev() {
            g = s.backward(&g, &mut sink)?;
        }
        self.stem.backward(&g, &mut sink)?;
        let mut by_name: HashMap<String, Tensor> = sink.into_iter().collect();
        let entries = self
            .param_names()
            .into_iter()
            .map(|n| {
                let t = by_name.remove(&n).expect("every parameter receives a gradient");
                (n, t)
            })
            .collect();
        Ok(Gradients { entries })
    }

    /// Drops all cached forward state.
    pub fn clear_caches(&mut self) {
        self.stem.first.clear();
        self.stem.dw.clear();
        for s in &mut self.stages {
            for b in &mut s.blocks {
                b.unit.clear();
            }
            s.down.unit.clear();
            s.down.pool_in = None;
            if let Some(g) = &mut s.down.grn {
                g.clear();
            }
        }
        if let Some(r) = &mut self.refiner {
            r.clear();
        }
        self.head.pooled = None;
    }

    /// Parameters and buffers in a fixed order.
    pub fn tensors(&self) -> Vec<(&str, &Tensor, TensorRole)> {
        let mut out = Vec::new();
        self.stem.first.tensors(&mut out);
        self.stem.dw.tensors(&mut out);
        for s in &self.stages {
            for b in &s.blocks {
                b.unit.tensors(&mut out);
            }
            s.down.unit.tensors(&mut out);
            if let Some(g) = &s.down.grn {
                g.tensors(&mut out);
            }
        }
        if let Some(r) = &self.refiner {
            r.tensors(&mut out);
        }
        out.push(("classifier.w", &self.head.w, TensorRole::Param));
        out.push(("classifier.b", &self.head.b, TensorRole::Param));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&str, &mut Tensor, TensorRole)> {
        let mut out = Vec::new();
        self.stem.first.tensors_mut(&mut out);
        self.stem.dw.tensors_mut(&mut out);
        for s in &mut self.stages {
            for b in &mut s.blocks {
                b.unit.tensors_mut(&mut out);
            }
            s.down.unit.tensors_mut(&mut out);
            if let Some(g) = &mut s.down.grn {
                g.tensors_mut(&mut out);
            }
        }
        if let Some(r) = &mut self.refiner {
            r.tensors_mut(&mut out);
        }
        out.push(("classifier.w", &mut self.head.w, TensorRole::Param));
        out.push(("classifier.b", &mut self.head.b, TensorRole::Param));
        out
    }

    pub fn params(&self) -> Vec<(&str, &Tensor)> {
        self.tensors()
            .into_iter()
            .filter(|t| t.2 == TensorRole::Param)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n.to_string()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Bytes of the raw parameter payload at the model precision.
    pub fn param_bytes(&self) -> usize {
        self.params().iter().map(|(_, t)| t.payload_bytes()).sum()
    }

    /// Replaces parameters and buffers by name, casting to the model precision.
    ///
    /// Every model tensor must be present exactly once with a matching shape;
    /// names the model does not know are rejected.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let prec = self.cfg.precision;
        let mut given: HashMap<&str, &Tensor> = HashMap::new();
        for (n, t) in tensors {
            if given.insert(n.as_str(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {n:?}")));
            }
        }
        let mut slots = self.tensors_mut();
        let known: Vec<String> = slots.iter().map(|(n, _, _)| n.to_string()).collect();
        for (name, slot, _) in slots.iter_mut() {
            let src = given
                .remove(*name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))?;
            if src.shape() != slot.shape() {
                return Err(Error::shape(
                    "load_tensors",
                    format!("{name}: stored {:?}, model {:?}", src.shape(), slot.shape()),
                ));
            }
            **slot = src.cast(prec);
        }
        if let Some(extra) = given.keys().next() {
            return Err(Error::Format(format!(
                "unknown tensor name {extra:?} ({} known)",
                known.len()
            )));
        }
        drop(slots);
        self.clear_caches();
        Ok(())
    }

    /// Copy of the model with every tensor cast to `to`.
    pub fn cast(&self, to: Precision) -> Model {
        let mut m = self.clone();
        m.cfg.precision = to;
        for (_, t, _) in m.tensors_mut() {
            *t = t.cast(to);
        }
        m.clear_caches();
        m
    }
}
