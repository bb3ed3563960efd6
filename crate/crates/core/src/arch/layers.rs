//! Parameter-owning building blocks with cached forward state.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, BatchNormCache, BatchNormState, ConvSpec, GrnState, NormMode};
use crate::tensor::{add, Precision, Tensor};

pub(crate) type Act = Arc<Tensor>;

/// How a forward pass treats batch-norm and caching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics, running statistics updated, state cached for backward.
    Train,
    /// Running statistics, nothing updated, state cached for backward.
    TrainFrozenBn,
    /// Running statistics, no caching.
    Eval,
}

impl Mode {
    pub(crate) fn caches(self) -> bool {
        self != Mode::Eval
    }

    fn norm(self) -> NormMode {
        match self {
            Mode::Train => NormMode::Train,
            _ => NormMode::Eval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Buffer,
}

/// Shape trace of an executed forward pass: layer name and output shape.
#[derive(Default)]
pub(crate) struct Trace {
    pub on: bool,
    pub rec: Vec<(String, Vec<usize>)>,
}

impl Trace {
    pub fn push(&mut self, name: &str, t: &Tensor) {
        if self.on {
            self.rec.push((name.to_string(), t.shape().to_vec()));
        }
    }
}

pub(crate) type GradSink = Vec<(String, Tensor)>;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in f64, stored in `prec`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng, prec: Precision) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_f64(shape, &v, prec).expect("element count matches shape")
}

fn take<T>(slot: &mut Option<T>) -> Result<T> {
    slot.take().ok_or(Error::NoForwardCache)
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub name: String,
    pub spec: ConvSpec,
    pub w: Tensor,
    pub b: Option<Tensor>,
    w_name: String,
    b_name: String,
    input: Option<Act>,
    /// The first layer never needs an input gradient.
    pub input_grad: bool,
}

impl Conv {
    pub fn new(name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng, prec: Precision) -> Self {
        let fan_in = spec.weight_shape()[1..].iter().product();
        let w = init_uniform(&spec.weight_shape(), fan_in, rng, prec);
        let b = spec
            .bias
            .then(|| init_uniform(&[spec.out_channels], fan_in, rng, prec));
        Conv {
            name: name.to_string(),
            spec,
            w,
            b,
            w_name: format!("{name}.w"),
            b_name: format!("{name}.b"),
            input: None,
            input_grad: true,
        }
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, tr: &mut Trace) -> Result<Tensor> {
        let y = nn::conv2d(x, &self.w, self.b.as_ref(), &self.spec)?;
        if mode.caches() {
            self.input = Some(x.clone());
        }
        tr.push(&self.name, &y);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<Option<Tensor>> {
        let x = take(&mut self.input)?;
        let gr = nn::conv2d_vjp_with(&x, &self.w, &self.spec, g, self.input_grad)?;
        sink.push((self.w_name.clone(), gr.w));
        if self.b.is_some() {
            sink.push((self.b_name.clone(), gr.b));
        }
        Ok(gr.x)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(&'a str, &'a Tensor, TensorRole)>) {
        out.push((&self.w_name, &self.w, TensorRole::Param));
        if let Some(b) = &self.b {
            out.push((&self.b_name, b, TensorRole::Param));
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(&'a str, &'a mut Tensor, TensorRole)>) {
        out.push((&self.w_name, &mut self.w, TensorRole::Param));
        if let Some(b) = &mut self.b {
            out.push((&self.b_name, b, TensorRole::Param));
        }
    }

    pub fn clear(&mut self) {
        self.input = None;
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Bn {
    pub name: String,
    pub state: BatchNormState,
    names: [String; 4],
    cache: Option<BatchNormCache>,
}

impl Bn {
    pub fn new(name: &str, channels: usize, prec: Precision) -> Self {
        Bn {
            name: name.to_string(),
            state: BatchNormState::new(channels, prec),
            names: ["gamma", "beta", "running_mean", "running_var"].map(|s| format!("{name}.{s}")),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, tr: &mut Trace) -> Result<Tensor> {
        self.state.mode = mode.norm();
        let (y, cache) = nn::batch_norm(x, &mut self.state)?;
        if mode.caches() {
            self.cache = Some(cache);
        }
        tr.push(&self.name, &y);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<Tensor> {
        let cache = take(&mut self.cache)?;
        let gr = nn::batch_norm_vjp(&self.state, &cache, g)?;
        sink.push((self.names[0].clone(), gr.gamma));
        sink.push((self.names[1].clone(), gr.beta));
        Ok(gr.x)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(&'a str, &'a Tensor, TensorRole)>) {
        let s = &self.state;
        out.push((&self.names[0], &s.gamma, TensorRole::Param));
        out.push((&self.names[1], &s.beta, TensorRole::Param));
        out.push((&self.names[2], &s.running_mean, TensorRole::Buffer));
        out.push((&self.names[3], &s.running_var, TensorRole::Buffer));
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(&'a str, &'a mut Tensor, TensorRole)>) {
        let s = &mut self.state;
        out.push((&self.names[0], &mut s.gamma, TensorRole::Param));
        out.push((&self.names[1], &mut s.beta, TensorRole::Param));
        out.push((&self.names[2], &mut s.running_mean, TensorRole::Buffer));
        out.push((&self.names[3], &mut s.running_var, TensorRole::Buffer));
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }
}

/// conv -> batch-norm -> optional ReLU6.
#[derive(Clone, Debug)]
pub(crate) struct Unit {
    pub conv: Conv,
    pub bn: Bn,
    act: Option<String>,
    out: Option<Act>,
}

impl Unit {
    pub fn new(conv: Conv, bn: Bn, act: Option<String>) -> Self {
        Unit { conv, bn, act, out: None }
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, tr: &mut Trace) -> Result<Act> {
        let c = self.conv.forward(x, mode, tr)?;
        let y = self.bn.forward(&c, mode, tr)?;
        drop(c);
        let Some(act) = &self.act else {
            return Ok(Arc::new(y));
        };
        let y = Arc::new(nn::relu6(&y)?);
        tr.push(act, &y);
        if mode.caches() {
            self.out = Some(y.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<Option<Tensor>> {
        let g = if self.act.is_some() {
            let y = take(&mut self.out)?;
            nn::relu6_vjp(&y, g)?
        } else {
            g.clone()
        };
        let g = self.bn.backward(&g, sink)?;
        self.conv.backward(&g, sink)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(&'a str, &'a Tensor, TensorRole)>) {
        self.conv.tensors(out);
        self.bn.tensors(out);
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(&'a str, &'a mut Tensor, TensorRole)>) {
        self.conv.tensors_mut(out);
        self.bn.tensors_mut(out);
    }

    pub fn clear(&mut self) {
        self.conv.clear();
        self.bn.clear();
        self.out = None;
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Grn {
    pub name: String,
    pub state: GrnState,
    names: [String; 2],
    input: Option<Act>,
}

impl Grn {
    pub fn new(name: &str, len: usize, prec: Precision) -> Self {
        Grn {
            name: name.to_string(),
            state: GrnState::per_channel(len, prec),
            names: [format!("{name}.gamma"), format!("{name}.beta")],
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, tr: &mut Trace) -> Result<Act> {
        let y = nn::grn(x, &self.state)?;
        if mode.caches() {
            self.input = Some(x.clone());
        }
        tr.push(&self.name, &y);
        Ok(Arc::new(y))
    }

    pub fn backward(&mut self, g: &Tensor, sink: &mut GradSink) -> Result<Tensor> {
        let x = take(&mut self.input)?;
        let gr = nn::grn_vjp(&x, &self.state, g)?;
        sink.push((self.names[0].clone(), gr.gamma));
        sink.push((self.names[1].clone(), gr.beta));
        Ok(gr.x)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(&'a str, &'a Tensor, TensorRole)>) {
        out.push((&self.names[0], &self.state.gamma, TensorRole::Param));
        out.push((&self.names[1], &self.state.beta, TensorRole::Param));
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(&'a str, &'a mut Tensor, TensorRole)>) {
        out.push((&self.names[0], &mut self.state.gamma, TensorRole::Param));
        out.push((&self.names[1], &mut self.state.beta, TensorRole::Param));
    }

    pub fn clear(&mut self) {
        self.input = None;
    }
}

/// Sum of two gradients, either of which may be absent.
pub(crate) fn add_grads(a: Option<Tensor>, b: Tensor) -> Result<Tensor> {
    match a {
        Some(a) => add(&a, &b),
        None => Ok(b),
    }
}
