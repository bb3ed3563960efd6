//! Step learning-rate schedule and RMSProp with momentum and coupled L2.

use num_traits::Float;

use super::config::{EpsPlacement, TrainConfig};
use crate::arch::{Gradients, Model, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Storage, Tensor};

/// `lr0 * gamma^floor(t / step_size)`.
pub fn lr_at_epoch(cfg: &TrainConfig, t: usize) -> f64 {
    cfg.lr0 * cfg.gamma.powi((t / cfg.step_size) as i32)
}

/// One update on flat slices:
///
/// ```text
/// g = grad + wd * w
/// v = a * v + (1 - a) * g^2
/// m = mu * m + g / sqrt(v + eps)
/// w = w - lr * m
/// ```
pub fn rmsprop_update<T: Float>(w: &mut [T], grad: &[T], v: &mut [T], m: &mut [T], lr: f64, cfg: &TrainConfig) {
    let c = |x: f64| T::from(x).expect("float conversion");
    let (wd, a, mu, eps, lr) = (c(cfg.weight_decay), c(cfg.rms_decay), c(cfg.momentum), c(cfg.eps), c(lr));
    let one = T::one();
    for i in 0..w.len() {
        let g = grad[i] + wd * w[i];
        v[i] = a * v[i] + (one - a) * g * g;
        let denom = match cfg.eps_placement {
            EpsPlacement::Inside => (v[i] + eps).sqrt(),
            EpsPlacement::Outside => v[i].sqrt() + eps,
        };
        m[i] = mu * m[i] + g / denom;
        w[i] = w[i] - lr * m[i];
    }
}

/// Optimizer state of one parameter: master weight, square average, momentum.
#[derive(Clone, Debug)]
pub struct ParamState {
    pub name: String,
    pub master: Tensor,
    pub v: Tensor,
    pub m: Tensor,
}

/// RMSProp over a model's parameters, keeping master copies in grad precision.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub params: Vec<ParamState>,
}

impl RmsProp {
    pub fn new(model: &Model) -> RmsProp {
        let prec = model.precision().grad_precision();
        let params = model
            .params()
            .into_iter()
            .map(|(name, t)| ParamState {
                name: name.to_string(),
                master: t.cast(prec),
                v: Tensor::zeros(t.shape(), prec),
                m: Tensor::zeros(t.shape(), prec),
            })
            .collect();
        RmsProp { params }
    }

    /// Updates master weights from `grads` and refreshes the model's parameters.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64, cfg: &TrainConfig) -> Result<()> {
        if grads.entries.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "{} gradients for {} parameters",
                grads.entries.len(),
                self.params.len()
            )));
        }
        for (st, (name, g)) in self.params.iter_mut().zip(&grads.entries) {
            if &st.name != name || g.shape() != st.master.shape() {
                return Err(Error::shape("rmsprop_step", format!("{name} {:?} vs state {} {:?}", g.shape(), st.name, st.master.shape())));
            }
            let g = g.cast(st.master.precision());
            match st.master.precision() {
                Precision::F64 => rmsprop_update(
                    st.master.as_mut_slice::<f64>()?,
                    g.as_slice::<f64>()?,
                    st.v.as_mut_slice::<f64>()?,
                    st.m.as_mut_slice::<f64>()?,
                    lr,
                    cfg,
                ),
                Precision::F32 => rmsprop_update(
                    st.master.as_mut_slice::<f32>()?,
                    g.as_slice::<f32>()?,
                    st.v.as_mut_slice::<f32>()?,
                    st.m.as_mut_slice::<f32>()?,
                    lr,
                    cfg,
                ),
                Precision::F16 => unreachable!("master weights are never f16"),
            }
        }
        let prec = model.precision();
        let mut it = self.params.iter();
        for (_, t, role) in model.tensors_mut() {
            if role == TensorRole::Param {
                *t = it.next().expect("one state per parameter").master.cast(prec);
            }
        }
        Ok(())
    }

    /// State as named tensors: `w.<param>`, `v.<param>`, `m.<param>`.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(3 * self.params.len());
        for p in &self.params {
            out.push((format!("w.{}", p.name), p.master.clone()));
            out.push((format!("v.{}", p.name), p.v.clone()));
            out.push((format!("m.{}", p.name), p.m.clone()));
        }
        out
    }

    /// Restores state written by [`RmsProp::state_tensors`] for `model`.
    pub fn from_state(model: &Model, tensors: &[(String, Tensor)]) -> Result<RmsProp> {
        let mut opt = RmsProp::new(model);
        let find = |n: String| {
            tensors
                .iter()
                .find(|(k, _)| *k == n)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format(format!("missing optimizer tensor {n:?}")))
        };
        for p in &mut opt.params {
            let prec = p.master.precision();
            for (slot, key) in [(&mut p.master, "w"), (&mut p.v, "v"), (&mut p.m, "m")] {
                let t = find(format!("{key}.{}", p.name))?;
                if t.shape() != slot.shape() {
                    return Err(Error::shape("optimizer state", format!("{key}.{}", p.name)));
                }
                *slot = t.cast(prec);
            }
        }
        Ok(opt)
    }
}

/// Whether any state tensor is non-finite; `v` must stay non-negative.
pub fn state_is_sane(opt: &RmsProp) -> bool {
    opt.params.iter().all(|p| {
        p.master.is_finite()
            && p.m.is_finite()
            && match p.v.storage() {
                Storage::F32(v) => v.iter().all(|x| *x >= 0.0 && x.is_finite()),
                Storage::F64(v) => v.iter().all(|x| *x >= 0.0 && x.is_finite()),
                Storage::F16(_) => false,
            }
    })
}
