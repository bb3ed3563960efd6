//! Batch normalization and global response normalization.

use crate::error::{Error, Result};
use crate::tensor::{Element, Precision, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const GRN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    pub mode: NormMode,
}

impl BatchNormState {
    pub fn new(channels: usize, precision: Precision) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], 1.0, precision),
            beta: Tensor::zeros(&[channels], precision),
            running_mean: Tensor::zeros(&[channels], precision),
            running_var: Tensor::full(&[channels], 1.0, precision),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            mode: NormMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }

    pub fn cast(&self, to: Precision) -> Self {
        BatchNormState {
            gamma: self.gamma.cast(to),
            beta: self.beta.cast(to),
            running_mean: self.running_mean.cast(to),
            running_var: self.running_var.cast(to),
            ..*self
        }
    }
}

/// Values a batch-norm forward pass keeps for its backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    /// Normalized input in grad precision.
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: NormMode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn check_channels(op: &'static str, c: usize, t: &Tensor) -> Result<()> {
    if t.numel() != c {
        return Err(Error::shape(
            op,
            format!("per-channel tensor has {} entries, input has {c} channels", t.numel()),
        ));
    }
    Ok(())
}

/// Per-channel mean and biased variance over (N, H, W), accumulated in f64.
fn batch_stats<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for s_ in 0..n {
            s += x[(s_ * c + ch) * hw..][..hw].iter().map(|v| v.to_f64()).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0;
        for s_ in 0..n {
            q += x[(s_ * c + ch) * hw..][..hw]
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    (mean, var)
}

/// Batch normalization over (N, H, W) per channel.
///
/// In train mode the running statistics are updated in place (running
/// variance uses the unbiased estimate).
pub fn batch_norm(x: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, h, w] = x.dims4()?;
    for t in [&state.gamma, &state.beta, &state.running_mean, &state.running_var] {
        check_channels("batch_norm", c, t)?;
    }
    let hw = h * w;
    let prec = x.precision();
    let gp = prec.grad_precision();
    let (mean, inv_std) = crate::dispatch!(prec, T => {
        let xs = x.as_slice::<T>()?;
        match state.mode {
            NormMode::Train => {
                if n * hw == 0 {
                    return Err(Error::Empty("batch_norm over zero elements".into()));
                }
                let (mean, var) = batch_stats(xs, n, c, hw);
                let m = (n * hw) as f64;
                let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let mom = state.momentum;
                let rm: Vec<f64> = state.running_mean.to_f64_vec().iter().zip(&mean)
                    .map(|(r, b)| (1.0 - mom) * r + mom * b).collect();
                let rv: Vec<f64> = state.running_var.to_f64_vec().iter().zip(&var)
                    .map(|(r, b)| (1.0 - mom) * r + mom * b * unbiased).collect();
                state.running_mean = Tensor::from_f64(&[c], &rm, prec)?;
                state.running_var = Tensor::from_f64(&[c], &rv, prec)?;
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
                (mean, inv)
            }
            NormMode::Eval => {
                let mean = state.running_mean.to_f64_vec();
                let inv = state.running_var.to_f64_vec().iter()
                    .map(|v| 1.0 / (v.max(0.0) + state.eps).sqrt()).collect();
                (mean, inv)
            }
        }
    });
    let gamma = state.gamma.to_f64_vec();
    let beta = state.beta.to_f64_vec();
    let (y, x_hat) = crate::dispatch!(prec, T => {
        crate::dispatch_grad!(gp, G => {
            let xs = x.as_slice::<T>()?;
            let mut y = Vec::with_capacity(xs.len());
            let mut xh: Vec<G> = Vec::with_capacity(xs.len());
            for s in 0..n {
                for ch in 0..c {
                    let (mu, is, ga, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                    for &v in &xs[(s * c + ch) * hw..][..hw] {
                        let z = (v.to_f64() - mu) * is;
                        xh.push(G::of(z));
                        y.push(T::from_f64(ga * z + be));
                    }
                }
            }
            (Tensor::from_vec(x.shape(), y)?, Tensor::from_vec(x.shape(), xh)?)
        })
    });
    Ok((
        y.check_finite("batch_norm")?,
        BatchNormCache {
            x_hat,
            inv_std,
            mode: state.mode,
        },
    ))
}

/// Gradients of [`batch_norm`] given the cache of the matching forward call.
pub fn batch_norm_vjp(state: &BatchNormState, cache: &BatchNormCache, grad: &Tensor) -> Result<BatchNormGrads> {
    let [n, c, h, w] = cache.x_hat.dims4()?;
    if grad.shape() != cache.x_hat.shape() {
        return Err(Error::shape(
            "batch_norm_vjp",
            format!("{:?} vs {:?}", grad.shape(), cache.x_hat.shape()),
        ));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let gp = cache.x_hat.precision();
    let g = grad.cast(gp);
    let gamma = state.gamma.to_f64_vec();
    crate::dispatch_grad!(gp, G => {
        let gs = g.as_slice::<G>()?;
        let xh = cache.x_hat.as_slice::<G>()?;
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for s in 0..n {
            for ch in 0..c {
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for (&gv, &xv) in gs[r.clone()].iter().zip(&xh[r]) {
                    dbeta[ch] += gv as f64;
                    dgamma[ch] += gv as f64 * xv as f64;
                }
            }
        }
        let mut dx: Vec<G> = vec![0.0; gs.len()];
        for s in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * cache.inv_std[ch];
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                match cache.mode {
                    NormMode::Train => {
                        let (db, dg) = (dbeta[ch] / m, dgamma[ch] / m);
                        for ((o, &gv), &xv) in dx[r.clone()].iter_mut().zip(&gs[r.clone()]).zip(&xh[r]) {
                            *o = (k * (gv as f64 - db - xv as f64 * dg)) as G;
                        }
                    }
                    NormMode::Eval => {
                        for (o, &gv) in dx[r.clone()].iter_mut().zip(&gs[r]) {
                            *o = (k * gv as f64) as G;
                        }
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            x: Tensor::from_vec(&[n, c, h, w], dx)?,
            gamma: Tensor::from_f64(&[c], &dgamma, gp)?,
            beta: Tensor::from_f64(&[c], &dbeta, gp)?,
        })
    })
}

/// Global response normalization with learnable scale and shift.
///
/// `gamma`/`beta` hold one value per channel, or a single shared value.
#[derive(Clone, Debug, PartialEq)]
pub struct GrnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl GrnState {
    pub fn per_channel(channels: usize, precision: Precision) -> Self {
        GrnState {
            gamma: Tensor::zeros(&[channels], precision),
            beta: Tensor::zeros(&[channels], precision),
            eps: GRN_EPS,
        }
    }

    pub fn scalar(precision: Precision) -> Self {
        GrnState::per_channel(1, precision)
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }

    pub fn cast(&self, to: Precision) -> Self {
        GrnState {
            gamma: self.gamma.cast(to),
            beta: self.beta.cast(to),
            eps: self.eps,
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        let k = self.gamma.numel();
        if (k != 1 && k != c) || self.beta.numel() != k {
            return Err(Error::shape(
                "grn",
                format!("gamma/beta of {k}/{} entries for {c} channels", self.beta.numel()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GrnGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Per-sample channel norms `G` and normalized responses `N = G / (mean(G) + eps)`.
fn grn_stats(x: &[f64], c: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let g: Vec<f64> = (0..c)
        .map(|ch| x[ch * hw..(ch + 1) * hw].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let denom = g.iter().sum::<f64>() / c as f64 + eps;
    let nrm = g.iter().map(|v| v / denom).collect();
    (g, nrm, denom)
}

/// `y = gamma * (x * N(x)) + beta + x` per channel.
pub fn grn(x: &Tensor, state: &GrnState) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    state.check(c)?;
    let hw = h * w;
    let xv = x.to_f64_vec();
    let gamma = state.gamma.to_f64_vec();
    let beta = state.beta.to_f64_vec();
    let at = |v: &[f64], ch: usize| if v.len() == 1 { v[0] } else { v[ch] };
    let mut y = Vec::with_capacity(xv.len());
    for s in 0..n {
        let xs = &xv[s * c * hw..(s + 1) * c * hw];
        let (_, nrm, _) = grn_stats(xs, c, hw, state.eps);
        for ch in 0..c {
            let (ga, be) = (at(&gamma, ch), at(&beta, ch));
            for &v in &xs[ch * hw..(ch + 1) * hw] {
                y.push(ga * v * nrm[ch] + be + v);
            }
        }
    }
    crate::dispatch!(x.precision(), T => {
        let out: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(x.shape(), out)?.check_finite("grn")
    })
}

pub fn grn_vjp(x: &Tensor, state: &GrnState, grad: &Tensor) -> Result<GrnGrads> {
    let [n, c, h, w] = x.dims4()?;
    state.check(c)?;
    if grad.shape() != x.shape() {
        return Err(Error::shape("grn_vjp", format!("{:?} vs {:?}", grad.shape(), x.shape())));
    }
    let hw = h * w;
    let xv = x.to_f64_vec();
    let gv = grad.to_f64_vec();
    let gamma = state.gamma.to_f64_vec();
    let k = gamma.len();
    let at = |v: &[f64], ch: usize| if v.len() == 1 { v[0] } else { v[ch] };
    let mut dx = vec![0.0; xv.len()];
    let mut dgamma = vec![0.0; k];
    let mut dbeta = vec![0.0; k];
    for s in 0..n {
        let base = s * c * hw;
        let xs = &xv[base..base + c * hw];
        let gs = &gv[base..base + c * hw];
        let (gn, nrm, denom) = grn_stats(xs, c, hw, state.eps);
        let mut a = vec![0.0; c];
        for ch in 0..c {
            let r = ch * hw..(ch + 1) * hw;
            let gx: f64 = gs[r.clone()].iter().zip(&xs[r.clone()]).map(|(g, x)| g * x).sum();
            let gsum: f64 = gs[r].iter().sum();
            a[ch] = at(&gamma, ch) * gx;
            let slot = if k == 1 { 0 } else { ch };
            dgamma[slot] += gx * nrm[ch];
            dbeta[slot] += gsum;
        }
        let cross: f64 = a.iter().zip(&gn).map(|(a, g)| a * g).sum::<f64>() / (denom * denom) / c as f64;
        for ch in 0..c {
            let dl_dg = a[ch] / denom - cross;
            let direct = 1.0 + at(&gamma, ch) * nrm[ch];
            for i in ch * hw..(ch + 1) * hw {
                let via_norm = if gn[ch] > 0.0 { dl_dg * xs[i] / gn[ch] } else { 0.0 };
                dx[base + i] = gs[i] * direct + via_norm;
            }
        }
    }
    let gp = x.precision().grad_precision();
    Ok(GrnGrads {
        x: Tensor::from_f64(x.shape(), &dx, gp)?,
        gamma: Tensor::from_f64(state.gamma.shape(), &dgamma, gp)?,
        beta: Tensor::from_f64(state.beta.shape(), &dbeta, gp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian, uniform};

    #[test]
    fn bn_standardized_input_passes_through() {
        // two samples per channel at +-1 have mean 0, biased var 1
        let x = Tensor::from_f64(&[2, 1, 1, 1], &[1.0, -1.0], Precision::F64).unwrap();
        let mut st = BatchNormState::new(1, Precision::F64);
        let (y, _) = batch_norm(&x, &mut st).unwrap();
        let want = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.to_f64_vec()[0] - want).abs() < 1e-12);
        assert!((y.to_f64_vec()[1] + want).abs() < 1e-12);
    }

    #[test]
    fn bn_constant_channel_gives_beta() {
        let x = Tensor::full(&[4, 2, 3, 3], 5.0, Precision::F32);
        let mut st = BatchNormState::new(2, Precision::F32);
        st.beta = Tensor::from_f64(&[2], &[0.5, -0.25], Precision::F32).unwrap();
        let (y, _) = batch_norm(&x, &mut st).unwrap();
        for (i, e) in y.to_f64_vec().into_iter().enumerate() {
            let want = if (i / 9) % 2 == 0 { 0.5 } else { -0.25 };
            assert!((e - want).abs() < 1e-6);
        }
    }

    #[test]
    fn bn_train_output_statistics() {
        let x = uniform(&[8, 4, 6, 6], -3.0, 5.0, 17, Precision::F32);
        let mut st = BatchNormState::new(4, Precision::F32);
        let (y, _) = batch_norm(&x, &mut st).unwrap();
        let v = y.to_f64_vec();
        for ch in 0..4 {
            let vals: Vec<f64> = (0..8).flat_map(|s| v[(s * 4 + ch) * 36..][..36].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|e| (e - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn bn_running_stats_update() {
        let x = Tensor::from_f64(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0], Precision::F64).unwrap();
        let mut st = BatchNormState::new(1, Precision::F64);
        batch_norm(&x, &mut st).unwrap();
        // mean 2.5, unbiased var 5/3
        assert!((st.running_mean.to_f64_vec()[0] - 0.25).abs() < 1e-12);
        assert!((st.running_var.to_f64_vec()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn bn_eval_is_deterministic_affine() {
        let x = gaussian(&[3, 5, 4, 4], 2, Precision::F32);
        let mut st = BatchNormState::new(5, Precision::F32);
        st.running_mean = uniform(&[5], -1.0, 1.0, 3, Precision::F32);
        st.running_var = uniform(&[5], 0.5, 2.0, 4, Precision::F32);
        st.mode = NormMode::Eval;
        let before = st.clone();
        let (a, _) = batch_norm(&x, &mut st).unwrap();
        let (b, _) = batch_norm(&x, &mut st).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(st, before);
    }

    #[test]
    fn bn_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 3, 2, 2], Precision::F32);
        let mut st = BatchNormState::new(4, Precision::F32);
        assert!(batch_norm(&x, &mut st).is_err());
    }

    #[test]
    fn grn_identity_at_init() {
        let x = gaussian(&[2, 6, 3, 3], 5, Precision::F32);
        let y = grn(&x, &GrnState::per_channel(6, Precision::F32)).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn grn_identical_channels_normalize_to_one() {
        let plane = [1.0, -2.0, 0.5, 3.0];
        let v: Vec<f64> = (0..3).flat_map(|_| plane).collect();
        let x = Tensor::from_f64(&[1, 3, 2, 2], &v, Precision::F64).unwrap();
        let mut st = GrnState::per_channel(3, Precision::F64);
        st.gamma = Tensor::full(&[3], 1.0, Precision::F64);
        let y = grn(&x, &st).unwrap().to_f64_vec();
        let norm: f64 = plane.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = norm / (norm + GRN_EPS);
        assert!((n - 1.0).abs() < 1e-6);
        for (a, b) in y.iter().zip(&v) {
            assert!((a - (b * n + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn grn_scalar_shape_accepted_other_shapes_rejected() {
        let x = gaussian(&[1, 4, 2, 2], 1, Precision::F32);
        assert!(grn(&x, &GrnState::scalar(Precision::F32)).is_ok());
        assert!(grn(&x, &GrnState::per_channel(3, Precision::F32)).is_err());
    }
}
