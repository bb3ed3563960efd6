//! Max, average and global-average pooling without padding.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::tensor::{Element, Precision, Real, Tensor};

fn pooled_hw(op: &'static str, h: usize, w: usize, k: usize, s: usize) -> Result<(usize, usize)> {
    if k == 0 || s == 0 {
        return Err(Error::Config(format!("{op}: kernel and stride must be positive")));
    }
    if h < k || w < k {
        return Err(Error::shape(op, format!("window {k} larger than {h}x{w} input")));
    }
    Ok(((h - k) / s + 1, (w - k) / s + 1))
}

/// Output extent of a `k`/`s` pool, `None` when the window does not fit.
pub fn pool_output_hw(h: usize, w: usize, k: usize, s: usize) -> Option<(usize, usize)> {
    pooled_hw("pool", h, w, k, s).ok()
}

pub fn max_pool2d(x: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = pooled_hw("max_pool2d", h, w, k, s)?;
    crate::dispatch!(x.precision(), T => {
        let xs = x.as_slice::<T>()?;
        let mut out: Vec<T> = Vec::with_capacity(n * c * oh * ow);
        for plane in xs.chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = plane[oy * s * w + ox * s];
                    for i in 0..k {
                        for &v in &plane[(oy * s + i) * w + ox * s..][..k] {
                            if v.to_acc() > best.to_acc() {
                                best = v;
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
        Tensor::from_vec(&[n, c, oh, ow], out)?.check_finite("max_pool2d")
    })
}

/// Routes each output gradient to the first (row-major) maximum of its window.
pub fn max_pool2d_vjp(x: &Tensor, k: usize, s: usize, grad: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = pooled_hw("max_pool2d_vjp", h, w, k, s)?;
    if grad.shape() != [n, c, oh, ow] {
        return Err(Error::shape("max_pool2d_vjp", format!("grad {:?}", grad.shape())));
    }
    let gp = x.precision().grad_precision();
    let g = grad.cast(gp);
    crate::dispatch!(x.precision(), T => {
        crate::dispatch_grad!(gp, G => {
            let xs = x.as_slice::<T>()?;
            let gs = g.as_slice::<G>()?;
            let mut dx: Vec<G> = vec![0.0; xs.len()];
            for (p, plane) in xs.chunks_exact(h * w).enumerate() {
                let dplane = &mut dx[p * h * w..(p + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut arg = oy * s * w + ox * s;
                        for i in 0..k {
                            for j in 0..k {
                                let idx = (oy * s + i) * w + ox * s + j;
                                if plane[idx].to_acc() > plane[arg].to_acc() {
                                    arg = idx;
                                }
                            }
                        }
                        dplane[arg] += gs[(p * oh + oy) * ow + ox];
                    }
                }
            }
            Tensor::from_vec(x.shape(), dx)
        })
    })
}

pub fn avg_pool2d(x: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = pooled_hw("avg_pool2d", h, w, k, s)?;
    crate::dispatch!(x.precision(), T => {
        let xs = x.as_slice::<T>()?;
        let inv = <T as Element>::Acc::of(1.0 / (k * k) as f64);
        let mut out: Vec<T> = Vec::with_capacity(n * c * oh * ow);
        for plane in xs.chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = <T as Element>::Acc::zero();
                    for i in 0..k {
                        for &v in &plane[(oy * s + i) * w + ox * s..][..k] {
                            acc += v.to_acc();
                        }
                    }
                    out.push(T::from_acc(acc * inv));
                }
            }
        }
        Tensor::from_vec(&[n, c, oh, ow], out)?.check_finite("avg_pool2d")
    })
}

/// Spreads each output gradient uniformly over its window.
pub fn avg_pool2d_vjp(input_shape: &[usize], k: usize, s: usize, grad: &Tensor) -> Result<Tensor> {
    let [n, c, h, w]: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| Error::shape("avg_pool2d_vjp", "input shape must be 4-D"))?;
    let (oh, ow) = pooled_hw("avg_pool2d_vjp", h, w, k, s)?;
    if grad.shape() != [n, c, oh, ow] {
        return Err(Error::shape("avg_pool2d_vjp", format!("grad {:?}", grad.shape())));
    }
    let gp = grad.precision().grad_precision();
    let g = grad.cast(gp);
    crate::dispatch_grad!(gp, G => {
        let gs = g.as_slice::<G>()?;
        let inv = 1.0 / (k * k) as G;
        let mut dx: Vec<G> = vec![0.0; n * c * h * w];
        for (p, dplane) in dx.chunks_exact_mut(h * w).enumerate() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = gs[(p * oh + oy) * ow + ox] * inv;
                    for i in 0..k {
                        for d in &mut dplane[(oy * s + i) * w + ox * s..][..k] {
                            *d += v;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(input_shape, dx)
    })
}

/// Averages every channel plane to a single value: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn adaptive_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    if h * w == 0 {
        return Err(Error::shape("adaptive_avg_pool", "empty spatial plane"));
    }
    crate::dispatch!(x.precision(), T => {
        let xs = x.as_slice::<T>()?;
        let out: Vec<T> = xs
            .chunks_exact(h * w)
            .map(|p| T::from_f64(p.iter().map(|v| v.to_f64()).sum::<f64>() / (h * w) as f64))
            .collect();
        Tensor::from_vec(&[n, c, 1, 1], out)
    })
}

pub fn adaptive_avg_pool_vjp(input_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let [n, c, h, w]: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| Error::shape("adaptive_avg_pool_vjp", "input shape must be 4-D"))?;
    if grad.numel() != n * c {
        return Err(Error::shape("adaptive_avg_pool_vjp", format!("grad {:?}", grad.shape())));
    }
    let gp: Precision = grad.precision().grad_precision();
    let inv = 1.0 / (h * w) as f64;
    let dx: Vec<f64> = grad
        .to_f64_vec()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, h * w))
        .collect();
    Tensor::from_f64(input_shape, &dx, gp)
}
