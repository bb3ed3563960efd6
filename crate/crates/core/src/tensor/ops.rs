use std::ops::Range;

use super::{Element, Precision, Real, Tensor};
use crate::error::{Error, Result};

fn same_precision(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Precision> {
    if a.precision() != b.precision() {
        return Err(Error::Dtype {
            op,
            left: a.precision().name(),
            right: b.precision().name(),
        });
    }
    Ok(a.precision())
}

/// Concatenates along the channel axis; channels of `a` come first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let prec = same_precision("concat_channels", a, b)?;
    let [na, ca, ha, wa] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} vs {:?} differ outside the channel axis", a.shape(), b.shape()),
        ));
    }
    let plane = ha * wa;
    crate::dispatch!(prec, T => {
        let xa = a.as_slice::<T>()?;
        let xb = b.as_slice::<T>()?;
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for n in 0..na {
            out.extend_from_slice(&xa[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&xb[n * cb * plane..(n + 1) * cb * plane]);
        }
        Tensor::from_vec(&[na, ca + cb, ha, wa], out)
    })
}

/// Copies channels `range` of every sample.
pub fn slice_channels(x: &Tensor, range: Range<usize>) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    if range.start > range.end || range.end > c {
        return Err(Error::shape(
            "slice_channels",
            format!("range {range:?} out of bounds for {c} channels"),
        ));
    }
    let plane = h * w;
    let cs = range.end - range.start;
    crate::dispatch!(x.precision(), T => {
        let src = x.as_slice::<T>()?;
        let mut out = Vec::with_capacity(n * cs * plane);
        for s in 0..n {
            let base = s * c * plane;
            out.extend_from_slice(&src[base + range.start * plane..base + range.end * plane]);
        }
        Tensor::from_vec(&[n, cs, h, w], out)
    })
}

/// Per-sample, per-channel L2 norm over the spatial plane; output `(N, C, 1, 1)`.
///
/// Sums of squares are accumulated in f32 for f16/f32 tensors and in f64 for f64.
pub fn channel_l2_norms(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    crate::dispatch!(x.precision(), T => {
        let src = x.as_slice::<T>()?;
        let out: Vec<T> = (0..n * c)
            .map(|i| {
                let mut acc = <T as Element>::Acc::default();
                for v in &src[i * plane..(i + 1) * plane] {
                    let a = v.to_acc();
                    acc += a * a;
                }
                T::from_acc(acc.sqrt())
            })
            .collect();
        Tensor::from_vec(&[n, c, 1, 1], out)?.check_finite("channel_l2_norms")
    })
}

fn zip_map<F>(op: &'static str, a: &Tensor, b: &Tensor, f: F) -> Result<Tensor>
where
    F: Fn(f64, f64) -> f64 + Copy,
{
    let prec = same_precision(op, a, b)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    crate::dispatch!(prec, T => {
        let xa = a.as_slice::<T>()?;
        let xb = b.as_slice::<T>()?;
        let out: Vec<T> = xa
            .iter()
            .zip(xb)
            .map(|(&p, &q)| {
                let r = f(p.to_acc().as_f64(), q.to_acc().as_f64());
                T::from_acc(<T as Element>::Acc::of(r))
            })
            .collect();
        Tensor::from_vec(a.shape(), out)?.check_finite(op)
    })
}

/// Elementwise sum of two same-shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let prec = same_precision("add", a, b)?;
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    crate::dispatch!(prec, T => {
        let xa = a.as_slice::<T>()?;
        let xb = b.as_slice::<T>()?;
        let out: Vec<T> = xa
            .iter()
            .zip(xb)
            .map(|(&p, &q)| T::from_acc(p.to_acc() + q.to_acc()))
            .collect();
        Tensor::from_vec(a.shape(), out)?.check_finite("add")
    })
}

/// Elementwise difference `a - b`.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("sub", a, b, |p, q| p - q)
}

/// Multiplies every element by `s`.
pub fn scale(x: &Tensor, s: f64) -> Result<Tensor> {
    crate::dispatch!(x.precision(), T => {
        let k = <T as Element>::Acc::of(s);
        let out: Vec<T> = x.as_slice::<T>()?.iter().map(|&v| T::from_acc(v.to_acc() * k)).collect();
        Tensor::from_vec(x.shape(), out)?.check_finite("scale")
    })
}

fn per_channel<F>(op: &'static str, x: &Tensor, per: &Tensor, f: F) -> Result<Tensor>
where
    F: Fn(f64, f64) -> f64 + Copy,
{
    let [n, c, h, w] = x.dims4()?;
    if per.numel() != c {
        return Err(Error::shape(
            op,
            format!("per-channel operand has {} values for {c} channels", per.numel()),
        ));
    }
    let per = per.to_f64_vec();
    let plane = h * w;
    crate::dispatch!(x.precision(), T => {
        let src = x.as_slice::<T>()?;
        let mut out = Vec::with_capacity(src.len());
        for s in 0..n {
            for (ch, &p) in per.iter().enumerate() {
                let base = (s * c + ch) * plane;
                out.extend(src[base..base + plane].iter().map(|&v| {
                    T::from_acc(<T as Element>::Acc::of(f(v.to_acc().as_f64(), p)))
                }));
            }
        }
        Tensor::from_vec(x.shape(), out)?.check_finite(op)
    })
}

/// Multiplies channel `c` of every sample by `factors[c]`.
pub fn mul_channels(x: &Tensor, factors: &Tensor) -> Result<Tensor> {
    per_channel("mul_channels", x, factors, |v, p| v * p)
}

/// Adds `offsets[c]` to channel `c` of every sample.
pub fn add_channels(x: &Tensor, offsets: &Tensor) -> Result<Tensor> {
    per_channel("add_channels", x, offsets, |v, p| v + p)
}

/// Mean over `axis`, keeping it with extent 1.
pub fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape("mean_axis", format!("axis {axis} for rank {}", shape.len())));
    }
    let extent = shape[axis];
    if extent == 0 {
        return Err(Error::Empty("mean over a zero-length axis".into()));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.clone();
    out_shape[axis] = 1;
    crate::dispatch!(x.precision(), T => {
        let src = x.as_slice::<T>()?;
        let mut out = Vec::with_capacity(outer * inner);
        let inv = <T as Element>::Acc::of(1.0 / extent as f64);
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = <T as Element>::Acc::default();
                for a in 0..extent {
                    acc += src[(o * extent + a) * inner + i].to_acc();
                }
                out.push(T::from_acc(acc * inv));
            }
        }
        Tensor::from_vec(&out_shape, out)
    })
}
