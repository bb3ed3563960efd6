//! Grouped, strided, dilated 2-D convolution (cross-correlation) via im2col.

use super::kernels::{axpy, dot, sum};
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::tensor::{Element, Precision, Real, Tensor};

/// Hyperparameters of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no dilation, one group, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
            bias: false,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        ConvSpec::new(channels, channels, kernel).groups(channels)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec { in_channels, out_channels, groups, .. } = *self;
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "conv groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::Config("kernel, stride and dilation must be positive".into()));
        }
        Ok(())
    }

    /// Output extent along one axis: `floor((n + 2p - d(k-1) - 1) / s) + 1`.
    fn out_extent(n: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
        let span = d * (k - 1) + 1;
        let padded = n + 2 * p;
        if padded < span {
            None
        } else {
            Some((padded - span) / s + 1)
        }
    }

    /// Output spatial size; errors when either extent would be below 1.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let oh = Self::out_extent(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0);
        let ow = Self::out_extent(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!("output extent < 1 for {h}x{w} input with {self:?}"),
            )),
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates for one sample producing an `oh x ow` output.
    pub fn macs(&self, oh: usize, ow: usize) -> u64 {
        (oh * ow) as u64
            * self.out_channels as u64
            * (self.in_channels / self.groups) as u64
            * (self.kernel.0 * self.kernel.1) as u64
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    dh: usize,
    dw: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn new(x_shape: [usize; 4], w_shape: &[usize], spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [n, cin, h, w] = x_shape;
        if cin != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, spec expects {}", spec.in_channels),
            ));
        }
        if w_shape != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!("weight shape {w_shape:?}, spec expects {:?}", spec.weight_shape()),
            ));
        }
        let (oh, ow) = spec.output_hw(h, w)?;
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout: spec.out_channels,
            oh,
            ow,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
            dh: spec.dilation.0,
            dw: spec.dilation.1,
            groups: spec.groups,
            cin_g: cin / spec.groups,
            cout_g: spec.out_channels / spec.groups,
        })
    }

    fn rows(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let off = (kj * self.dw) as isize - self.pw as isize;
        let sw = self.sw as isize;
        let lo = if off < 0 { ((-off) + sw - 1) / sw } else { 0 };
        let last = self.w as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / sw + 1 };
        let (lo, hi) = (lo as usize, (hi as usize).min(self.ow));
        (lo.min(hi), hi)
    }

    fn in_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.sh + ki * self.dh) as isize - self.ph as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

/// Expands one group of one sample into a `(cin_g*kh*kw) x (oh*ow)` matrix.
fn im2col<T: Element>(x: &[T], g: &Geometry, group: usize, col: &mut [T::Acc]) {
    let p = g.positions();
    let plane = g.h * g.w;
    for ci in 0..g.cin_g {
        let src = &x[(group * g.cin_g + ci) * plane..][..plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj);
                let off = kj * g.dw;
                for oy in 0..g.oh {
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.in_row(oy, ki) {
                        None => d.fill(<T::Acc>::zero()),
                        Some(iy) => {
                            let s = &src[iy * g.w..(iy + 1) * g.w];
                            d[..lo].fill(<T::Acc>::zero());
                            d[hi..].fill(<T::Acc>::zero());
                            if g.sw == 1 && lo < hi {
                                let src_lo = lo + off - g.pw;
                                for (o, v) in d[lo..hi].iter_mut().zip(&s[src_lo..src_lo + hi - lo]) {
                                    *o = v.to_acc();
                                }
                            } else {
                                for ox in lo..hi {
                                    d[ox] = s[ox * g.sw + off - g.pw].to_acc();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into one group of a sample gradient.
fn col2im<A: Real>(col: &[A], g: &Geometry, group: usize, gx: &mut [A]) {
    let p = g.positions();
    let plane = g.h * g.w;
    for ci in 0..g.cin_g {
        let dst = &mut gx[(group * g.cin_g + ci) * plane..][..plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj);
                let off = kj * g.dw;
                for oy in 0..g.oh {
                    if let Some(iy) = g.in_row(oy, ki) {
                        let s = &src[oy * g.ow..(oy + 1) * g.ow];
                        let d = &mut dst[iy * g.w..(iy + 1) * g.w];
                        if g.sw == 1 && lo < hi {
                            let dst_lo = lo + off - g.pw;
                            for (o, v) in d[dst_lo..dst_lo + hi - lo].iter_mut().zip(&s[lo..hi]) {
                                *o += *v;
                            }
                        } else {
                            for ox in lo..hi {
                                d[ox * g.sw + off - g.pw] += s[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(out_row, in_row, lo, hi, in_off)` for every valid output row of
/// kernel tap `(ki, kj)`; output column `lo + j` reads input column `in_lo + j * sw`.
#[inline]
fn for_tap_rows(g: &Geometry, ki: usize, kj: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (lo, hi) = g.col_range(kj);
    if lo >= hi {
        return;
    }
    // lo is the first column whose source index is non-negative
    let in_lo = lo * g.sw + kj * g.dw - g.pw;
    for oy in 0..g.oh {
        if let Some(iy) = g.in_row(oy, ki) {
            f(oy, iy, lo, hi, in_lo);
        }
    }
}

/// Direct depthwise forward: one input channel per output channel.
fn depthwise_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &Geometry) -> Vec<T> {
    let (plane, p, taps) = (g.h * g.w, g.positions(), g.kh * g.kw);
    let mut out = Vec::with_capacity(g.n * g.cout * p);
    let mut xs = vec![<T::Acc>::zero(); plane];
    let mut acc = vec![<T::Acc>::zero(); p];
    for n in 0..g.n {
        for c in 0..g.cout {
            for (d, v) in xs.iter_mut().zip(&x[(n * g.cin + c) * plane..][..plane]) {
                *d = v.to_acc();
            }
            acc.fill(b.map_or(<T::Acc>::zero(), |b| b[c].to_acc()));
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = w[c * taps + ki * g.kw + kj].to_acc();
                    for_tap_rows(g, ki, kj, |oy, iy, lo, hi, in_lo| {
                        let src = &xs[iy * g.w..(iy + 1) * g.w];
                        let dst = &mut acc[oy * g.ow + lo..oy * g.ow + hi];
                        if g.sw == 1 {
                            axpy(wv, &src[in_lo..in_lo + hi - lo], dst);
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d += wv * src[in_lo + j * g.sw];
                            }
                        }
                    });
                }
            }
            out.extend(acc.iter().map(|&a| T::from_acc(a)));
        }
    }
    out
}

/// Direct depthwise gradients.
fn depthwise_backward<A: Element<Acc = A> + Real>(
    x: &[A],
    w: &[A],
    go: &[A],
    g: &Geometry,
    want_x: bool,
) -> (Option<Vec<A>>, Vec<A>, Vec<A>) {
    let (plane, p, taps) = (g.h * g.w, g.positions(), g.kh * g.kw);
    let mut gw = vec![A::zero(); g.cout * taps];
    let mut gb = vec![A::zero(); g.cout];
    let mut gx = want_x.then(|| vec![A::zero(); g.n * g.cin * plane]);
    for n in 0..g.n {
        for c in 0..g.cout {
            let xs = &x[(n * g.cin + c) * plane..][..plane];
            let gos = &go[(n * g.cout + c) * p..][..p];
            gb[c] += sum(gos);
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let t = c * taps + ki * g.kw + kj;
                    let wv = w[t];
                    let mut gwt = A::zero();
                    for_tap_rows(g, ki, kj, |oy, iy, lo, hi, in_lo| {
                        let grow = &gos[oy * g.ow + lo..oy * g.ow + hi];
                        let xrow = &xs[iy * g.w..(iy + 1) * g.w];
                        if g.sw == 1 {
                            gwt += dot(grow, &xrow[in_lo..in_lo + hi - lo]);
                        } else {
                            for (j, gv) in grow.iter().enumerate() {
                                gwt += *gv * xrow[in_lo + j * g.sw];
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let drow = &mut gx[(n * g.cin + c) * plane + iy * g.w..][..g.w];
                            if g.sw == 1 {
                                axpy(wv, grow, &mut drow[in_lo..in_lo + hi - lo]);
                            } else {
                                for (j, gv) in grow.iter().enumerate() {
                                    drow[in_lo + j * g.sw] += wv * *gv;
                                }
                            }
                        }
                    });
                    gw[t] += gwt;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn forward_kernel<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &Geometry) -> Vec<T> {
    if g.cin_g == 1 && g.cout_g == 1 {
        return depthwise_forward(x, w, b, g);
    }
    let (k, p) = (g.rows(), g.positions());
    let mut out = Vec::with_capacity(g.n * g.cout * p);
    let mut col = vec![<T::Acc>::zero(); k * p];
    let mut acc = vec![<T::Acc>::zero(); p];
    let sample = g.cin * g.h * g.w;
    let mut planes: Vec<Vec<T>> = vec![Vec::new(); g.cout];
    for n in 0..g.n {
        let xs = &x[n * sample..(n + 1) * sample];
        for group in 0..g.groups {
            im2col(xs, g, group, &mut col);
            for ocl in 0..g.cout_g {
                let oc = group * g.cout_g + ocl;
                let init = b.map_or(<T::Acc>::zero(), |b| b[oc].to_acc());
                acc.fill(init);
                let wrow = &w[oc * k..(oc + 1) * k];
                for (r, wv) in wrow.iter().enumerate() {
                    axpy(wv.to_acc(), &col[r * p..(r + 1) * p], &mut acc);
                }
                planes[oc] = acc.iter().map(|&a| T::from_acc(a)).collect();
            }
        }
        for plane in planes.iter_mut() {
            out.append(plane);
        }
    }
    out
}

/// 2-D cross-correlation with zero padding.
///
/// `x` is `(N, Cin, H, W)`, `w` is `(Cout, Cin/groups, kh, kw)`, `b` is `(Cout)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let g = Geometry::new(x.dims4()?, w.shape(), spec)?;
    if w.precision() != x.precision() || b.is_some_and(|b| b.precision() != x.precision()) {
        return Err(Error::Dtype {
            op: "conv2d",
            left: x.precision().name(),
            right: w.precision().name(),
        });
    }
    if let Some(b) = b {
        if b.numel() != spec.out_channels {
            return Err(Error::shape("conv2d", format!("bias has {} values", b.numel())));
        }
    }
    crate::dispatch!(x.precision(), T => {
        let bias = match b {
            Some(b) => Some(b.as_slice::<T>()?),
            None => None,
        };
        let out = forward_kernel::<T>(x.as_slice()?, w.as_slice()?, bias, &g);
        Tensor::from_vec(&[g.n, g.cout, g.oh, g.ow], out)?.check_finite("conv2d")
    })
}

/// Gradients of a convolution, in the gradient precision of the inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    /// `None` when the input gradient was not requested.
    pub x: Option<Tensor>,
    pub w: Tensor,
    pub b: Tensor,
}

fn backward_kernel<A: Element<Acc = A> + Real>(
    x: &[A],
    w: &[A],
    go: &[A],
    g: &Geometry,
    want_x: bool,
) -> (Option<Vec<A>>, Vec<A>, Vec<A>) {
    if g.cin_g == 1 && g.cout_g == 1 {
        return depthwise_backward(x, w, go, g, want_x);
    }
    let (k, p) = (g.rows(), g.positions());
    let sample_in = g.cin * g.h * g.w;
    let sample_out = g.cout * p;
    let mut gw = vec![A::zero(); g.cout * k];
    let mut gb = vec![A::zero(); g.cout];
    let mut gx = want_x.then(|| vec![A::zero(); g.n * sample_in]);
    let mut col = vec![A::zero(); k * p];
    let mut gcol = vec![A::zero(); k * p];
    for n in 0..g.n {
        let xs = &x[n * sample_in..(n + 1) * sample_in];
        let gos = &go[n * sample_out..(n + 1) * sample_out];
        for group in 0..g.groups {
            im2col(xs, g, group, &mut col);
            if want_x {
                gcol.fill(A::zero());
            }
            for ocl in 0..g.cout_g {
                let oc = group * g.cout_g + ocl;
                let grow = &gos[oc * p..(oc + 1) * p];
                gb[oc] += sum(grow);
                for r in 0..k {
                    gw[oc * k + r] += dot(grow, &col[r * p..(r + 1) * p]);
                }
                if want_x {
                    for r in 0..k {
                        axpy(w[oc * k + r], grow, &mut gcol[r * p..(r + 1) * p]);
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                col2im(&gcol, g, group, &mut gx[n * sample_in..(n + 1) * sample_in]);
            }
        }
    }
    (gx, gw, gb)
}

/// Vector-Jacobian product of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_vjp(x: &Tensor, w: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    conv2d_vjp_with(x, w, spec, grad_out, true)
}

/// As [`conv2d_vjp`]; `want_input_grad = false` skips the input gradient.
pub fn conv2d_vjp_with(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let g = Geometry::new(x.dims4()?, w.shape(), spec)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_vjp",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [g.n, g.cout, g.oh, g.ow]),
        ));
    }
    let gp = x.precision().grad_precision();
    let xg = x.cast(gp);
    let wg = w.cast(gp);
    let gog = grad_out.cast(gp);
    let wshape = spec.weight_shape();
    crate::dispatch_grad!(gp, A => {
        let (gx, gw, gb) = backward_kernel::<A>(xg.as_slice()?, wg.as_slice()?, gog.as_slice()?, &g, want_input_grad);
        Ok(ConvGrads {
            x: gx.map(|v| Tensor::from_vec(&[g.n, g.cin, g.h, g.w], v)).transpose()?,
            w: Tensor::from_vec(&wshape, gw)?,
            b: Tensor::from_vec(&[g.cout], gb)?,
        })
    })
}

/// Precision-independent reference used by tests: direct six-loop convolution in f64.
#[doc(hidden)]
pub fn conv2d_reference(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let [n, cin, h, wd] = x.dims4()?;
    let (oh, ow) = spec.output_hw(h, wd)?;
    let xv = x.to_f64_vec();
    let wv = w.to_f64_vec();
    let bv = b.map(|b| b.to_f64_vec());
    let cin_g = cin / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (kh, kw) = spec.kernel;
    let mut out = vec![0.0; n * spec.out_channels * oh * ow];
    for s in 0..n {
        for oc in 0..spec.out_channels {
            let grp = oc / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv.as_ref().map_or(0.0, |b| b[oc]);
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * spec.stride.0 + ki * spec.dilation.0) as isize - spec.padding.0 as isize;
                                let ix = (ox * spec.stride.1 + kj * spec.dilation.1) as isize - spec.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                    continue;
                                }
                                acc += xv[((s * cin + c) * h + iy as usize) * wd + ix as usize]
                                    * wv[((oc * cin_g + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[((s * spec.out_channels + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_f64(&[n, spec.out_channels, oh, ow], &out, Precision::F64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{concat_channels, slice_channels};
    use crate::testutil::uniform;

    fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
    }

    #[test]
    fn stem_layer_shape() {
        let spec = ConvSpec::new(3, 40, 3).stride(2).padding(2).dilation(2);
        assert_eq!(spec.output_hw(240, 240).unwrap(), (120, 120));
        assert_eq!(spec.output_hw(224, 224).unwrap(), (112, 112));
        let dw = ConvSpec::depthwise(40, 3).stride(2).padding(1);
        assert_eq!(dw.output_hw(120, 120).unwrap(), (60, 60));
        // padding 2 would give 61, which is why the stem uses padding 1
        assert_eq!(dw.padding(2).output_hw(120, 120).unwrap(), (61, 61));
    }

    #[test]
    fn stem_conv_runs_at_full_size() {
        let spec = ConvSpec::new(3, 40, 3).stride(2).padding(2).dilation(2);
        let x = uniform(&[1, 3, 240, 240], 0.0, 1.0, 1, Precision::F32);
        let w = uniform(&spec.weight_shape(), -0.2, 0.2, 2, Precision::F32);
        assert_eq!(conv2d(&x, &w, None, &spec).unwrap().shape(), &[1, 40, 120, 120]);
    }

    #[test]
    fn one_by_one_scalar_weight_scales_input() {
        let spec = ConvSpec::new(1, 1, 1);
        let x = Tensor::from_f64(&[1, 1, 1, 1], &[3.5], Precision::F32).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[2.0], Precision::F32).unwrap();
        assert_eq!(conv2d(&x, &w, None, &spec).unwrap().to_f32_vec(), vec![7.0]);
    }

    #[test]
    fn grouped_matches_naive_reference() {
        let spec = ConvSpec::new(4, 6, 3).padding(1).groups(2);
        let x = uniform(&[2, 4, 7, 7], -1.0, 1.0, 3, Precision::F32);
        let w = uniform(&[6, 2, 3, 3], -1.0, 1.0, 4, Precision::F32);
        let got = conv2d(&x, &w, None, &spec).unwrap().to_f64_vec();
        let want = conv2d_reference(&x, &w, None, &spec).unwrap().to_f64_vec();
        let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(rel_close(&got, &want, 1e-5), "max abs diff {worst}");
    }

    #[test]
    fn strided_dilated_biased_matches_reference() {
        for (stride, pad, dil) in [(1, 0, 1), (2, 2, 2), (3, 1, 2), (2, 0, 1)] {
            let spec = ConvSpec::new(3, 5, 3).stride(stride).padding(pad).dilation(dil).bias(true);
            let x = uniform(&[2, 3, 11, 9], -1.0, 1.0, 5, Precision::F64);
            let w = uniform(&[5, 3, 3, 3], -1.0, 1.0, 6, Precision::F64);
            let b = uniform(&[5], -1.0, 1.0, 7, Precision::F64);
            let got = conv2d(&x, &w, Some(&b), &spec).unwrap().to_f64_vec();
            let want = conv2d_reference(&x, &w, Some(&b), &spec).unwrap().to_f64_vec();
            assert!(rel_close(&got, &want, 1e-12), "stride {stride} pad {pad} dil {dil}");
        }
    }

    #[test]
    fn groups_equal_independent_slices() {
        for g in [1usize, 2, 4] {
            let spec = ConvSpec::new(8, 8, 3).padding(1).groups(g);
            let x = uniform(&[2, 8, 6, 6], -1.0, 1.0, 10 + g as u64, Precision::F64);
            let w = uniform(&spec.weight_shape(), -1.0, 1.0, 20 + g as u64, Precision::F64);
            let full = conv2d(&x, &w, None, &spec).unwrap();
            let per = 8 / g;
            let mut parts: Option<Tensor> = None;
            for i in 0..g {
                let xi = slice_channels(&x, i * per..(i + 1) * per).unwrap();
                let wi = Tensor::from_f64(
                    &[per, per, 3, 3],
                    &w.to_f64_vec()[i * per * per * 9..(i + 1) * per * per * 9],
                    Precision::F64,
                )
                .unwrap();
                let yi = conv2d(&xi, &wi, None, &ConvSpec::new(per, per, 3).padding(1)).unwrap();
                parts = Some(match parts {
                    None => yi,
                    Some(p) => concat_channels(&p, &yi).unwrap(),
                });
            }
            assert!(rel_close(&full.to_f64_vec(), &parts.unwrap().to_f64_vec(), 1e-12));
        }
    }

    #[test]
    fn depthwise_matches_per_channel_loop() {
        let c = 5;
        let spec = ConvSpec::depthwise(c, 3).padding(1);
        let x = uniform(&[1, c, 6, 7], -1.0, 1.0, 31, Precision::F64);
        let w = uniform(&[c, 1, 3, 3], -1.0, 1.0, 32, Precision::F64);
        let got = conv2d(&x, &w, None, &spec).unwrap().to_f64_vec();
        let xv = x.to_f64_vec();
        let wv = w.to_f64_vec();
        for ch in 0..c {
            for y in 0..6 {
                for xx in 0..7 {
                    let mut acc = 0.0;
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (iy, ix) = (y as isize + ki as isize - 1, xx as isize + kj as isize - 1);
                            if (0..6).contains(&iy) && (0..7).contains(&ix) {
                                acc += xv[(ch * 6 + iy as usize) * 7 + ix as usize] * wv[ch * 9 + ki * 3 + kj];
                            }
                        }
                    }
                    assert!((got[(ch * 6 + y) * 7 + xx] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn strided_depthwise_matches_reference() {
        for (stride, pad, dil) in [(2, 1, 1), (2, 0, 1), (3, 2, 2), (1, 2, 2)] {
            let spec = ConvSpec::depthwise(3, 3).stride(stride).padding(pad).dilation(dil).bias(true);
            let x = uniform(&[2, 3, 9, 8], -1.0, 1.0, 41, Precision::F64);
            let w = uniform(&spec.weight_shape(), -1.0, 1.0, 42, Precision::F64);
            let b = uniform(&[3], -1.0, 1.0, 43, Precision::F64);
            let got = conv2d(&x, &w, Some(&b), &spec).unwrap().to_f64_vec();
            let want = conv2d_reference(&x, &w, Some(&b), &spec).unwrap().to_f64_vec();
            assert!(rel_close(&got, &want, 1e-12), "stride {stride} pad {pad} dil {dil}");
        }
    }

    #[test]
    fn errors_on_bad_channels_and_collapse() {
        let spec = ConvSpec::new(4, 6, 3).groups(3);
        assert!(spec.validate().is_err());
        let spec = ConvSpec::new(3, 4, 5);
        let x = Tensor::zeros(&[1, 3, 4, 4], Precision::F32);
        let w = Tensor::zeros(&spec.weight_shape(), Precision::F32);
        assert!(conv2d(&x, &w, None, &spec).is_err());
        let x2 = Tensor::zeros(&[1, 2, 8, 8], Precision::F32);
        assert!(conv2d(&x2, &w, None, &spec).is_err());
    }

    #[test]
    fn vjp_zero_grad_out_gives_zero_grads() {
        let spec = ConvSpec::new(2, 3, 3).padding(1).bias(true);
        let x = uniform(&[1, 2, 5, 5], -1.0, 1.0, 1, Precision::F32);
        let w = uniform(&spec.weight_shape(), -1.0, 1.0, 2, Precision::F32);
        let go = Tensor::zeros(&[1, 3, 5, 5], Precision::F32);
        let g = conv2d_vjp(&x, &w, &spec, &go).unwrap();
        assert!(g.x.unwrap().to_f64_vec().iter().all(|&v| v == 0.0));
        assert!(g.w.to_f64_vec().iter().all(|&v| v == 0.0));
        assert!(g.b.to_f64_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_scalar_product_rule() {
        let spec = ConvSpec::new(1, 1, 1);
        let x = Tensor::from_f64(&[1, 1, 1, 1], &[3.0], Precision::F64).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[-2.0], Precision::F64).unwrap();
        let go = Tensor::from_f64(&[1, 1, 1, 1], &[1.0], Precision::F64).unwrap();
        let g = conv2d_vjp(&x, &w, &spec, &go).unwrap();
        assert_eq!(g.w.to_f64_vec(), vec![3.0]);
        assert_eq!(g.x.unwrap().to_f64_vec(), vec![-2.0]);
        assert_eq!(g.b.to_f64_vec(), vec![1.0]);
    }

    #[test]
    fn f16_grads_come_back_in_f32() {
        let spec = ConvSpec::new(1, 1, 1);
        let x = Tensor::full(&[1, 1, 2, 2], 1.0, Precision::F16);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0, Precision::F16);
        let go = Tensor::full(&[1, 1, 2, 2], 1.0, Precision::F16);
        let g = conv2d_vjp(&x, &w, &spec, &go).unwrap();
        assert_eq!(g.w.precision(), Precision::F32);
        assert_eq!(g.w.to_f64_vec(), vec![4.0]);
    }
}
