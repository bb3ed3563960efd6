use super::kernels::dot;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn rows_features(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, f] | [n, f, 1, 1] => Ok((n, f)),
        _ => Err(Error::shape(op, format!("expected (N,F) or (N,F,1,1), got {:?}", x.shape()))),
    }
}

/// `y = x w^T + b` with `x: (N, F)` (or `(N, F, 1, 1)`), `w: (K, F)`, `b: (K)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, f) = rows_features("linear", x)?;
    let [k, wf]: [usize; 2] = w
        .shape()
        .try_into()
        .map_err(|_| Error::shape("linear", "weight must be (K, F)"))?;
    if wf != f {
        return Err(Error::shape("linear", format!("input has {f} features, weight expects {wf}")));
    }
    if b.is_some_and(|b| b.numel() != k) {
        return Err(Error::shape("linear", "bias length differs from K"));
    }
    crate::dispatch!(x.precision(), T => {
        let xs: Vec<<T as Element>::Acc> = x.as_slice::<T>()?.iter().map(|v| v.to_acc()).collect();
        let ws: Vec<<T as Element>::Acc> = w.as_slice::<T>()?.iter().map(|v| v.to_acc()).collect();
        let bs: Option<Vec<<T as Element>::Acc>> = match b {
            Some(b) => Some(b.as_slice::<T>()?.iter().map(|v| v.to_acc()).collect()),
            None => None,
        };
        let mut out: Vec<T> = Vec::with_capacity(n * k);
        for r in 0..n {
            for o in 0..k {
                let mut acc = dot(&xs[r * f..(r + 1) * f], &ws[o * f..(o + 1) * f]);
                if let Some(bs) = &bs {
                    acc += bs[o];
                }
                out.push(T::from_acc(acc));
            }
        }
        Tensor::from_vec(&[n, k], out)?.check_finite("linear")
    })
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    /// Same shape as the forward input.
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

pub fn linear_vjp(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<LinearGrads> {
    let (n, f) = rows_features("linear_vjp", x)?;
    let k = w.shape()[0];
    if grad.shape() != [n, k] || w.shape() != [k, f] {
        return Err(Error::shape("linear_vjp", format!("grad {:?}, weight {:?}", grad.shape(), w.shape())));
    }
    let gp = x.precision().grad_precision();
    let xv = x.to_f64_vec();
    let wv = w.to_f64_vec();
    let gv = grad.to_f64_vec();
    let mut dx = vec![0.0; n * f];
    let mut dw = vec![0.0; k * f];
    let mut db = vec![0.0; k];
    for r in 0..n {
        for o in 0..k {
            let g = gv[r * k + o];
            db[o] += g;
            for j in 0..f {
                dx[r * f + j] += g * wv[o * f + j];
                dw[o * f + j] += g * xv[r * f + j];
            }
        }
    }
    Ok(LinearGrads {
        x: Tensor::from_f64(x.shape(), &dx, gp)?,
        w: Tensor::from_f64(w.shape(), &dw, gp)?,
        b: Tensor::from_f64(&[k], &db, gp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::testutil::uniform;

    #[test]
    fn identity_weight() {
        let x = uniform(&[3, 4], -1.0, 1.0, 1, Precision::F32);
        let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let w = Tensor::from_f64(&[4, 4], &eye, Precision::F32).unwrap();
        assert!(linear(&x, &w, None).unwrap().bit_eq(&x));
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let x = uniform(&[2, 3], -1.0, 1.0, 2, Precision::F32);
        let w = Tensor::zeros(&[2, 3], Precision::F32);
        let b = Tensor::from_f64(&[2], &[0.5, -1.5], Precision::F32).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().to_f64_vec(), vec![0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn matches_naive_matmul() {
        let x = uniform(&[5, 7], -1.0, 1.0, 3, Precision::F32);
        let w = uniform(&[4, 7], -1.0, 1.0, 4, Precision::F32);
        let b = uniform(&[4], -1.0, 1.0, 5, Precision::F32);
        let y = linear(&x, &w, Some(&b)).unwrap().to_f64_vec();
        let (xv, wv, bv) = (x.to_f64_vec(), w.to_f64_vec(), b.to_f64_vec());
        for r in 0..5 {
            for o in 0..4 {
                let want: f64 = bv[o] + (0..7).map(|j| xv[r * 7 + j] * wv[o * 7 + j]).sum::<f64>();
                assert!((y[r * 4 + o] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooled_4d_input_accepted() {
        let x = Tensor::zeros(&[2, 3, 1, 1], Precision::F32);
        let w = Tensor::zeros(&[4, 3], Precision::F32);
        assert_eq!(linear(&x, &w, None).unwrap().shape(), &[2, 4]);
        assert!(linear(&Tensor::zeros(&[2, 5], Precision::F32), &w, None).is_err());
    }
}
