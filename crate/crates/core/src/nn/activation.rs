//! ReLU6 (used by the model) and the activation set of the microbenchmark.

use std::fmt;
use std::str::FromStr;

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::tensor::{Element, Real, Tensor};

/// `min(max(x, 0), 6)` elementwise.
pub fn relu6(x: &Tensor) -> Result<Tensor> {
    crate::dispatch!(x.precision(), T => {
        let zero = <T as Element>::Acc::zero();
        let six = <T as Element>::Acc::of(6.0);
        let v: Vec<T> = x
            .as_slice::<T>()?
            .iter()
            .map(|&e| T::from_acc(e.to_acc().max(zero).min(six)))
            .collect();
        Tensor::from_vec(x.shape(), v)?.check_finite("relu6")
    })
}

/// Passes `grad` where `0 < x < 6`, zero elsewhere. Result is in grad precision.
pub fn relu6_vjp(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if x.shape() != grad.shape() {
        return Err(Error::shape(
            "relu6_vjp",
            format!("{:?} vs {:?}", x.shape(), grad.shape()),
        ));
    }
    let gp = x.precision().grad_precision();
    let g = grad.cast(gp);
    let xv = x.to_f64_vec();
    crate::dispatch_grad!(gp, G => {
        let v: Vec<G> = g
            .as_slice::<G>()?
            .iter()
            .zip(&xv)
            .map(|(&g, &x)| if x > 0.0 && x < 6.0 { g } else { 0.0 })
            .collect();
        Tensor::from_vec(x.shape(), v)
    })
}

/// Activations compared by the latency microbenchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Relu6,
    LeakyRelu,
    Elu,
    Celu,
    /// tanh approximation
    Gelu,
    /// exact form via erf
    GeluErf,
}

const LEAKY_SLOPE: f32 = 0.01;
const SQRT_2_OVER_PI: f32 = 0.797_884_6;

impl Activation {
    /// The six activations of the benchmark table, GELU in its tanh form.
    pub const BENCHMARKED: [Activation; 6] = [
        Activation::Relu,
        Activation::Relu6,
        Activation::LeakyRelu,
        Activation::Elu,
        Activation::Celu,
        Activation::Gelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "ReLU",
            Activation::Relu6 => "ReLU6",
            Activation::LeakyRelu => "LeakyReLU",
            Activation::Elu => "ELU",
            Activation::Celu => "CELU",
            Activation::Gelu => "GELU",
            Activation::GeluErf => "GELU-erf",
        }
    }

    pub fn apply_scalar(self, x: f32) -> f32 {
        match self {
            Activation::Relu => relu(x),
            Activation::Relu6 => x.max(0.0).min(6.0),
            Activation::LeakyRelu => leaky(x),
            Activation::Elu => elu(x),
            Activation::Celu => celu(x),
            Activation::Gelu => gelu_tanh(x),
            Activation::GeluErf => gelu_erf(x),
        }
    }

    /// Writes `f(x)` into `out`; the match sits outside the loop.
    pub fn apply(self, x: &[f32], out: &mut [f32]) {
        assert_eq!(x.len(), out.len(), "activation buffers differ in length");
        match self {
            Activation::Relu => map(x, out, relu),
            Activation::Relu6 => map(x, out, |v| v.max(0.0).min(6.0)),
            Activation::LeakyRelu => map(x, out, leaky),
            Activation::Elu => map(x, out, elu),
            Activation::Celu => map(x, out, celu),
            Activation::Gelu => map(x, out, gelu_tanh),
            Activation::GeluErf => map(x, out, gelu_erf),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "relu" => Activation::Relu,
            "relu6" => Activation::Relu6,
            "leakyrelu" | "leaky_relu" => Activation::LeakyRelu,
            "elu" => Activation::Elu,
            "celu" => Activation::Celu,
            "gelu" | "gelu-tanh" => Activation::Gelu,
            "gelu-erf" | "gelu_erf" => Activation::GeluErf,
            other => return Err(Error::Invalid(format!("unknown activation {other:?}"))),
        })
    }
}

#[inline(always)]
fn map(x: &[f32], out: &mut [f32], f: impl Fn(f32) -> f32) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = f(v);
    }
}

#[inline(always)]
fn relu(x: f32) -> f32 {
    x.max(0.0)
}

#[inline(always)]
fn leaky(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline(always)]
fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline(always)]
fn celu(x: f32) -> f32 {
    x.max(0.0) + x.exp_m1().min(0.0)
}

#[inline(always)]
fn gelu_tanh(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

#[inline(always)]
fn gelu_erf(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::testutil::uniform;

    #[test]
    fn relu6_clamps() {
        let x = Tensor::from_f64(&[3], &[-1.0, 3.0, 9.0], Precision::F32).unwrap();
        assert_eq!(relu6(&x).unwrap().to_f64_vec(), vec![0.0, 3.0, 6.0]);
        let g = Tensor::full(&[3], 1.0, Precision::F32);
        assert_eq!(relu6_vjp(&x, &g).unwrap().to_f64_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu6_reflection_identity_in_band() {
        // on [0, 6]: relu6(x) = 6 - relu6(6 - x)
        let x = uniform(&[2, 3, 4, 4], 0.0, 6.0, 9, Precision::F64);
        let y = relu6(&x).unwrap().to_f64_vec();
        let mirrored: Vec<f64> = x.to_f64_vec().iter().map(|v| 6.0 - v).collect();
        let m = relu6(&Tensor::from_f64(x.shape(), &mirrored, Precision::F64).unwrap())
            .unwrap()
            .to_f64_vec();
        for (a, b) in y.iter().zip(&m) {
            assert!((a - (6.0 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_maps_to_zero_for_all() {
        for a in Activation::BENCHMARKED.into_iter().chain([Activation::GeluErf]) {
            assert_eq!(a.apply_scalar(0.0), 0.0, "{a}");
        }
    }

    #[test]
    fn reference_values() {
        assert!((Activation::Elu.apply_scalar(-1.0) - (-0.632_120_56)).abs() < 1e-6);
        assert!((Activation::Celu.apply_scalar(-1.0) - (-0.632_120_56)).abs() < 1e-6);
        assert_eq!(Activation::LeakyRelu.apply_scalar(-2.0), -0.02);
        // exact GELU(1) = 0.5 (1 + erf(1/sqrt 2)) = 0.841344746
        assert!((Activation::GeluErf.apply_scalar(1.0) - 0.841_344_7).abs() < 1e-6);
        assert!((Activation::Gelu.apply_scalar(1.0) - 0.841_344_7).abs() < 1e-3);
    }

    #[test]
    fn apply_matches_scalar() {
        let x: Vec<f32> = (-20..20).map(|i| i as f32 * 0.37).collect();
        let mut out = vec![0.0; x.len()];
        for a in Activation::BENCHMARKED {
            a.apply(&x, &mut out);
            for (o, &v) in out.iter().zip(&x) {
                assert_eq!(*o, a.apply_scalar(v));
            }
        }
    }
}
