//! Dense NCHW tensors with selectable element precision.
//!
//! Layout is row-major with the batch axis outermost, then channels, then
//! height and width, so every channel plane of a sample is contiguous.

mod element;
pub mod io;
mod ops;

use std::sync::atomic::{AtomicBool, Ordering};

use half::f16;

pub use element::{Element, Precision, Real};
pub use io::{read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};
pub use ops::{
    add, add_channels, channel_l2_norms, concat_channels, mean_axis, mul_channels, scale, sub,
    slice_channels,
};

use crate::error::{Error, Result};

static FINITE_CHECKS: AtomicBool = AtomicBool::new(cfg!(debug_assertions));

/// Enables or disables the NaN/Inf scan performed on op outputs.
pub fn set_finite_checks(enabled: bool) {
    FINITE_CHECKS.store(enabled, Ordering::Relaxed);
}

pub fn finite_checks_enabled() -> bool {
    FINITE_CHECKS.load(Ordering::Relaxed)
}

/// Typed element buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    F16(Vec<f16>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Storage {
    pub fn len(&self) -> usize {
        match self {
            Storage::F16(v) => v.len(),
            Storage::F32(v) => v.len(),
            Storage::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> Precision {
        match self {
            Storage::F16(_) => Precision::F16,
            Storage::F32(_) => Precision::F32,
            Storage::F64(_) => Precision::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Storage,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Storage) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_vec<T: Element>(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Tensor::new(shape, T::wrap(data))
    }

    pub fn from_f64(shape: &[usize], values: &[f64], precision: Precision) -> Result<Self> {
        crate::dispatch!(precision, T => {
            Tensor::from_vec::<T>(shape, values.iter().map(|&v| T::from_f64(v)).collect())
        })
    }

    pub fn from_f32(shape: &[usize], values: &[f32], precision: Precision) -> Result<Self> {
        crate::dispatch!(precision, T => {
            Tensor::from_vec::<T>(shape, values.iter().map(|&v| T::from_f64(v as f64)).collect())
        })
    }

    pub fn full(shape: &[usize], value: f64, precision: Precision) -> Self {
        let numel: usize = shape.iter().product();
        let data = crate::dispatch!(precision, T => T::wrap(vec![T::from_f64(value); numel]));
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize], precision: Precision) -> Self {
        Tensor::full(shape, 0.0, precision)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape, other.precision())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn precision(&self) -> Precision {
        self.data.precision()
    }

    pub fn storage(&self) -> &Storage {
        &self.data
    }

    pub fn into_storage(self) -> Storage {
        self.data
    }

    /// Shape as `[N, C, H, W]`; errors for anything but rank 4.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(
                "dims4",
                format!("expected a 4-D tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn as_slice<T: Element>(&self) -> Result<&[T]> {
        T::view(&self.data).ok_or(Error::Dtype {
            op: "as_slice",
            left: T::PRECISION.name(),
            right: self.precision().name(),
        })
    }

    pub fn as_mut_slice<T: Element>(&mut self) -> Result<&mut [T]> {
        let have = self.precision().name();
        T::view_mut(&mut self.data).ok_or(Error::Dtype {
            op: "as_mut_slice",
            left: T::PRECISION.name(),
            right: have,
        })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::F16(v) => v.iter().map(|x| x.to_f64()).collect(),
            Storage::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            Storage::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
            Storage::F32(v) => v.clone(),
            Storage::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Converts to another precision. Narrowing rounds to nearest, ties to even.
    pub fn cast(&self, to: Precision) -> Tensor {
        if to == self.precision() {
            return self.clone();
        }
        let data = match (&self.data, to) {
            (Storage::F32(v), Precision::F16) => Storage::F16(v.iter().map(|&x| f16::from_f32(x)).collect()),
            (Storage::F64(v), Precision::F16) => Storage::F16(v.iter().map(|&x| f16::from_f64(x)).collect()),
            (Storage::F16(v), Precision::F32) => Storage::F32(v.iter().map(|x| x.to_f32()).collect()),
            (Storage::F64(v), Precision::F32) => Storage::F32(v.iter().map(|&x| x as f32).collect()),
            (Storage::F16(v), Precision::F64) => Storage::F64(v.iter().map(|x| x.to_f64()).collect()),
            (Storage::F32(v), Precision::F64) => Storage::F64(v.iter().map(|&x| x as f64).collect()),
            _ => unreachable!("same-precision cast handled above"),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Casts to the gradient precision of this tensor's dtype.
    pub fn to_grad_precision(&self) -> std::borrow::Cow<'_, Tensor> {
        let gp = self.precision().grad_precision();
        if gp == self.precision() {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.cast(gp))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        match &self.data {
            Storage::F16(v) => v.iter().all(|x| x.is_finite()),
            Storage::F32(v) => v.iter().all(|x| x.is_finite()),
            Storage::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Errors with [`Error::NonFinite`] when checks are enabled and a value is NaN/Inf.
    pub fn check_finite(self, op: &'static str) -> Result<Tensor> {
        if finite_checks_enabled() && !self.is_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(self)
    }

    /// Bitwise equality of shape, dtype and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (Storage::F16(a), Storage::F16(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Storage::F32(a), Storage::F32(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Storage::F64(a), Storage::F64(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }

    pub fn sum_f64(&self) -> f64 {
        self.to_f64_vec().iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.to_f64_vec()
            .iter()
            .zip(other.to_f64_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Raw little-endian element bytes.
    pub fn payload_bytes(&self) -> usize {
        self.numel() * self.precision().size_bytes()
    }
}
