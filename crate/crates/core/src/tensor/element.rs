use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use half::f16;
use num_traits::Float;

use super::Storage;
use crate::error::Error;

/// Element precision of a tensor.
///
/// `F16` is a storage-and-compute mode: values are stored as IEEE binary16
/// and every kernel widens to f32 for products and reductions, rounding the
/// result once per output element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Precision {
    F16,
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F16 => "f16",
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Precision::F16 => 2,
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    /// Precision used for gradients and optimizer state: never narrower than f32.
    pub fn grad_precision(self) -> Precision {
        match self {
            Precision::F16 | Precision::F32 => Precision::F32,
            Precision::F64 => Precision::F64,
        }
    }

    /// Code used by the raw tensor file format.
    pub fn code(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F16 => 1,
            Precision::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Precision> {
        match code {
            0 => Some(Precision::F32),
            1 => Some(Precision::F16),
            2 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f16" | "fp16" | "half" => Ok(Precision::F16),
            "f32" | "fp32" | "float" => Ok(Precision::F32),
            "f64" | "fp64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

/// Accumulator type used inside kernels (f32 or f64).
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Storage element type of a tensor.
pub trait Element: Copy + Default + PartialEq + Send + Sync + fmt::Debug + 'static {
    type Acc: Real;
    const PRECISION: Precision;

    fn to_acc(self) -> Self::Acc;
    fn from_acc(v: Self::Acc) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    fn wrap(data: Vec<Self>) -> Storage;
    fn view(storage: &Storage) -> Option<&[Self]>;
    fn view_mut(storage: &mut Storage) -> Option<&mut [Self]>;
}

impl Element for f16 {
    type Acc = f32;
    const PRECISION: Precision = Precision::F16;

    #[inline(always)]
    fn to_acc(self) -> f32 {
        self.to_f32()
    }
    #[inline(always)]
    fn from_acc(v: f32) -> Self {
        f16::from_f32(v)
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        f16::to_f64(self)
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        f16::from_f64(v)
    }
    fn wrap(data: Vec<Self>) -> Storage {
        Storage::F16(data)
    }
    fn view(storage: &Storage) -> Option<&[Self]> {
        match storage {
            Storage::F16(v) => Some(v),
            _ => None,
        }
    }
    fn view_mut(storage: &mut Storage) -> Option<&mut [Self]> {
        match storage {
            Storage::F16(v) => Some(v),
            _ => None,
        }
    }
}

impl Element for f32 {
    type Acc = f32;
    const PRECISION: Precision = Precision::F32;

    #[inline(always)]
    fn to_acc(self) -> f32 {
        self
    }
    #[inline(always)]
    fn from_acc(v: f32) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn wrap(data: Vec<Self>) -> Storage {
        Storage::F32(data)
    }
    fn view(storage: &Storage) -> Option<&[Self]> {
        match storage {
            Storage::F32(v) => Some(v),
            _ => None,
        }
    }
    fn view_mut(storage: &mut Storage) -> Option<&mut [Self]> {
        match storage {
            Storage::F32(v) => Some(v),
            _ => None,
        }
    }
}

impl Element for f64 {
    type Acc = f64;
    const PRECISION: Precision = Precision::F64;

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    fn wrap(data: Vec<Self>) -> Storage {
        Storage::F64(data)
    }
    fn view(storage: &Storage) -> Option<&[Self]> {
        match storage {
            Storage::F64(v) => Some(v),
            _ => None,
        }
    }
    fn view_mut(storage: &mut Storage) -> Option<&mut [Self]> {
        match storage {
            Storage::F64(v) => Some(v),
            _ => None,
        }
    }
}

/// Runs `$body` with `$T` bound to the element type matching `$prec`.
#[macro_export]
#[doc(hidden)]
macro_rules! dispatch {
    ($prec:expr, $T:ident => $body:expr) => {
        match $prec {
            $crate::tensor::Precision::F16 => {
                #[allow(dead_code)]
                type $T = ::half::f16;
                $body
            }
            $crate::tensor::Precision::F32 => {
                #[allow(dead_code)]
                type $T = f32;
                $body
            }
            $crate::tensor::Precision::F64 => {
                #[allow(dead_code)]
                type $T = f64;
                $body
            }
        }
    };
}

/// Like [`dispatch!`] but only for gradient precisions (f32/f64); f16 maps to f32.
#[macro_export]
#[doc(hidden)]
macro_rules! dispatch_grad {
    ($prec:expr, $T:ident => $body:expr) => {
        match $prec.grad_precision() {
            $crate::tensor::Precision::F64 => {
                type $T = f64;
                $body
            }
            _ => {
                type $T = f32;
                $body
            }
        }
    };
}
