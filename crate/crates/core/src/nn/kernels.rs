//! Small inner loops shared by the operators.
//!
//! Reductions split into eight independent lanes so the compiler can
//! vectorize them while keeping a fixed summation order.

use crate::tensor::Real;

#[inline]
pub(crate) fn dot<A: Real>(a: &[A], b: &[A]) -> A {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [A::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = A::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    fold_lanes(lanes) + tail
}

#[inline]
pub(crate) fn sum<A: Real>(a: &[A]) -> A {
    let mut lanes = [A::zero(); 8];
    let ca = a.chunks_exact(8);
    let r = ca.remainder();
    for x in ca {
        for i in 0..8 {
            lanes[i] += x[i];
        }
    }
    let mut tail = A::zero();
    for &x in r {
        tail += x;
    }
    fold_lanes(lanes) + tail
}

#[inline]
fn fold_lanes<A: Real>(l: [A; 8]) -> A {
    ((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7]))
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<A: Real>(alpha: A, x: &[A], y: &mut [A]) {
    debug_assert_eq!(x.len(), y.len());
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}
