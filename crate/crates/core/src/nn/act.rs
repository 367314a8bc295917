use crate::tensor::Scalar;

/// Negative slope of the discriminator's leaky rectifiers.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn relu<T: Scalar>(x: &mut [T]) {
    // NaN passes through so downstream finiteness checks still see it.
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// Gradient through a rectifier given its output.
pub fn relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn leaky_relu<T: Scalar>(x: &mut [T]) {
    let a = T::lit(LEAKY_SLOPE);
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v *= a;
        }
    });
}

/// Gradient through a leaky rectifier given its output (sign is preserved).
pub fn leaky_relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    let a = T::lit(LEAKY_SLOPE);
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < T::zero() {
            *d *= a;
        }
    }
}

pub fn tanh<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d *= T::one() - v * v;
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
