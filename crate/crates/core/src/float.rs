//! `f64` math routed through `libm` so the crate stays `no_std`.

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

/// `sgn(x) * |x|^p`.
#[inline]
pub(crate) fn signed_pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        return x;
    }
    let m = powf(x.abs(), p);
    if x < 0.0 {
        -m
    } else {
        m
    }
}

/// Derivative of `signed_pow` in ratio form: `(|y| / |m|)^(p-1)`.
///
/// This is the factor that appears when a power mean `m` is differentiated
/// with respect to one of its inputs `y`. Points where the true derivative is
/// unbounded (`p < 1` at `y = 0`, or `m = 0` with `p != 1`) take the value 0.
#[inline]
pub(crate) fn pow_ratio(y: f64, m: f64, p: f64) -> f64 {
    if p == 1.0 {
        return 1.0;
    }
    if y == 0.0 || m == 0.0 {
        return 0.0;
    }
    powf(y.abs() / m.abs(), p - 1.0)
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        ln_1p(exp(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
