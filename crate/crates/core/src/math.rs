//! Scalar transcendental functions.
//!
//! Routed through `libm` so results are bit-identical across platforms and
//! available without `std`.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Least non-negative remainder of `x` modulo `m > 0`.
#[inline]
pub fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = x % m;
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
#[inline]
pub fn xlnx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * ln(x)
    }
}

/// Numerically stable `ln(1 + e^x)` together with its derivative, the
/// logistic sigmoid, sharing one exponential.
#[inline]
pub fn softplus_and_sigmoid(x: f64) -> (f64, f64) {
    let e = exp(-x.abs());
    let sp = x.max(0.0) + ln_1p(e);
    let sig = if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    (sp, sig)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    softplus_and_sigmoid(x).0
}
