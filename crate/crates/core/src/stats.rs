//! Scalar Gaussian helpers and one-dimensional quadrature.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the log-cdf switches to the continued-fraction branch.
const LOG_CDF_TAIL: f64 = -6.0;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Log of the standard normal density.
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal cdf via the complementary error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Mills ratio `Q(t) / phi(t)` for `t > 0` by Laplace's continued fraction.
/// Accurate to machine precision for `t >= 5`.
fn mills_ratio(t: f64) -> f64 {
    let mut f = t;
    for k in (1..=80).rev() {
        f = t + k as f64 / f;
    }
    1.0 / f
}

/// `ln Phi(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < LOG_CDF_TAIL {
        log_norm_pdf(x) + mills_ratio(-x).ln()
    } else if x > 5.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

/// Inverse Mills ratio `phi(x) / Phi(x)`, stable in the lower tail.
pub fn pdf_over_cdf(x: f64) -> f64 {
    if x < LOG_CDF_TAIL {
        1.0 / mills_ratio(-x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// Composite Simpson rule with `nodes` (odd, >= 3) equally spaced samples.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, nodes: usize) -> f64 {
    debug_assert!(nodes >= 3 && nodes % 2 == 1);
    let h = (b - a) / (nodes - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..nodes - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
