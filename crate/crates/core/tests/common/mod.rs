//! Shared oracles for the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C64;

/// Panels used by [`quad1`]; the double-exponential rule caps its evaluations.
const PANELS: usize = 10;

/// Complex integral of `f` over `[a, b]` by panelled double-exponential quadrature.
pub fn quad1(f: impl Fn(f64) -> C64, a: f64, b: f64) -> C64 {
    let h = (b - a) / PANELS as f64;
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..PANELS {
        let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        acc.re += quadrature::integrate(|x| f(x).re, lo, hi, 1e-15).integral;
        acc.im += quadrature::integrate(|x| f(x).im, lo, hi, 1e-15).integral;
    }
    acc
}

/// Iterated complex integral over a rectangle.
pub fn quad2(f: impl Fn(f64, f64) -> C64, x: (f64, f64), y: (f64, f64)) -> C64 {
    quad1(|u| quad1(|v| f(u, v), y.0, y.1), x.0, x.1)
}

/// Relative distance of two complex numbers.
pub fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
}
