//! Log-gamma and the t-distribution normalising constant.

use std::f64::consts::PI;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of |Γ(x)| for finite `x` that is not a non-positive integer.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (PI * x).sin().abs();
        return PI.ln() - s.ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln Γ(x + ½) − ln Γ(x) for x > 0.
///
/// Large arguments use the asymptotic series so the difference does not
/// cancel catastrophically.
pub fn ln_gamma_half_ratio(x: f64) -> f64 {
    if x < 1e3 {
        return ln_gamma(x + 0.5) - ln_gamma(x);
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    0.5 * x.ln() - inv / 8.0 + inv * inv2 / 192.0 + inv2 * inv2 * inv / 640.0
        - 17.0 * inv2 * inv2 * inv2 * inv / 14_336.0
}

/// ln C(ν) where C(ν) = √(2π)·Γ((ν+1)/2) / (√(νπ)·Γ(ν/2)).
///
/// C(ν) is the t-density at zero rescaled so that it tends to 1 as ν → ∞.
pub fn ln_t_kernel_constant(nu: f64) -> f64 {
    0.5 * (2.0 * PI).ln() + ln_gamma_half_ratio(0.5 * nu) - 0.5 * (nu * PI).ln()
}
