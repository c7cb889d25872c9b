//! Independent reference values: special functions and the Ewald-summed Robin
//! constant of the unit square torus. Nothing here touches the FFT machinery,
//! so it can serve as a check on it.

use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel function `I_0(x) = sum_k (x/2)^{2k} / (k!)^2`.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Exponential integral `E_1(x) = int_x^inf e^{-t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    if x <= 1.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        // Modified Lentz on the continued fraction e^{-x} / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...))).
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Robin constant of the unit square torus for `-Delta G = delta - 1`:
/// `R = lim_{x->0} G(x) + ln|x| / (2 pi)`.
///
/// The heat-kernel integral is split at `tau`: the short-time part is summed over
/// lattice images in real space, the long-time part over Fourier modes. The result
/// does not depend on `tau`.
pub fn torus_robin_constant(tau: f64) -> f64 {
    let cutoff = 12_i64;
    let mut real = 0.0;
    let mut recip = 0.0;
    for m1 in -cutoff..=cutoff {
        for m2 in -cutoff..=cutoff {
            if m1 == 0 && m2 == 0 {
                continue;
            }
            let r2 = (m1 * m1 + m2 * m2) as f64;
            let a = r2 / (4.0 * tau);
            if a < 700.0 {
                real += exp_integral_e1(a);
            }
            let s = 4.0 * PI * PI * r2;
            recip += (-s * tau).exp() / s;
        }
    }
    ((4.0 * tau).ln() - EULER_GAMMA) / (4.0 * PI) - tau + real / (4.0 * PI) + recip
}

/// Regular part `A` of the Green function normalized as `-Delta G = 8 pi (delta - 1)`
/// on the flat unit torus.
pub fn flat_torus_regular_part() -> f64 {
    8.0 * PI * torus_robin_constant(1.0 / (4.0 * PI))
}
