//! Named weights and conformal factors shipped with the tool, plus seeded random
//! smooth fields for property checks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::functionals::Weight;
use crate::grid::{Grid, ScalarField};

pub const WEIGHT_NAMES: [&str; 4] = ["const", "one_plus_half_cos", "near_vanishing", "vanishing_patch"];

pub const PHI_NAMES: [&str; 3] = ["flat", "cos", "sin"];

/// Smooth bump on `(0, 1/2)`, zero on the rest of the circle.
fn half_circle_bump(x: f64) -> f64 {
    let s = 4.0 * x - 1.0;
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

pub fn weight(name: &str, grid: Grid) -> Result<Weight> {
    let tau = 2.0 * PI;
    let h = match name {
        "const" => ScalarField::constant(grid, 1.0),
        "one_plus_half_cos" => ScalarField::from_fn(grid, |x, _| 1.0 + 0.5 * (tau * x).cos())?,
        "near_vanishing" => ScalarField::from_fn(grid, |x, _| 1.0 + 0.999 * (tau * x).cos())?,
        "vanishing_patch" => {
            ScalarField::from_fn(grid, |x, y| half_circle_bump(x) * (1.0 + 0.25 * (tau * y).cos()))?
        }
        _ => {
            return Err(Error::Range(format!(
                "unknown weight {name:?}; expected one of {WEIGHT_NAMES:?}"
            )))
        }
    };
    Weight::new(h)
}

/// Unnormalized conformal factor; the surface constructor fixes the area.
pub fn phi(name: &str, amplitude: f64, grid: Grid) -> Result<ScalarField> {
    let tau = 2.0 * PI;
    match name {
        "flat" => Ok(ScalarField::zeros(grid)),
        "cos" => ScalarField::from_fn(grid, |x, _| amplitude * (tau * x).cos()),
        "sin" => ScalarField::from_fn(grid, |x, _| amplitude * (tau * x).sin()),
        _ => Err(Error::Range(format!(
            "unknown conformal factor {name:?}; expected one of {PHI_NAMES:?}"
        ))),
    }
}

/// Trigonometric polynomial of degree `max_mode` with coefficients uniform in
/// `[-1, 1]` scaled by `1/(1 + |k|^2)`, normalized to sup norm `amplitude`.
pub fn random_smooth(grid: Grid, seed: u64, max_mode: i32, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for k1 in -max_mode..=max_mode {
        for k2 in -max_mode..=max_mode {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let damp = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
            let a: f64 = rng.random_range(-1.0..1.0);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            terms.push((k1 as f64, k2 as f64, a * damp, phase));
        }
    }
    let f = ScalarField::from_fn(grid, |x, y| {
        terms
            .iter()
            .map(|&(k1, k2, a, ph)| a * (2.0 * PI * (k1 * x + k2 * y) + ph).cos())
            .sum()
    })
    .expect("trigonometric sums are finite");
    let sup = f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    f.scale(amplitude / sup)
}
