//! Concentration analysis: local masses, rescaled radial profiles, bubble fits,
//! neck energies and the peak detector.
//!
//! Balls are taken in the approximate normal coordinates `y = e^{phi(c)/2} (x - c)`
//! (minimal image), so a ball of radius `r` is the flat disc of radius
//! `r e^{-phi(c)/2}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{concentration, Weight};
use crate::grid::{check_grids, pairwise_sum, Grid, ScalarField};
use crate::interp::bicubic;
use crate::surface::Surface;

const EIGHT_PI: f64 = 8.0 * std::f64::consts::PI;

/// Sub-cell samples per direction when a cell straddles a disc boundary.
const SUPERSAMPLE: usize = 16;

/// Fraction of each node's cell (of side `dx`, centred at the node) lying in the
/// flat disc `|x - c| < rf`. Boundary cells are supersampled.
fn disc_coverage(grid: Grid, center: [f64; 2], rf: f64) -> Vec<f64> {
    let n = grid.n();
    let dx = grid.dx();
    let half_diag = dx * std::f64::consts::FRAC_1_SQRT_2;
    let mut cov = vec![0.0; grid.len()];
    if rf >= std::f64::consts::FRAC_1_SQRT_2 + half_diag {
        cov.iter_mut().for_each(|c| *c = 1.0);
        return cov;
    }
    let sub = SUPERSAMPLE as f64;
    for i in 0..n {
        let d1 = Grid::wrap(i as f64 * dx - center[0]);
        for j in 0..n {
            let d2 = Grid::wrap(j as f64 * dx - center[1]);
            let d = (d1 * d1 + d2 * d2).sqrt();
            let k = grid.index(i, j);
            if d + half_diag <= rf {
                cov[k] = 1.0;
            } else if d - half_diag >= rf {
                cov[k] = 0.0;
            } else {
                let mut inside = 0usize;
                for a in 0..SUPERSAMPLE {
                    let o1 = Grid::wrap(d1 + ((a as f64 + 0.5) / sub - 0.5) * dx);
                    for b in 0..SUPERSAMPLE {
                        let o2 = Grid::wrap(d2 + ((b as f64 + 0.5) / sub - 0.5) * dx);
                        if o1 * o1 + o2 * o2 < rf * rf {
                            inside += 1;
                        }
                    }
                }
                cov[k] = inside as f64 / (sub * sub);
            }
        }
    }
    cov
}

/// Flat radius of the ball of radius `r` about `center`.
fn flat_radius(surface: &Surface, center: [f64; 2], r: f64) -> f64 {
    r * (-0.5 * surface.phi_at(center)).exp()
}

/// `mu(B_r(c)) = int_{B_r} V e^u dmu_g` with `V = 8 pi h / int h e^u dmu_g`.
/// Equals `8 pi` once the ball covers the torus.
pub fn local_mass(surface: &Surface, weight: &Weight, u: &ScalarField, center: [f64; 2], r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Range(format!("ball radius must be positive, got {r}")));
    }
    let c = concentration(surface, weight, u)?;
    let cov = disc_coverage(surface.grid(), center, flat_radius(surface, center, r));
    let terms: Vec<f64> = c.density.iter().zip(&cov).map(|(d, w)| d * w).collect();
    Ok(EIGHT_PI * surface.integrate_values(&terms))
}

/// `1/2 int_{r_in < |y| < r_out} |grad_g u|^2 dmu_g`; `r_in = 0` gives a ball.
pub fn neck_energy(surface: &Surface, u: &ScalarField, center: [f64; 2], r_in: f64, r_out: f64) -> Result<f64> {
    if !(r_in >= 0.0 && r_in < r_out && r_out < 0.5) {
        return Err(Error::Range(format!(
            "need 0 <= r_in < r_out < 0.5, got r_in = {r_in}, r_out = {r_out}"
        )));
    }
    let density = surface.grad_energy_density(u)?;
    let outer = disc_coverage(surface.grid(), center, flat_radius(surface, center, r_out));
    let inner = if r_in > 0.0 {
        disc_coverage(surface.grid(), center, flat_radius(surface, center, r_in))
    } else {
        vec![0.0; outer.len()]
    };
    let terms: Vec<f64> = density
        .values()
        .iter()
        .zip(outer.iter().zip(&inner))
        .map(|(e, (o, i))| e * (o - i))
        .collect();
    Ok(0.5 * surface.integrate_values(&terms))
}

/// Closed-form `1/2 int_{B_R} |grad (-2 ln(1 + a|x|^2))|^2 dx`.
pub fn bubble_ball_energy(a: f64, radius: f64) -> f64 {
    let q = 1.0 + a * radius * radius;
    EIGHT_PI * (q.ln() + 1.0 / q - 1.0)
}

/// Angular samples per circle in [`rescaled_profile`].
const ANGLES: usize = 64;

/// Radial profile of `u(c + e^{-lambda/2} x) - u(c)` averaged over circles
/// `|x| = s`, in flat coordinates. The first entry is exactly zero at `s = 0`.
pub fn rescaled_profile(
    surface: &Surface,
    u: &ScalarField,
    center: [f64; 2],
    lambda: f64,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_grids(surface.grid(), u.grid())?;
    let scale = (-0.5 * lambda).exp();
    let smax = radii.iter().copied().fold(0.0, f64::max);
    if scale * smax >= 0.25 {
        return Err(Error::Geometry(format!(
            "rescaled window {:.3} exceeds the chart (lambda = {lambda} too small)",
            scale * smax
        )));
    }
    let u0 = bicubic(u, center);
    let profile = radii
        .iter()
        .map(|&s| {
            if s == 0.0 {
                return (0.0, 0.0);
            }
            let samples: Vec<f64> = (0..ANGLES)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / ANGLES as f64;
                    let p = [center[0] + scale * s * th.cos(), center[1] + scale * s * th.sin()];
                    bicubic(u, p)
                })
                .collect();
            (s, pairwise_sum(&samples) / ANGLES as f64 - u0)
        })
        .collect();
    Ok(profile)
}

/// Radii `0, ds, .., s_max` used for bubble fits.
pub fn fit_radii(s_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| s_max * k as f64 / (count - 1) as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BubbleFit {
    pub center: [f64; 2],
    pub lambda: f64,
    pub a: f64,
    pub a_theory: f64,
    /// `sup |profile - (-2 ln(1 + a s^2))|` over the fit window.
    pub profile_residual: f64,
    pub local_mass: f64,
    /// Set when the profile does not look like a decaying bubble.
    pub failed: bool,
}

/// Window of the bubble fit in rescaled units.
pub const FIT_WINDOW: f64 = 8.0;

fn bubble_sse(profile: &[(f64, f64)], log_a: f64) -> f64 {
    let a = log_a.exp();
    profile
        .iter()
        .filter(|(s, _)| *s <= FIT_WINDOW)
        .map(|(s, v)| {
            let e = v + 2.0 * (a * s * s).ln_1p();
            e * e
        })
        .sum()
}

/// One-parameter least-squares fit of `-2 ln(1 + a s^2)` to a radial profile.
/// `local_mass` and `center`/`lambda` are left for the caller to fill in.
pub fn bubble_fit(profile: &[(f64, f64)], phi_at_center: f64, mass0: f64) -> BubbleFit {
    let a_theory = std::f64::consts::PI * phi_at_center.exp() / mass0;
    let window: Vec<(f64, f64)> = profile.iter().copied().filter(|(s, _)| *s <= FIT_WINDOW).collect();
    let mut failed = window.len() < 3;
    // A bubble is strictly decreasing and drops by at least ln 2 across the window.
    if !failed {
        let decreasing = window.windows(2).all(|w| w[1].1 < w[0].1 + 1e-9);
        let drop = window[0].1 - window[window.len() - 1].1;
        failed = !decreasing || drop < 2.0_f64.ln();
    }
    if failed {
        return BubbleFit {
            center: [0.0; 2],
            lambda: 0.0,
            a: f64::NAN,
            a_theory,
            profile_residual: f64::NAN,
            local_mass: f64::NAN,
            failed: true,
        };
    }
    // Coarse scan of ln a, then golden-section refinement.
    let (lo, hi) = (-12.0_f64, 12.0_f64);
    let steps = 241;
    let mut best = lo;
    let mut best_val = f64::INFINITY;
    for k in 0..steps {
        let x = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
        let v = bubble_sse(&window, x);
        if v < best_val {
            best_val = v;
            best = x;
        }
    }
    let h = (hi - lo) / (steps - 1) as f64;
    let (mut a, mut b) = (best - h, best + h);
    let g = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (bubble_sse(&window, c), bubble_sse(&window, d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = bubble_sse(&window, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = bubble_sse(&window, d);
        }
    }
    let fitted = (0.5 * (a + b)).exp();
    let residual = window
        .iter()
        .map(|(s, v)| (v + 2.0 * (fitted * s * s).ln_1p()).abs())
        .fold(0.0, f64::max);
    BubbleFit {
        center: [0.0; 2],
        lambda: 0.0,
        a: fitted,
        a_theory,
        profile_residual: residual,
        local_mass: f64::NAN,
        failed: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectConfig {
    pub max_u_threshold: f64,
    pub local_mass_threshold: f64,
    pub quantization_radius: f64,
    /// Peaks must rise this far above the mean of `u`.
    pub concentration_gap: f64,
    /// Peaks must lie within this distance of `max u`.
    pub peak_window: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            max_u_threshold: 12.0,
            local_mass_threshold: 7.0 * std::f64::consts::PI,
            quantization_radius: 0.1,
            concentration_gap: 6.0,
            peak_window: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupReport {
    pub suspected: bool,
    pub quantization: f64,
    pub peak_count: usize,
    pub mean_u: f64,
    pub max_u: f64,
    pub fits: Vec<BubbleFit>,
    pub warnings: Vec<String>,
}

/// Subgrid location of a discrete maximum from a separable quadratic fit on the
/// 3x3 stencil.
fn refine_peak(u: &ScalarField, i: usize, j: usize) -> [f64; 2] {
    let g = u.grid();
    let ip = g.wrap_index(i as isize + 1);
    let im = g.wrap_index(i as isize - 1);
    let jp = g.wrap_index(j as isize + 1);
    let jm = g.wrap_index(j as isize - 1);
    let vertex = |m: f64, c: f64, p: f64| {
        let curv = m - 2.0 * c + p;
        if curv < 0.0 {
            (0.5 * (m - p) / curv).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let oi = vertex(u.at(im, j), u.at(i, j), u.at(ip, j));
    let oj = vertex(u.at(i, jm), u.at(i, j), u.at(i, jp));
    let dx = g.dx();
    [
        ((i as f64 + oi) * dx).rem_euclid(1.0),
        ((j as f64 + oj) * dx).rem_euclid(1.0),
    ]
}

/// Local maxima over the 8-neighbourhood; of equal-valued neighbours only the
/// first in row-major order is kept.
fn local_maxima(u: &ScalarField, floor: f64) -> Vec<(usize, usize)> {
    let g = u.grid();
    let n = g.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = u.at(i, j);
            if v < floor {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = g.wrap_index(i as isize + di);
                    let jj = g.wrap_index(j as isize + dj);
                    let w = u.at(ii, jj);
                    let earlier = g.index(ii, jj) < g.index(i, j);
                    if w > v || (w == v && earlier) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push((i, j));
            }
        }
    }
    out
}

/// Scans a state for concentration. Peaks are local maxima within
/// `peak_window` of `max u` that stand `concentration_gap` above the mean.
pub fn detect(
    surface: &Surface,
    weight: &Weight,
    u: &ScalarField,
    mass0: f64,
    config: &DetectConfig,
) -> Result<BlowupReport> {
    check_grids(surface.grid(), u.grid())?;
    let mean_u = surface.integrate(u)?;
    let max_u = u.max();
    let floor = (max_u - config.peak_window).max(mean_u + config.concentration_gap);
    let peaks = if max_u >= mean_u + config.concentration_gap {
        local_maxima(u, floor)
    } else {
        Vec::new()
    };

    let radii = fit_radii(FIT_WINDOW, 33);
    let mut fits = Vec::with_capacity(peaks.len());
    let mut warnings = Vec::new();
    for &(i, j) in &peaks {
        let center = refine_peak(u, i, j);
        let lambda = bicubic(u, center).max(u.at(i, j));
        let local = local_mass(surface, weight, u, center, config.quantization_radius)?;
        let phi_c = surface.phi_at(center);
        let mut fit = match rescaled_profile(surface, u, center, lambda, &radii) {
            Ok(profile) => bubble_fit(&profile, phi_c, mass0),
            Err(_) => {
                warnings.push(format!(
                    "peak at ({:.4}, {:.4}) too shallow for a rescaled profile",
                    center[0], center[1]
                ));
                let mut f = bubble_fit(&[], phi_c, mass0);
                f.failed = true;
                f
            }
        };
        fit.center = center;
        fit.lambda = lambda;
        fit.local_mass = local;
        fits.push(fit);
    }
    if peaks.len() > 1 {
        warnings.push(format!(
            "{} concentration peaks; a single blow-up point is expected at rho = 8 pi",
            peaks.len()
        ));
    }
    let quantization = match fits.iter().max_by(|a, b| a.lambda.total_cmp(&b.lambda)) {
        Some(f) => f.local_mass,
        None => {
            let (i, j) = u.argmax();
            let c = [u.grid().coord(i), u.grid().coord(j)];
            local_mass(surface, weight, u, c, config.quantization_radius)?
        }
    };
    let suspected = max_u > config.max_u_threshold && quantization > config.local_mass_threshold;
    Ok(BlowupReport {
        suspected,
        quantization,
        peak_count: peaks.len(),
        mean_u,
        max_u,
        fits,
        warnings,
    })
}

/// Smooth periodic concentrated state: the entire bubble
/// `lambda - 2 ln(1 + a e^lambda |x - c|^2)` out to radius 0.3, blended to a
/// constant by 0.45. Its mass is close to `pi / a` for large `lambda`.
pub fn bubble_state(grid: Grid, center: [f64; 2], lambda: f64, a: f64) -> ScalarField {
    let (r0, r1) = (0.3, 0.45);
    let profile = |r: f64| lambda - 2.0 * (a * lambda.exp() * r * r).ln_1p();
    let outer = profile(r1);
    ScalarField::from_fn(grid, |x, y| {
        let d1 = Grid::wrap(x - center[0]);
        let d2 = Grid::wrap(y - center[1]);
        let r = (d1 * d1 + d2 * d2).sqrt();
        let t = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
        let chi = 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
        chi * profile(r) + (1.0 - chi) * outer
    })
    .expect("bubble profile is finite")
}

/// [`bubble_state`] of core width `eps` and unit mass on the flat torus:
/// `a = pi`, `lambda = ln(1 / (pi eps^2))`.
pub fn bubble_of_width(grid: Grid, center: [f64; 2], eps: f64) -> ScalarField {
    let pi = std::f64::consts::PI;
    bubble_state(grid, center, (1.0 / (pi * eps * eps)).ln(), pi)
}
