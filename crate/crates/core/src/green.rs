//! Green function of `-Delta_g` normalized as `-Delta_g G = 8 pi (delta_p - 1)`,
//! `int G dmu_g = 0`, its regular part, the concentration potential `A + 2 ln h`,
//! the constant `C_0` and the sufficient condition for convergence at `rho = 8 pi`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::Weight;
use crate::grid::{check_grids, Grid, ScalarField};
use crate::surface::Surface;

const EIGHT_PI: f64 = 8.0 * PI;

/// Annulus of the regular-part fit, in flat grid cells around the pole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitAnnulus {
    pub r_in_cells: f64,
    pub r_out_cells: f64,
}

impl Default for FitAnnulus {
    fn default() -> Self {
        FitAnnulus {
            r_in_cells: 4.0,
            r_out_cells: 16.0,
        }
    }
}

impl FitAnnulus {
    pub fn scaled(self, factor: f64) -> FitAnnulus {
        FitAnnulus {
            r_in_cells: self.r_in_cells * factor,
            r_out_cells: self.r_out_cells * factor,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenData {
    pub pole: (usize, usize),
    #[serde(skip)]
    pub g: ScalarField,
    #[serde(rename = "A")]
    pub a: f64,
    pub b: [f64; 2],
    /// `(c1, c2, c3)` of the quadratic term `c1 y1^2 + 2 c2 y1 y2 + c3 y2^2`.
    pub quad: [f64; 3],
    /// Root-mean-square misfit over the annulus.
    pub fit_residual: f64,
}

/// Solves `-Delta_flat G = 8 pi delta_p - 8 pi e^phi` with a single-node spike of
/// mass one at `pole`, then removes the `dmu_g` mean.
pub fn green_function(surface: &Surface, pole: (usize, usize)) -> Result<ScalarField> {
    let grid = surface.grid();
    let n = grid.n();
    if pole.0 >= n || pole.1 >= n {
        return Err(Error::Range(format!("pole {pole:?} is off the {grid} grid")));
    }
    let inv_dx2 = (n * n) as f64;
    let mut rhs: Vec<f64> = surface.area_element().values().iter().map(|a| -EIGHT_PI * a).collect();
    rhs[grid.index(pole.0, pole.1)] += EIGHT_PI * inv_dx2;
    let g = surface.spectral().shifted_inverse(&rhs, 0.0);
    let mean = surface.integrate_values(&g);
    Ok(ScalarField::from_raw(grid, g.into_iter().map(|v| v - mean).collect()))
}

/// Least-squares fit of `G + 4 ln r` to `A + b.y + y^T C y` over the annulus, with
/// `y = e^{phi(p)/2} (x - p)` and `r = |y|`.
pub fn fit_regular_part(
    surface: &Surface,
    pole: (usize, usize),
    g: ScalarField,
    annulus: FitAnnulus,
) -> Result<GreenData> {
    check_grids(surface.grid(), g.grid())?;
    let grid = surface.grid();
    let dx = grid.dx();
    let (r_in, r_out) = (annulus.r_in_cells * dx, annulus.r_out_cells * dx);
    if !(annulus.r_in_cells > 0.0 && r_in < r_out) {
        return Err(Error::Range(format!("bad fit annulus {annulus:?}")));
    }
    if r_out > 0.25 {
        return Err(Error::Geometry(format!(
            "fit annulus outer radius {r_out} exceeds the injectivity scale 0.25"
        )));
    }
    let stretch = (0.5 * surface.phi().at(pole.0, pole.1)).exp();
    let reach = annulus.r_out_cells.ceil() as isize;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for di in -reach..=reach {
        for dj in -reach..=reach {
            let d1 = di as f64 * dx;
            let d2 = dj as f64 * dx;
            let d = (d1 * d1 + d2 * d2).sqrt();
            if d < r_in || d > r_out {
                continue;
            }
            // Columns use y / r_out (in y units) for conditioning.
            let (y1, y2) = (stretch * d1, stretch * d2);
            let scale = stretch * r_out;
            let (s1, s2) = (y1 / scale, y2 / scale);
            rows.push([1.0, s1, s2, s1 * s1, 2.0 * s1 * s2, s2 * s2]);
            let i = grid.wrap_index(pole.0 as isize + di);
            let j = grid.wrap_index(pole.1 as isize + dj);
            rhs.push(g.at(i, j) + 4.0 * (y1 * y1 + y2 * y2).sqrt().ln());
        }
    }
    let m = DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c]);
    let v = DVector::from_vec(rhs);
    let svd = m.clone().svd(true, true);
    let coef = svd
        .solve(&v, 1e-12)
        .map_err(|e| Error::NumericalFailure(format!("regular-part fit: {e}")))?;
    let resid = &m * &coef - &v;
    let fit_residual = (resid.norm_squared() / v.len() as f64).sqrt();
    let scale = stretch * r_out;
    Ok(GreenData {
        pole,
        g,
        a: coef[0],
        b: [coef[1] / scale, coef[2] / scale],
        quad: [coef[3] / (scale * scale), coef[4] / (scale * scale), coef[5] / (scale * scale)],
        fit_residual,
    })
}

pub fn green_data(surface: &Surface, pole: (usize, usize), annulus: FitAnnulus) -> Result<GreenData> {
    let g = green_function(surface, pole)?;
    fit_regular_part(surface, pole, g, annulus)
}

/// `A` on every `stride`-th node in each direction.
#[derive(Clone, Debug, Serialize)]
pub struct RobinField {
    pub stride: usize,
    /// Poles per side, `n / stride`.
    pub side: usize,
    /// Row-major over the coarse poles.
    pub values: Vec<f64>,
    #[serde(skip)]
    grid: Grid,
}

impl RobinField {
    /// Bilinear periodic interpolation of the coarse samples at node `(i, j)`.
    pub fn at_node(&self, i: usize, j: usize) -> f64 {
        let s = self.stride;
        let m = self.side;
        let (ci, fi) = (i / s, (i % s) as f64 / s as f64);
        let (cj, fj) = (j / s, (j % s) as f64 / s as f64);
        let v = |a: usize, b: usize| self.values[(a % m) * m + (b % m)];
        (1.0 - fi) * ((1.0 - fj) * v(ci, cj) + fj * v(ci, cj + 1))
            + fi * ((1.0 - fj) * v(ci + 1, cj) + fj * v(ci + 1, cj + 1))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn spread(&self) -> f64 {
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Regular parts at the subsampled poles; the solves run in parallel.
pub fn robin_field(surface: &Surface, stride: usize, annulus: FitAnnulus) -> Result<RobinField> {
    let grid = surface.grid();
    let n = grid.n();
    if stride == 0 || !n.is_multiple_of(stride) {
        return Err(Error::Range(format!("stride {stride} must divide {n}")));
    }
    let side = n / stride;
    let values = (0..side * side)
        .into_par_iter()
        .map(|k| {
            let pole = ((k / side) * stride, (k % side) * stride);
            green_data(surface, pole, annulus).map(|d| d.a)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RobinField {
        stride,
        side,
        values,
        grid,
    })
}

/// `C_0 = -4 pi max(A + 2 ln h) - 8 pi ln pi - 8 pi`.
pub fn c0_from_max(max_potential: f64) -> f64 {
    -4.0 * PI * max_potential - EIGHT_PI * PI.ln() - EIGHT_PI
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationPotential {
    /// `A + 2 ln h` per node, `-inf` where `h = 0`.
    #[serde(skip)]
    pub values: Vec<f64>,
    pub p0: (usize, usize),
    pub max: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
}

pub fn concentration_potential(
    surface: &Surface,
    weight: &Weight,
    robin: &RobinField,
) -> Result<ConcentrationPotential> {
    let grid = surface.grid();
    check_grids(grid, weight.h().grid())?;
    check_grids(grid, robin.grid())?;
    let values: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.node(k);
            let h = weight.h().values()[k];
            if h > 0.0 {
                robin.at_node(i, j) + 2.0 * h.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    let max = values[best];
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeight("h vanishes identically".into()));
    }
    Ok(ConcentrationPotential {
        values,
        p0: grid.node(best),
        max,
        c0: c0_from_max(max),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub p0: (usize, usize),
    /// `Delta_g h(p0) + 2 b.k`.
    pub lhs: f64,
    /// `-(8 pi + |b|^2 - 2 K(p0)) h(p0)`.
    pub rhs: f64,
    /// `Delta_g ln h(p0) + 8 pi - 2 K(p0)`.
    pub simplified: f64,
    pub satisfied: bool,
    /// `grad_g h(p0)` in the orthonormal frame, `e^{-phi/2} grad_flat h`.
    pub k: [f64; 2],
    pub b: [f64; 2],
    #[serde(rename = "A")]
    pub a: f64,
    pub h_p0: f64,
    pub max_potential: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub stride: usize,
    pub annulus: FitAnnulus,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            stride: 4,
            annulus: FitAnnulus::default(),
        }
    }
}

/// Evaluates the convergence condition at the maximum point of `A + 2 ln h`.
pub fn check_condition(surface: &Surface, weight: &Weight, config: GeometryConfig) -> Result<ConditionReport> {
    let robin = robin_field(surface, config.stride, config.annulus)?;
    let potential = concentration_potential(surface, weight, &robin)?;
    condition_at(surface, weight, &potential, config.annulus)
}

pub fn condition_at(
    surface: &Surface,
    weight: &Weight,
    potential: &ConcentrationPotential,
    annulus: FitAnnulus,
) -> Result<ConditionReport> {
    let p0 = potential.p0;
    let h = weight.h();
    let h0 = h.at(p0.0, p0.1);
    if !(h0 > 0.0) {
        return Err(Error::DegenerateWeight(format!("h vanishes at the maximum point {p0:?}")));
    }
    let data = green_data(surface, p0, annulus)?;
    let lap_h = surface.laplace_beltrami(h)?.at(p0.0, p0.1);
    let [g1, g2] = surface.flat_gradient(h)?;
    let phi0 = surface.phi().at(p0.0, p0.1);
    let e = (-0.5 * phi0).exp();
    let k = [e * g1.at(p0.0, p0.1), e * g2.at(p0.0, p0.1)];
    let curvature = surface.gauss_curvature().at(p0.0, p0.1);
    let b = data.b;
    let lhs = lap_h + 2.0 * (b[0] * k[0] + b[1] * k[1]);
    let rhs = -(EIGHT_PI + b[0] * b[0] + b[1] * b[1] - 2.0 * curvature) * h0;
    let simplified = lap_h / h0 - (k[0] * k[0] + k[1] * k[1]) / (h0 * h0) + EIGHT_PI - 2.0 * curvature;
    Ok(ConditionReport {
        p0,
        lhs,
        rhs,
        simplified,
        satisfied: lhs > rhs,
        k,
        b,
        a: data.a,
        h_p0: h0,
        max_potential: potential.max,
        c0: potential.c0,
    })
}
