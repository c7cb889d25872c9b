//! Newton iteration for the stationary equation `M(u) = 0` and construction of
//! initial data below the blow-up threshold `C_0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cg::pcg;
use crate::error::{Error, Result};
use crate::functionals::{self, concentration, gradient_map_with, jacobi_apply_with, Weight};
use crate::green::{self, ConditionReport, GeometryConfig, GreenData};
use crate::grid::{check_grids, pairwise_sum, Grid, ScalarField};
use crate::surface::Surface;

#[derive(Clone, Debug, Serialize)]
pub struct NewtonResult {
    #[serde(skip)]
    pub u: ScalarField,
    /// `|M(u)|_{L^2}` of the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual before each iteration and after the last.
    pub history: Vec<f64>,
    pub failure: Option<String>,
}

fn gauge(surface: &Surface, u: &ScalarField) -> Result<ScalarField> {
    Ok(u.add_scalar(-surface.integrate(u)?))
}

fn remove_flat_mean(v: &mut [f64]) {
    let m = pairwise_sum(v) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Damped Newton iteration on the complement of the constants, starting from
/// `u_init` and returning the iterate with `int u dmu_g = 0`.
pub fn newton_solve(
    surface: &Surface,
    weight: &Weight,
    rho: f64,
    u_init: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult> {
    check_grids(surface.grid(), u_init.grid())?;
    let grid = u_init.grid();
    let area = surface.area_element().values();
    let mut u = gauge(surface, u_init)?;
    let mut c = concentration(surface, weight, &u)?;
    let mut m = gradient_map_with(surface, rho, &u, &c)?;
    let mut res = surface.l2_norm(&m)?;
    let mut history = vec![res];
    let mut failure = None;
    let mut iterations = 0;
    while res >= tol && iterations < max_iter {
        // e^phi L is symmetric in the flat inner product; solve e^phi L xi = -e^phi M.
        let mut rhs: Vec<f64> = m.values().iter().zip(area).map(|(r, a)| -a * r).collect();
        remove_flat_mean(&mut rhs);
        let apply = |x: &[f64]| -> Vec<f64> {
            let xi = ScalarField::from_raw(grid, x.to_vec());
            let l = jacobi_apply_with(surface, rho, &c, &xi).expect("grids checked");
            let mut out: Vec<f64> = l.values().iter().zip(area).map(|(v, a)| a * v).collect();
            remove_flat_mean(&mut out);
            out
        };
        let precondition = |r: &[f64]| surface.spectral().shifted_inverse(r, 0.0);
        let inner_tol = (0.1 * res).clamp(1e-12, 1e-2);
        let out = pcg(apply, precondition, &rhs, vec![0.0; grid.len()], inner_tol, 2000);
        if out.breakdown {
            failure = Some(format!(
                "linearization not positive definite (CG breakdown at iteration {iterations})"
            ));
            break;
        }
        let xi = ScalarField::from_raw(grid, out.x);
        let mut t = 1.0;
        let mut accepted = None;
        while t >= 1.0 / 1024.0 {
            let trial = u.axpy(t, &xi)?;
            if let Ok(ct) = concentration(surface, weight, &trial) {
                let mt = gradient_map_with(surface, rho, &trial, &ct)?;
                let rt = surface.l2_norm(&mt)?;
                if rt < res {
                    accepted = Some((trial, ct, mt, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((trial, ct, mt, rt)) => {
                // Gauging shifts by a constant, which leaves c and M unchanged.
                u = gauge(surface, &trial)?;
                c = ct;
                m = mt;
                res = rt;
                history.push(res);
            }
            None => {
                failure = Some(format!("damping failed to reduce the residual at iteration {iterations}"));
                break;
            }
        }
    }
    Ok(NewtonResult {
        u,
        residual: res,
        iterations,
        converged: res < tol,
        history,
        failure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Glue radius: pure bubble inside, blend over `[delta, 2 delta]`.
    pub delta: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_count: usize,
    /// Smallest admissible width in grid cells; narrower bubbles are not resolved.
    pub min_cells: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            delta: 0.1,
            eps_min: 1e-3,
            eps_max: 1e-1,
            eps_count: 25,
            min_cells: 2.0,
        }
    }
}

impl SeedConfig {
    pub fn eps_range(&self) -> Vec<f64> {
        if self.eps_count == 1 {
            return vec![self.eps_min];
        }
        let (a, b) = (self.eps_min.ln(), self.eps_max.ln());
        (0..self.eps_count)
            .map(|k| (a + (b - a) * k as f64 / (self.eps_count - 1) as f64).exp())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub eps: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub mass: f64,
    /// Whether the core width spans at least `min_cells` grid cells.
    pub resolved: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedResult {
    #[serde(skip)]
    pub u0: ScalarField,
    pub eps: f64,
    #[serde(rename = "J0")]
    pub j0: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    /// `J0 - C0`, negative on success.
    pub margin: f64,
    pub pole: (usize, usize),
    pub scan: Vec<ScanPoint>,
}

/// `6t^5 - 15t^4 + 10t^3`, rising from 0 to 1 with two vanishing derivatives at each end.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Bubble `-2 ln(eps^2 + r^2)` near the pole glued to `G - A` away from it, shifted
/// to unit mass.
pub fn glued_bubble(surface: &Surface, green: &GreenData, eps: f64, delta: f64) -> Result<ScalarField> {
    check_grids(surface.grid(), green.g.grid())?;
    let grid: Grid = surface.grid();
    let (pi, pj) = green.pole;
    let stretch = (0.5 * surface.phi().at(pi, pj)).exp();
    let center = [grid.coord(pi), grid.coord(pj)];
    let values: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.node(k);
            let [d1, d2] = surface.offset(center, i, j);
            let r = stretch * (d1 * d1 + d2 * d2).sqrt();
            let core = -2.0 * (eps * eps + r * r).ln();
            let tail = green.g.values()[k] - green.a;
            let chi = 1.0 - smoothstep((r - delta) / delta);
            chi * core + (1.0 - chi) * tail
        })
        .collect();
    let u = ScalarField::new(grid, values)?;
    let lm = functionals::log_mass(surface, &u)?;
    Ok(u.add_scalar(-lm))
}

/// Scans the glued-bubble family and returns the resolved member of least `J`,
/// which must lie below `c0`.
pub fn construct_subcritical_data(
    surface: &Surface,
    weight: &Weight,
    green: &GreenData,
    c0: f64,
    config: &SeedConfig,
) -> Result<SeedResult> {
    let rho = 8.0 * std::f64::consts::PI;
    let (pi, pj) = green.pole;
    let min_eps = config.min_cells * surface.grid().dx() * (0.5 * surface.phi().at(pi, pj)).exp();
    let eps = config.eps_range();
    let evaluated = eps
        .par_iter()
        .map(|&e| {
            let u = glued_bubble(surface, green, e, config.delta)?;
            let j = functionals::functional_j(surface, weight, rho, &u)?;
            let mass = functionals::mass(surface, &u)?;
            Ok((
                ScanPoint {
                    eps: e,
                    j,
                    mass,
                    resolved: e >= min_eps,
                },
                u,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let scan: Vec<ScanPoint> = evaluated.iter().map(|(p, _)| *p).collect();
    // Smallest eps wins ties, by scan order.
    let best = evaluated
        .iter()
        .enumerate()
        .filter(|(_, (p, _))| p.resolved)
        .fold(None::<(usize, f64)>, |acc, (k, (p, _))| match acc {
            Some((_, j)) if j <= p.j => acc,
            _ => Some((k, p.j)),
        });
    let listing = || {
        scan.iter()
            .map(|p| format!("eps={:.3e} J={:.6}{}", p.eps, p.j, if p.resolved { "" } else { " (unresolved)" }))
            .collect::<Vec<_>>()
            .join("; ")
    };
    match best {
        Some((k, j0)) if j0 < c0 => {
            let (p, u0) = evaluated.into_iter().nth(k).expect("index from enumerate");
            Ok(SeedResult {
                u0,
                eps: p.eps,
                j0,
                c0,
                margin: j0 - c0,
                pole: green.pole,
                scan,
            })
        }
        Some((_, j0)) => Err(Error::Construction(format!(
            "least J = {j0} does not reach C0 = {c0}; scan: {}",
            listing()
        ))),
        None => Err(Error::Construction(format!(
            "no eps in the range resolves on this grid; scan: {}",
            listing()
        ))),
    }
}

/// Checks the convergence condition, then builds initial data below its `C_0`.
pub fn subcritical_seed(
    surface: &Surface,
    weight: &Weight,
    geometry: GeometryConfig,
    config: &SeedConfig,
) -> Result<(ConditionReport, SeedResult)> {
    let report = green::check_condition(surface, weight, geometry)?;
    if !report.satisfied {
        return Err(Error::Construction(format!(
            "convergence condition fails at {:?}: lhs = {}, rhs = {}",
            report.p0, report.lhs, report.rhs
        )));
    }
    let data = green::green_data(surface, report.p0, geometry.annulus)?;
    let seed = construct_subcritical_data(surface, weight, &data, report.c0, config)?;
    Ok((report, seed))
}
