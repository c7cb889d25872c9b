//! Masses, the functional `J`, its gradient map `M`, the Jacobi operator and the
//! diagnostics recorded along the flow.
//!
//! Exponentials are always formed as `e^{u - max u}` with the maximum reinserted in
//! logarithms, so the weighted quantities stay computable near blow-up.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_grids, ScalarField};
use crate::surface::Surface;

/// Largest `|u|` for which `e^{+-u}` is formed directly.
pub const EXP_LIMIT: f64 = 700.0;

/// Non-negative prescribed function with positive maximum.
#[derive(Clone, Debug)]
pub struct Weight {
    h: ScalarField,
    max_h: f64,
    zero_fraction: f64,
}

impl Weight {
    pub fn new(h: ScalarField) -> Result<Weight> {
        if let Some(k) = h.values().iter().position(|&v| v < 0.0) {
            let (i, j) = h.grid().node(k);
            return Err(Error::DegenerateWeight(format!(
                "negative value {} at node ({i}, {j})",
                h.values()[k]
            )));
        }
        let max_h = h.max();
        if max_h <= 0.0 {
            return Err(Error::DegenerateWeight("h vanishes identically".into()));
        }
        let zeros = h.values().iter().filter(|&&v| v == 0.0).count();
        let zero_fraction = zeros as f64 / h.values().len() as f64;
        Ok(Weight {
            h,
            max_h,
            zero_fraction,
        })
    }

    pub fn h(&self) -> &ScalarField {
        &self.h
    }

    pub fn max_h(&self) -> f64 {
        self.max_h
    }

    pub fn zero_fraction(&self) -> f64 {
        self.zero_fraction
    }
}

/// `h e^u` normalized by its integral, computed without overflow.
pub(crate) struct Concentration {
    /// `h e^u / int h e^u dmu_g` at every node.
    pub density: Vec<f64>,
    /// `ln int h e^u dmu_g`.
    pub log_weighted_mass: f64,
}

pub(crate) fn concentration(surface: &Surface, weight: &Weight, u: &ScalarField) -> Result<Concentration> {
    check_grids(surface.grid(), u.grid())?;
    check_grids(surface.grid(), weight.h().grid())?;
    let m = u.max();
    let scaled: Vec<f64> = u
        .values()
        .iter()
        .zip(weight.h().values())
        .map(|(&v, &h)| h * (v - m).exp())
        .collect();
    let z = surface.integrate_values(&scaled);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::DegenerateWeight(format!(
            "weighted mass int h e^u = {:e} is not positive",
            z * m.exp()
        )));
    }
    Ok(Concentration {
        density: scaled.into_iter().map(|s| s / z).collect(),
        log_weighted_mass: m + z.ln(),
    })
}

/// `int e^u dmu_g`.
pub fn mass(surface: &Surface, u: &ScalarField) -> Result<f64> {
    check_grids(surface.grid(), u.grid())?;
    let m = u.max();
    if m > EXP_LIMIT {
        return Err(Error::Range(format!("max u = {m} overflows e^u")));
    }
    let e: Vec<f64> = u.values().iter().map(|v| v.exp()).collect();
    Ok(surface.integrate_values(&e))
}

/// `ln int e^u dmu_g`, finite for any finite `u`.
pub fn log_mass(surface: &Surface, u: &ScalarField) -> Result<f64> {
    check_grids(surface.grid(), u.grid())?;
    let m = u.max();
    let e: Vec<f64> = u.values().iter().map(|v| (v - m).exp()).collect();
    Ok(m + surface.integrate_values(&e).ln())
}

/// `int h e^u dmu_g`.
pub fn weighted_mass(surface: &Surface, weight: &Weight, u: &ScalarField) -> Result<f64> {
    let c = concentration(surface, weight, u)?;
    if c.log_weighted_mass > EXP_LIMIT {
        return Err(Error::Range("weighted mass overflows".into()));
    }
    Ok(c.log_weighted_mass.exp())
}

/// `J(u) = int (1/2 |grad u|^2 + rho u) dmu_g - rho ln int h e^u dmu_g`.
pub fn functional_j(surface: &Surface, weight: &Weight, rho: f64, u: &ScalarField) -> Result<f64> {
    let c = concentration(surface, weight, u)?;
    j_with(surface, rho, u, &c)
}

fn j_with(surface: &Surface, rho: f64, u: &ScalarField, c: &Concentration) -> Result<f64> {
    let dirichlet = surface.dirichlet_energy(u)?;
    let mean = surface.integrate(u)?;
    Ok(0.5 * dirichlet + rho * mean - rho * c.log_weighted_mass)
}

/// `M(u) = -Delta_g u - rho (h e^u / int h e^u - 1)`, the `L^2(dmu_g)` gradient of `J`.
pub fn gradient_map(surface: &Surface, weight: &Weight, rho: f64, u: &ScalarField) -> Result<ScalarField> {
    let c = concentration(surface, weight, u)?;
    gradient_map_with(surface, rho, u, &c)
}

pub(crate) fn gradient_map_with(
    surface: &Surface,
    rho: f64,
    u: &ScalarField,
    c: &Concentration,
) -> Result<ScalarField> {
    let lap = surface.laplace_beltrami(u)?;
    let values = lap
        .values()
        .iter()
        .zip(&c.density)
        .map(|(l, d)| -l - rho * (d - 1.0))
        .collect();
    Ok(ScalarField::from_raw(u.grid(), values))
}

/// Jacobi operator `L xi = -Delta_g xi - rho (h e^u xi / Z - h e^u int h e^u xi / Z^2)`
/// with `Z = int h e^u dmu_g`.
pub fn jacobi_apply(
    surface: &Surface,
    weight: &Weight,
    rho: f64,
    u: &ScalarField,
    xi: &ScalarField,
) -> Result<ScalarField> {
    let c = concentration(surface, weight, u)?;
    jacobi_apply_with(surface, rho, &c, xi)
}

pub(crate) fn jacobi_apply_with(
    surface: &Surface,
    rho: f64,
    c: &Concentration,
    xi: &ScalarField,
) -> Result<ScalarField> {
    let lap = surface.laplace_beltrami(xi)?;
    let weighted: Vec<f64> = c.density.iter().zip(xi.values()).map(|(d, x)| d * x).collect();
    let avg = surface.integrate_values(&weighted);
    let values = lap
        .values()
        .iter()
        .zip(&c.density)
        .zip(xi.values())
        .map(|((l, d), x)| -l - rho * d * (x - avg))
        .collect();
    Ok(ScalarField::from_raw(xi.grid(), values))
}

/// Trudinger-Moser gap `(1/16 pi) int |grad u|^2 + int u - ln int e^u`.
pub fn tm_gap(surface: &Surface, u: &ScalarField) -> Result<f64> {
    let dirichlet = surface.dirichlet_energy(u)?;
    let mean = surface.integrate(u)?;
    Ok(dirichlet / (16.0 * std::f64::consts::PI) + mean - log_mass(surface, u)?)
}

/// `int e^u u_t^2 dmu_g`.
pub fn dissipation(surface: &Surface, u: &ScalarField, u_t: &ScalarField) -> Result<f64> {
    check_grids(u.grid(), u_t.grid())?;
    let values: Vec<f64> = u
        .values()
        .iter()
        .zip(u_t.values())
        .map(|(v, w)| v.exp() * w * w)
        .collect();
    Ok(surface.integrate_values(&values))
}

/// One sample of the quantities monitored along a flow run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub weighted_mass: f64,
    #[serde(rename = "J")]
    pub j_value: f64,
    pub dissipation: f64,
    pub fn_l2: f64,
    pub residual_l2: f64,
    pub max_u: f64,
    pub h1: f64,
    pub h2: f64,
    pub tm_gap: f64,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str =
        "t,mass,weighted_mass,J,dissipation,fn_l2,residual_l2,max_u,h1,h2,tm_gap";

    pub fn evaluate(surface: &Surface, weight: &Weight, rho: f64, t: f64, u: &ScalarField) -> Result<Diagnostics> {
        let c = concentration(surface, weight, u)?;
        let m = gradient_map_with(surface, rho, u, &c)?;
        let j_value = j_with(surface, rho, u, &c)?;
        // e^u u_t^2 = e^{-u} M^2 with u_t = -e^{-u} M.
        let diss_terms: Vec<f64> = u
            .values()
            .iter()
            .zip(m.values())
            .map(|(v, r)| (-v).exp() * r * r)
            .collect();
        let dissipation = surface.integrate_values(&diss_terms);
        let norms = surface.sobolev_norms(u)?;
        Ok(Diagnostics {
            t,
            mass: mass(surface, u)?,
            weighted_mass: c.log_weighted_mass.exp(),
            j_value,
            dissipation,
            fn_l2: dissipation.sqrt(),
            residual_l2: surface.l2_norm(&m)?,
            max_u: u.max(),
            h1: norms.h1,
            h2: norms.h2,
            tm_gap: tm_gap(surface, u)?,
        })
    }

    pub fn csv_row(&self) -> String {
        let v = [
            self.t,
            self.mass,
            self.weighted_mass,
            self.j_value,
            self.dissipation,
            self.fn_l2,
            self.residual_l2,
            self.max_u,
            self.h1,
            self.h2,
            self.tm_gap,
        ];
        v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
    }
}
