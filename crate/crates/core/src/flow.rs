//! Time integration of `d/dt e^u = Delta_g u + rho (h e^u / int h e^u - 1)`.
//!
//! Two schemes are available. `Explicit` is classical RK4 on
//! `u_t = -e^{-u} M(u)` under a parabolic step restriction. `Imex` treats the
//! Laplacian implicitly and the concentration term explicitly:
//!
//! ```text
//! (e^{w}/dt - Delta_g) u' = e^{w} w/dt - (e^{w} - e^{u})/dt + rho (h e^u / Z - 1)
//! ```
//!
//! With `w = u` this is the usual linearly implicit step. Repeating it with `w`
//! set to the previous `u'` is a Newton iteration for the step that is backward
//! Euler in `e^u`, which conserves `int e^u` exactly; the sweeps stop once the
//! mass defect is at rounding level. Both variants decrease `J` for any `dt`
//! because the convex part of `J` is implicit and `-rho ln Z` is concave.

use serde::{Deserialize, Serialize};

use crate::blowup::{self, BlowupReport, DetectConfig};
use crate::cg::pcg;
use crate::error::{Error, Result};
use crate::functionals::{self, concentration, gradient_map_with, Diagnostics, Weight, EXP_LIMIT};
use crate::grid::{check_grids, pairwise_sum, ScalarField};
use crate::surface::Surface;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Explicit,
    Imex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub rho: f64,
    pub scheme: Scheme,
    /// First imex step; later steps adapt.
    pub dt_init: f64,
    /// Explicit steps use `dt = dt_safety dx^2 min(e^{u+phi}) / 4`.
    pub dt_safety: f64,
    pub dt_max: f64,
    /// Factor applied to the imex step after each accepted step.
    pub dt_growth: f64,
    pub t_max: f64,
    pub step_max: usize,
    pub residual_tol: f64,
    pub blowup_max_u: f64,
    /// Local mass near the peak (radius 0.1) above which blow-up is suspected.
    pub blowup_local_mass: f64,
    pub sample_every: usize,
    /// Upper bound on mass-correcting sweeps per imex step; 1 gives the plain
    /// linearly implicit scheme.
    pub mass_sweeps: usize,
    /// Relative mass defect at which the sweeps stop.
    pub sweep_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            rho: 8.0 * std::f64::consts::PI,
            scheme: Scheme::Imex,
            dt_init: 1e-4,
            dt_safety: 0.2,
            dt_max: 1.0,
            dt_growth: 1.1,
            t_max: 100.0,
            step_max: 1_000_000,
            residual_tol: 1e-6,
            blowup_max_u: 12.0,
            blowup_local_mass: 7.0 * std::f64::consts::PI,
            sample_every: 1,
            mass_sweeps: 8,
            sweep_tol: 1e-13,
            cg_tol: 1e-10,
            cg_max_iter: 1000,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("dt_init", self.dt_init),
            ("dt_safety", self.dt_safety),
            ("dt_max", self.dt_max),
            ("residual_tol", self.residual_tol),
            ("sweep_tol", self.sweep_tol),
            ("cg_tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Range(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_max >= 0.0) {
            return Err(Error::Range(format!("t_max must be >= 0, got {}", self.t_max)));
        }
        if !(self.dt_growth >= 1.0) {
            return Err(Error::Range(format!("dt_growth must be >= 1, got {}", self.dt_growth)));
        }
        if self.sample_every == 0 || self.mass_sweeps == 0 || self.cg_max_iter == 0 {
            return Err(Error::Range(
                "sample_every, mass_sweeps and cg_max_iter must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub u: ScalarField,
    pub t: f64,
    pub step_index: usize,
    /// `int e^{u_0} dmu_g`, frozen at `t = 0`.
    pub mass0: f64,
    /// Step size to try next (imex).
    pub dt: f64,
    /// Steps rejected so far.
    pub rejected: usize,
}

impl FlowState {
    pub fn initial(surface: &Surface, u0: ScalarField, config: &FlowConfig) -> Result<FlowState> {
        let mass0 = functionals::mass(surface, &u0)?;
        Ok(FlowState {
            u: u0,
            t: 0.0,
            step_index: 0,
            mass0,
            dt: config.dt_init,
            rejected: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    BudgetExhausted,
    BlowupSuspected,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub final_state: FlowState,
    pub series: Vec<Diagnostics>,
    pub termination: Termination,
    pub blowup: Option<BlowupReport>,
    /// Diagnostics of the final state (also the last entry of `series`).
    pub final_diagnostics: Diagnostics,
    /// `max |ln int h e^u|` over the run: the weighted mass stayed in `[e^{-B}, e^B]`.
    pub weighted_mass_bound: f64,
    pub failure: Option<String>,
}

/// `u_t = -e^{-u} M(u)`.
pub fn time_derivative(surface: &Surface, weight: &Weight, rho: f64, u: &ScalarField) -> Result<ScalarField> {
    let lo = u.min();
    if lo < -EXP_LIMIT {
        return Err(Error::Range(format!("min u = {lo} overflows e^{{-u}}")));
    }
    let c = concentration(surface, weight, u)?;
    let m = gradient_map_with(surface, rho, u, &c)?;
    m.zip_map(u, |r, v| -(-v).exp() * r)
}

/// One classical RK4 step of fixed size.
pub fn rk4_step(surface: &Surface, weight: &Weight, rho: f64, u: &ScalarField, dt: f64) -> Result<ScalarField> {
    let f = |v: &ScalarField| time_derivative(surface, weight, rho, v);
    let k1 = f(u)?;
    let k2 = f(&u.axpy(0.5 * dt, &k1)?)?;
    let k3 = f(&u.axpy(0.5 * dt, &k2)?)?;
    let k4 = f(&u.axpy(dt, &k3)?)?;
    let values = (0..u.values().len())
        .map(|i| {
            u.values()[i]
                + dt / 6.0 * (k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i])
        })
        .collect();
    ScalarField::new(u.grid(), values)
}

/// Explicit step size `sigma dx^2 min(e^{u+phi}) / 4`.
pub fn explicit_dt(surface: &Surface, u: &ScalarField, safety: f64) -> f64 {
    let dx = surface.grid().dx();
    let m = u
        .values()
        .iter()
        .zip(surface.phi().values())
        .map(|(v, p)| v + p)
        .fold(f64::INFINITY, f64::min);
    safety * dx * dx * m.exp() / 4.0
}

#[derive(Clone, Debug)]
pub struct ImexOutcome {
    pub u: ScalarField,
    pub sweeps: usize,
    /// `|int e^{u'} - int e^u| / int e^u` after the last sweep.
    pub mass_defect: f64,
    pub cg_iterations: usize,
}

/// One imex step of fixed size with up to `sweeps` mass-correcting sweeps.
pub fn imex_step(
    surface: &Surface,
    weight: &Weight,
    rho: f64,
    u: &ScalarField,
    dt: f64,
    sweeps: usize,
    sweep_tol: f64,
    cg_tol: f64,
    cg_max_iter: usize,
) -> Result<ImexOutcome> {
    check_grids(surface.grid(), u.grid())?;
    if u.max() + surface.phi().max() > EXP_LIMIT {
        return Err(Error::Range("e^u overflows".into()));
    }
    let dx2 = surface.grid().dx().powi(2);
    let phi = surface.phi().values();
    let c = concentration(surface, weight, u)?;
    let e0: Vec<f64> = u.values().iter().zip(phi).map(|(v, p)| (v + p).exp()).collect();
    let m0 = pairwise_sum(&e0) * dx2;
    // e^phi rho (h e^u / Z - 1), the explicit source in flat measure.
    let src: Vec<f64> = c
        .density
        .iter()
        .zip(surface.area_element().values())
        .map(|(d, a)| a * rho * (d - 1.0))
        .collect();

    let mut w = u.values().to_vec();
    let mut defect = f64::INFINITY;
    let mut done = 0;
    let mut cg_iterations = 0;
    for _ in 0..sweeps {
        let d: Vec<f64> = w.iter().zip(phi).map(|(v, p)| (v + p).exp()).collect();
        let lapw = surface.flat_laplacian_values(&w);
        let rhs: Vec<f64> = (0..w.len())
            .map(|i| (e0[i] - d[i]) / dt + src[i] + lapw[i])
            .collect();
        let shift = pairwise_sum(&d) / d.len() as f64 / dt;
        let apply = |x: &[f64]| -> Vec<f64> {
            let lap = surface.flat_laplacian_values(x);
            x.iter().zip(&d).zip(&lap).map(|((x, d), l)| d / dt * x - l).collect()
        };
        let precondition = |r: &[f64]| surface.spectral().shifted_inverse(r, shift);
        let out = pcg(apply, precondition, &rhs, vec![0.0; w.len()], cg_tol, cg_max_iter);
        cg_iterations += out.iterations;
        if out.breakdown || !out.converged {
            return Err(Error::NumericalFailure(format!(
                "inner solve stalled at relative residual {:e} after {} iterations",
                out.relative_residual, out.iterations
            )));
        }
        w.iter_mut().zip(&out.x).for_each(|(w, x)| *w += x);
        done += 1;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("imex sweep produced non-finite values".into()));
        }
        let e1: Vec<f64> = w.iter().zip(phi).map(|(v, p)| (v + p).exp()).collect();
        defect = (pairwise_sum(&e1) * dx2 - m0).abs() / m0;
        if defect <= sweep_tol {
            break;
        }
    }
    Ok(ImexOutcome {
        u: ScalarField::new(u.grid(), w)?,
        sweeps: done,
        mass_defect: defect,
        cg_iterations,
    })
}

const MIN_DT: f64 = 1e-14;
const MASS_DRIFT_TOL: f64 = 1e-8;
const J_INCREASE_TOL: f64 = 1e-10;

/// Advances by one accepted step, halving `dt` on rejection.
pub fn step(state: &FlowState, surface: &Surface, weight: &Weight, config: &FlowConfig) -> Result<FlowState> {
    let rho = config.rho;
    let j0 = functionals::functional_j(surface, weight, rho, &state.u)?;
    let lm0 = functionals::log_mass(surface, &state.u)?;
    let remaining = config.t_max - state.t;
    let mut dt = match config.scheme {
        Scheme::Explicit => explicit_dt(surface, &state.u, config.dt_safety),
        Scheme::Imex => state.dt.min(config.dt_max),
    };
    if remaining > 0.0 && dt > remaining {
        dt = remaining;
    }
    let mut rejected = 0;
    loop {
        if dt < MIN_DT {
            return Err(Error::NumericalFailure(format!(
                "step size underflow at t = {} after {rejected} rejections",
                state.t
            )));
        }
        let trial = match config.scheme {
            Scheme::Explicit => rk4_step(surface, weight, rho, &state.u, dt),
            Scheme::Imex => imex_step(
                surface,
                weight,
                rho,
                &state.u,
                dt,
                config.mass_sweeps,
                config.sweep_tol,
                config.cg_tol,
                config.cg_max_iter,
            )
            .map(|o| o.u),
        };
        if let Ok(u1) = trial {
            let accepted = (|| -> Result<bool> {
                let lm1 = functionals::log_mass(surface, &u1)?;
                let drift = (lm1 - lm0).exp_m1().abs();
                let j1 = functionals::functional_j(surface, weight, rho, &u1)?;
                Ok(drift <= MASS_DRIFT_TOL && j1 <= j0 + J_INCREASE_TOL * (1.0 + j0.abs()))
            })()
            .unwrap_or(false);
            if accepted {
                let next_dt = match config.scheme {
                    Scheme::Explicit => dt,
                    // A step shortened only to land on t_max keeps its nominal size.
                    Scheme::Imex => {
                        let base = if rejected == 0 { state.dt.min(config.dt_max) } else { dt };
                        (base * config.dt_growth).min(config.dt_max)
                    }
                };
                return Ok(FlowState {
                    u: u1,
                    t: state.t + dt,
                    step_index: state.step_index + 1,
                    mass0: state.mass0,
                    dt: next_dt,
                    rejected: state.rejected + rejected,
                });
            }
        }
        rejected += 1;
        dt *= 0.5;
    }
}

/// Integrates from `u0` until convergence, suspected blow-up or budget exhaustion.
pub fn run(surface: &Surface, weight: &Weight, u0: ScalarField, config: &FlowConfig) -> Result<RunResult> {
    run_with_observer(surface, weight, u0, config, |_| Ok(()))
}

/// As [`run`], calling `observe` on the initial state and after every accepted step.
pub fn run_with_observer(
    surface: &Surface,
    weight: &Weight,
    u0: ScalarField,
    config: &FlowConfig,
    mut observe: impl FnMut(&FlowState) -> Result<()>,
) -> Result<RunResult> {
    config.validate()?;
    check_grids(surface.grid(), u0.grid())?;
    check_grids(surface.grid(), weight.h().grid())?;
    functionals::weighted_mass(surface, weight, &u0)?;
    let mut state = FlowState::initial(surface, u0, config)?;
    let detect_config = DetectConfig {
        max_u_threshold: config.blowup_max_u,
        local_mass_threshold: config.blowup_local_mass,
        ..DetectConfig::default()
    };
    let mut series = Vec::new();
    let mut bound: f64 = 0.0;
    observe(&state)?;
    loop {
        let diag = Diagnostics::evaluate(surface, weight, config.rho, state.t, &state.u)?;
        bound = bound.max(diag.weighted_mass.ln().abs());
        let sampled = state.step_index % config.sample_every == 0;

        let mut verdict = None;
        let mut report = None;
        if diag.residual_l2 < config.residual_tol {
            verdict = Some(Termination::Converged);
        } else if diag.max_u > config.blowup_max_u {
            let r = blowup::detect(surface, weight, &state.u, state.mass0, &detect_config)?;
            if r.suspected {
                verdict = Some(Termination::BlowupSuspected);
            }
            report = Some(r);
        }
        if verdict.is_none() && (state.t >= config.t_max || state.step_index >= config.step_max) {
            verdict = Some(Termination::BudgetExhausted);
        }
        if sampled || verdict.is_some() {
            series.push(diag);
        }

        if let Some(termination) = verdict {
            return Ok(RunResult {
                final_state: state,
                series,
                termination,
                blowup: report,
                final_diagnostics: diag,
                weighted_mass_bound: bound,
                failure: None,
            });
        }
        match step(&state, surface, weight, config) {
            Ok(next) => state = next,
            Err(Error::NumericalFailure(msg)) => {
                if !sampled {
                    series.push(diag);
                }
                return Ok(RunResult {
                    final_state: state,
                    series,
                    termination: Termination::NumericalFailure,
                    blowup: report,
                    final_diagnostics: diag,
                    weighted_mass_bound: bound,
                    failure: Some(msg),
                });
            }
            Err(e) => return Err(e),
        }
        // Hitting t_max exactly despite accumulated rounding in t.
        if (config.t_max - state.t).abs() <= 1e-12 * config.t_max.max(1.0) {
            state.t = state.t.max(config.t_max);
        }
        observe(&state)?;
    }
}
