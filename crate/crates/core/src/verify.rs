//! Self-check suite run by `kwflow verify`: each module's invariants evaluated on
//! seeded random or closed-form inputs.

use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;

use crate::blowup;
use crate::builtins;
use crate::error::Result;
use crate::flow::{self, FlowConfig, Termination};
use crate::functionals::{self, Weight};
use crate::green::{self, FitAnnulus, GeometryConfig};
use crate::grid::{Grid, ScalarField};
use crate::oracle;
use crate::stationary;
use crate::surface::Surface;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    pub fn grid_size(self) -> usize {
        match self {
            Level::Quick => 64,
            Level::Full => 256,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error or the measured quantity.
    pub value: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub level: Level,
    pub n: usize,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!("verify level={:?} n={}\n", self.level, self.n).to_lowercase();
        for c in &self.checks {
            out.push_str(&format!(
                "{:4}  {:<28} value={:<11.3e} tol={:<9.1e} {:>7.2}s  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                c.seconds,
                c.detail
            ));
        }
        let failing = self.failing();
        if failing.is_empty() {
            out.push_str("all checks passed\n");
        } else {
            out.push_str(&format!("failing: {}\n", failing.join(", ")));
        }
        out
    }
}

/// Outcome of one check body: measured value and a free-form note.
type Measured = Result<(f64, String)>;

struct Runner {
    checks: Vec<Check>,
}

impl Runner {
    fn check(&mut self, name: &'static str, tolerance: f64, body: impl FnOnce() -> Measured) {
        let start = Instant::now();
        let (passed, value, detail) = match body() {
            Ok((v, d)) => (v <= tolerance, v, d),
            Err(e) => (false, f64::NAN, format!("error: {e}")),
        };
        self.checks.push(Check {
            name,
            passed,
            value,
            tolerance,
            seconds: start.elapsed().as_secs_f64(),
            detail,
        });
    }
}

fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_surface(grid: Grid, seed: u64, fault: bool) -> Result<Surface> {
    let s = Surface::new(grid, &builtins::random_smooth(grid, seed, 3, 0.5))?;
    Ok(if fault { s.with_corrupted_laplacian() } else { s })
}

/// Runs every check at `level`. With `corrupt_laplacian` the flat Laplacian used by
/// the checks has the wrong sign, which the suite must notice. `seed` offsets every
/// random input.
pub fn run(level: Level, corrupt_laplacian: bool, seed: u64) -> Report {
    let n = level.grid_size();
    let grid = Grid::new(n).expect("suite sizes are valid");
    let fault = corrupt_laplacian;
    let mut r = Runner { checks: Vec::new() };
    let seeds: Vec<u64> = (0..5).map(|k| seed.wrapping_add(k)).collect();
    let sd = |k: u64| seed.wrapping_add(k);

    r.check("unit area", 1e-12, || {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            worst = worst.max((surf.integrate(&ScalarField::constant(grid, 1.0))? - 1.0).abs());
        }
        Ok((worst, format!("{} random conformal factors", seeds.len())))
    });

    r.check("gauss-bonnet", 1e-8, || {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            worst = worst.max(surf.integrate(&surf.gauss_curvature())?.abs());
        }
        Ok((worst, "|int K dmu|".into()))
    });

    r.check("conformal invariance", 1e-10, || {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            let f = builtins::random_smooth(grid, s.wrapping_add(100), 4, 1.0);
            let curved = surf.integrate(&surf.grad_energy_density(&f)?)?;
            let flat = Surface::flat(grid).dirichlet_energy(&f)?;
            worst = worst.max((curved - flat).abs() / flat.max(1.0));
        }
        Ok((worst, "relative".into()))
    });

    r.check("self-adjointness", 1e-10, || {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            let f = builtins::random_smooth(grid, s.wrapping_add(200), 4, 1.0);
            let h = builtins::random_smooth(grid, s.wrapping_add(300), 4, 1.0);
            let a = surf.inner(&f, &surf.laplace_beltrami(&h)?)?;
            let b = surf.inner(&h, &surf.laplace_beltrami(&f)?)?;
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        Ok((worst, "relative".into()))
    });

    // Rounding in the solved field is amplified by |k|^2, so the round-trip
    // error grows like n^2 eps; 1e-12 is only reachable up to about n = 64.
    let trip_grid = Grid::new(n.min(64)).expect("valid");
    r.check("poisson round-trip", 1e-12, || {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(trip_grid, s, fault)?;
            let f = builtins::random_smooth(trip_grid, s.wrapping_add(400), 5, 1.0);
            let v = surf.poisson_solve(&f)?;
            let back = surf.flat_laplacian(&v)?.scale(-1.0);
            let scale = f.values().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            worst = worst.max(max_abs_diff(&back, &f) / scale);
        }
        Ok((worst, "relative sup error of -Delta(solve(f)) - f".into()))
    });

    let rho = 8.0 * PI;
    let half_cos = builtins::weight("one_plus_half_cos", grid).expect("builtin weight");

    r.check("gradient map", 1e-6, || {
        let w = half_cos.clone();
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            let u = builtins::random_smooth(grid, s.wrapping_add(500), 3, 1.0);
            let xi = builtins::random_smooth(grid, s.wrapping_add(600), 3, 1.0);
            let eps = 1e-5;
            let jp = functionals::functional_j(&surf, &w, rho, &u.axpy(eps, &xi)?)?;
            let jm = functionals::functional_j(&surf, &w, rho, &u.axpy(-eps, &xi)?)?;
            let fd = (jp - jm) / (2.0 * eps);
            let exact = surf.inner(&functionals::gradient_map(&surf, &w, rho, &u)?, &xi)?;
            worst = worst.max((fd - exact).abs() / exact.abs().max(1e-8));
        }
        Ok((worst, "central difference of J vs int M xi".into()))
    });

    r.check("jacobi operator", 1e-4, || {
        let w = half_cos.clone();
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            let u = builtins::random_smooth(grid, s.wrapping_add(700), 3, 1.0);
            let xi = builtins::random_smooth(grid, s.wrapping_add(800), 3, 1.0);
            let eps = 1e-5;
            let mp = functionals::gradient_map(&surf, &w, rho, &u.axpy(eps, &xi)?)?;
            let mm = functionals::gradient_map(&surf, &w, rho, &u.axpy(-eps, &xi)?)?;
            let fd = mp.axpy(-1.0, &mm)?.scale(0.5 / eps);
            let l = functionals::jacobi_apply(&surf, &w, rho, &u, &xi)?;
            worst = worst.max(surf.l2_norm(&fd.axpy(-1.0, &l)?)? / surf.l2_norm(&l)?);
        }
        Ok((worst, "central difference of M vs L xi".into()))
    });

    r.check("jacobi symmetry", 1e-10, || {
        let w = half_cos.clone();
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            let surf = random_surface(grid, s, fault)?;
            let u = builtins::random_smooth(grid, s.wrapping_add(900), 3, 1.0);
            let xi = builtins::random_smooth(grid, s.wrapping_add(1000), 3, 1.0);
            let eta = builtins::random_smooth(grid, s.wrapping_add(1100), 3, 1.0);
            let a = surf.inner(&functionals::jacobi_apply(&surf, &w, rho, &u, &xi)?, &eta)?;
            let b = surf.inner(&functionals::jacobi_apply(&surf, &w, rho, &u, &eta)?, &xi)?;
            let one = functionals::jacobi_apply(&surf, &w, rho, &u, &ScalarField::constant(grid, 1.0))?;
            let kernel = surf.l2_norm(&one)?;
            worst = worst.max((a - b).abs() / a.abs().max(1.0)).max(kernel);
        }
        Ok((worst, "asymmetry and |L 1|".into()))
    });

    r.check("shift invariance", 1e-10, || {
        let w = half_cos.clone();
        let surf = random_surface(grid, sd(0), fault)?;
        let u = builtins::random_smooth(grid, sd(1200), 3, 1.0);
        let shifted = u.add_scalar(5.0);
        let dj = (functionals::functional_j(&surf, &w, rho, &u)?
            - functionals::functional_j(&surf, &w, rho, &shifted)?)
        .abs();
        let dg = (functionals::tm_gap(&surf, &u)? - functionals::tm_gap(&surf, &shifted)?).abs();
        let dm = max_abs_diff(
            &functionals::gradient_map(&surf, &w, rho, &u)?,
            &functionals::gradient_map(&surf, &w, rho, &shifted)?,
        );
        let m = functionals::gradient_map(&surf, &w, rho, &u)?;
        let scale = m.values().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let mean_m = surf.integrate(&m)?.abs();
        Ok((dj.max(dg).max(dm / scale).max(mean_m / scale), "J, tm_gap, M under u + 5; |int M|".into()))
    });

    // Flow checks on a coarser grid at the full level keep the runtime bounded.
    let flow_grid = Grid::new(n.min(64)).expect("valid");
    r.check("mass conservation", 1e-6, || {
        let surface = Surface::flat(flow_grid);
        let surface = if fault { surface.with_corrupted_laplacian() } else { surface };
        let w = builtins::weight("one_plus_half_cos", flow_grid)?;
        let cfg = FlowConfig {
            dt_init: 1e-4,
            dt_growth: 1.0,
            t_max: if level == Level::Full { 0.2 } else { 0.05 },
            step_max: 5000,
            cg_max_iter: 200,
            ..FlowConfig::default()
        };
        let run = flow::run(&surface, &w, ScalarField::zeros(flow_grid), &cfg)?;
        let m0 = run.final_state.mass0;
        let drift = run.series.iter().map(|d| (d.mass - m0).abs() / m0).fold(0.0, f64::max);
        let note = format!("{:?} after {} steps", run.termination, run.final_state.step_index);
        Ok((if run.termination == Termination::NumericalFailure { f64::INFINITY } else { drift }, note))
    });

    r.check("monotonicity", 1e-10, || {
        let mut worst: f64 = f64::NEG_INFINITY;
        for name in builtins::WEIGHT_NAMES {
            let surface = Surface::flat(flow_grid);
            let surface = if fault { surface.with_corrupted_laplacian() } else { surface };
            let w = builtins::weight(name, flow_grid)?;
            let cfg = FlowConfig {
                dt_init: 1e-3,
                t_max: 0.1,
                step_max: 2000,
                cg_max_iter: 200,
                ..FlowConfig::default()
            };
            let run = flow::run(&surface, &w, ScalarField::zeros(flow_grid), &cfg)?;
            if run.termination == Termination::NumericalFailure {
                return Ok((f64::INFINITY, format!("{name}: {:?}", run.failure)));
            }
            for pair in run.series.windows(2) {
                let rise = (pair[1].j_value - pair[0].j_value) / (1.0 + pair[0].j_value.abs());
                worst = worst.max(rise);
            }
        }
        Ok((worst.max(0.0), "largest relative J increase, all builtin weights".into()))
    });

    r.check("subcritical newton", 1e-10, || {
        let surface = random_surface(flow_grid, sd(3), fault)?;
        let w = builtins::weight("one_plus_half_cos", flow_grid)?;
        let res = stationary::newton_solve(&surface, &w, 4.0 * PI, &ScalarField::zeros(flow_grid), 1e-11, 20)?;
        Ok((res.residual, format!("{} iterations", res.iterations)))
    });

    let flat = if fault { Surface::flat(grid).with_corrupted_laplacian() } else { Surface::flat(grid) };
    let annulus = FitAnnulus::default();

    r.check("green gauge", 1e-8, || {
        let g = green::green_function(&random_surface(grid, sd(1), fault)?, (n / 3, n / 5))?;
        let surf = random_surface(grid, sd(1), fault)?;
        Ok((surf.integrate(&g)?.abs(), "|int G dmu|".into()))
    });

    r.check("green pairing", if n >= 256 { 1e-3 } else { 1e-2 }, || {
        let pole = (n / 8, n / 4);
        let g = green::green_function(&flat, pole)?;
        let psi = ScalarField::from_fn(grid, |x, _| (2.0 * PI * x).cos())?;
        let lhs = flat.inner(&g, &flat.laplace_beltrami(&psi)?.scale(-1.0))?;
        let rhs = 8.0 * PI * psi.at(pole.0, pole.1);
        Ok(((lhs - rhs).abs(), format!("{lhs:.6} vs {rhs:.6}")))
    });

    r.check("flat regular part", 1e-3, || {
        let data = green::green_data(&flat, (0, 0), annulus)?;
        let want = oracle::flat_torus_regular_part();
        let err = (data.a - want).abs().max(data.b[0].abs()).max(data.b[1].abs());
        Ok((err, format!("A = {:.6}, Ewald {want:.6}", data.a)))
    });

    r.check("remark implication", 0.0, || {
        let mut violations = 0.0;
        let mut notes = Vec::new();
        let geometry = GeometryConfig {
            stride: n / 8,
            annulus,
        };
        for name in builtins::WEIGHT_NAMES {
            let w = builtins::weight(name, grid)?;
            let rep = green::check_condition(&flat, &w, geometry)?;
            if rep.simplified > 0.0 && !rep.satisfied {
                violations += 1.0;
            }
            notes.push(format!("{name}: {:.3}", rep.simplified));
        }
        Ok((violations, notes.join(", ")))
    });

    r.check("full-torus local mass", 1e-8, || {
        let w = half_cos.clone();
        let u = builtins::random_smooth(grid, sd(1300), 3, 2.0);
        let m = blowup::local_mass(&flat, &w, &u, [0.3, 0.6], 0.75)?;
        Ok(((m - 8.0 * PI).abs() / (8.0 * PI), "relative".into()))
    });

    r.check("bubble fit", 1e-3, || {
        let radii = blowup::fit_radii(blowup::FIT_WINDOW, 33);
        let profile: Vec<(f64, f64)> = radii.iter().map(|&s| (s, -2.0 * (2.0 * s * s).ln_1p())).collect();
        let fit = blowup::bubble_fit(&profile, 0.0, 1.0);
        Ok(((fit.a - 2.0).abs() / 2.0, format!("a = {:.6}", fit.a)))
    });

    r.check("quantization", 0.02, || {
        let w = Weight::new(ScalarField::constant(grid, 1.0))?;
        let c = [0.5, 0.5];
        let u = blowup::bubble_of_width(grid, c, 1e-2);
        let rep = blowup::detect(&flat, &w, &u, functionals::mass(&flat, &u)?, &Default::default())?;
        let err = (rep.quantization - 8.0 * PI).abs() / (8.0 * PI);
        let penalty = if rep.peak_count == 1 { 0.0 } else { 1.0 };
        Ok((err + penalty, format!("{} peak(s)", rep.peak_count)))
    });

    Report {
        level,
        n,
        checks: r.checks,
    }
}
