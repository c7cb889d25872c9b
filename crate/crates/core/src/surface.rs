//! Unit-area conformally flat tori `g = e^phi |dx|^2` and their spectral calculus.
//!
//! Everything is pseudospectral on the periodic grid: derivatives are Fourier
//! multipliers and integrals are plain Riemann sums, which coincide with the
//! trapezoidal rule and are exact for band-limited integrands.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_grids, pairwise_sum, Grid, ScalarField};
use crate::spectral::Spectral;

#[derive(Clone, Debug)]
pub struct Surface {
    grid: Grid,
    phi: ScalarField,
    area_element: ScalarField,
    inv_area_element: ScalarField,
    spectral: Arc<Spectral>,
    laplacian_sign: f64,
}

/// `L^2`, `H^1` and `H^2` norms with respect to `dmu_g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevNorms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Surface {
    /// Builds the surface with conformal factor `phi_raw + c`, the constant chosen so
    /// that the total area is one.
    pub fn new(grid: Grid, phi_raw: &ScalarField) -> Result<Surface> {
        check_grids(grid, phi_raw.grid())?;
        if !phi_raw.is_finite() {
            return Err(Error::InvalidField("conformal factor is not finite".into()));
        }
        let dx2 = grid.dx() * grid.dx();
        let m = phi_raw.max();
        let scaled: Vec<f64> = phi_raw.values().iter().map(|&p| (p - m).exp()).collect();
        let shift = -(m + (pairwise_sum(&scaled) * dx2).ln());
        let phi = phi_raw.add_scalar(shift);
        let area_element = phi.map(f64::exp);
        let inv_area_element = phi.map(|p| (-p).exp());
        Ok(Surface {
            grid,
            phi,
            area_element,
            inv_area_element,
            spectral: Arc::new(Spectral::new(grid)),
            laplacian_sign: 1.0,
        })
    }

    pub fn flat(grid: Grid) -> Surface {
        Surface::new(grid, &ScalarField::zeros(grid)).expect("zero conformal factor is valid")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    /// `e^phi`, the density of `dmu_g` against `dx`.
    pub fn area_element(&self) -> &ScalarField {
        &self.area_element
    }

    pub fn is_flat(&self) -> bool {
        self.phi.values().iter().all(|&p| p == 0.0)
    }

    /// Copy whose flat Laplacian has the wrong sign. Only for exercising the
    /// verification suite's fault detection.
    #[doc(hidden)]
    pub fn with_corrupted_laplacian(mut self) -> Surface {
        self.laplacian_sign = -1.0;
        self
    }

    pub(crate) fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        check_grids(self.grid, f.grid())
    }

    fn dx2(&self) -> f64 {
        self.grid.dx() * self.grid.dx()
    }

    /// `int f dmu_g`.
    pub fn integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        Ok(self.integrate_values(f.values()))
    }

    pub(crate) fn integrate_values(&self, f: &[f64]) -> f64 {
        let terms: Vec<f64> = f
            .iter()
            .zip(self.area_element.values())
            .map(|(a, w)| a * w)
            .collect();
        pairwise_sum(&terms) * self.dx2()
    }

    /// `int f dx` (flat measure).
    pub fn integrate_flat(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        Ok(pairwise_sum(f.values()) * self.dx2())
    }

    /// `int f g dmu_g`.
    pub fn inner(&self, f: &ScalarField, g: &ScalarField) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        let terms: Vec<f64> = f
            .values()
            .iter()
            .zip(g.values())
            .zip(self.area_element.values())
            .map(|((a, b), w)| a * b * w)
            .collect();
        Ok(pairwise_sum(&terms) * self.dx2())
    }

    pub fn l2_norm(&self, f: &ScalarField) -> Result<f64> {
        Ok(self.inner(f, f)?.max(0.0).sqrt())
    }

    pub fn flat_laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f)?;
        Ok(ScalarField::from_raw(self.grid, self.flat_laplacian_values(f.values())))
    }

    pub(crate) fn flat_laplacian_values(&self, f: &[f64]) -> Vec<f64> {
        let mut lap = self.spectral.laplacian(f);
        if self.laplacian_sign != 1.0 {
            lap.iter_mut().for_each(|v| *v *= self.laplacian_sign);
        }
        lap
    }

    /// `Delta_g f = e^{-phi} Delta_flat f`.
    pub fn laplace_beltrami(&self, f: &ScalarField) -> Result<ScalarField> {
        let lap = self.flat_laplacian(f)?;
        lap.zip_map(&self.inv_area_element, |a, w| a * w)
    }

    /// Spectral flat gradient `(d f/dx1, d f/dx2)`.
    pub fn flat_gradient(&self, f: &ScalarField) -> Result<[ScalarField; 2]> {
        self.check(f)?;
        let (g1, g2) = self.spectral.gradient(f.values());
        Ok([
            ScalarField::from_raw(self.grid, g1),
            ScalarField::from_raw(self.grid, g2),
        ])
    }

    /// `|grad_g f|_g^2 = e^{-phi} |grad f|^2`.
    pub fn grad_energy_density(&self, f: &ScalarField) -> Result<ScalarField> {
        let [g1, g2] = self.flat_gradient(f)?;
        let flat = g1.zip_map(&g2, |a, b| a * a + b * b)?;
        flat.zip_map(&self.inv_area_element, |a, w| a * w)
    }

    /// `int |grad f|^2 dx`, evaluated in Fourier space so that it is exactly the
    /// quadratic form of the discrete Laplacian. Conformally invariant.
    pub fn dirichlet_energy(&self, f: &ScalarField) -> Result<f64> {
        self.check(f)?;
        Ok(self.spectral.dirichlet_form(f.values()))
    }

    /// `K = -1/2 e^{-phi} Delta_flat phi`.
    pub fn gauss_curvature(&self) -> ScalarField {
        self.laplace_beltrami(&self.phi)
            .expect("phi lives on the surface grid")
            .scale(-0.5)
    }

    /// Mean-zero solution of `-Delta_flat v = f`.
    pub fn poisson_solve(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f)?;
        let mean = self.integrate_flat(f)?;
        let scale = f.values().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if mean.abs() > 1e-10 * scale {
            return Err(Error::Solvability { mean });
        }
        Ok(ScalarField::from_raw(
            self.grid,
            self.spectral.shifted_inverse(f.values(), 0.0),
        ))
    }

    pub fn sobolev_norms(&self, f: &ScalarField) -> Result<SobolevNorms> {
        let l2sq = self.inner(f, f)?;
        let grad = self.dirichlet_energy(f)?;
        let lap = self.laplace_beltrami(f)?;
        let lapsq = self.inner(&lap, &lap)?;
        Ok(SobolevNorms {
            l2: l2sq.max(0.0).sqrt(),
            h1: (l2sq + grad).max(0.0).sqrt(),
            h2: (l2sq + grad + lapsq).max(0.0).sqrt(),
        })
    }

    /// Spectral interpolation-free point evaluation helpers for node-centred
    /// geometry: minimal-image flat offset from `center` to node `(i, j)`.
    pub fn offset(&self, center: [f64; 2], i: usize, j: usize) -> [f64; 2] {
        let dx = self.grid.dx();
        [
            Grid::wrap(i as f64 * dx - center[0]),
            Grid::wrap(j as f64 * dx - center[1]),
        ]
    }

    /// Conformal factor at a continuous point (bilinear).
    pub fn phi_at(&self, p: [f64; 2]) -> f64 {
        crate::interp::bilinear(&self.phi, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::bessel_i0;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn constant_phi_is_shifted_to_unit_area() {
        let g = grid(32);
        let s = Surface::new(g, &ScalarField::constant(g, 4f64.ln())).unwrap();
        assert!(s.phi().values().iter().all(|p| p.abs() < 1e-14));
        let one = ScalarField::constant(g, 1.0);
        assert!((s.integrate(&one).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sine_phi_shift_is_minus_log_i0() {
        let g = grid(64);
        let raw = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin()).unwrap();
        let s = Surface::new(g, &raw).unwrap();
        let shift = s.phi().at(0, 0) - raw.at(0, 0);
        assert!((shift + bessel_i0(1.0).ln()).abs() < 1e-13, "shift {shift}");
    }

    #[test]
    fn non_finite_phi_is_rejected() {
        let g = grid(16);
        let mut v = vec![0.0; g.len()];
        v[3] = f64::INFINITY;
        // ScalarField::new already refuses it, so go through from_raw.
        let raw = ScalarField::from_raw(g, v);
        assert!(matches!(Surface::new(g, &raw), Err(Error::InvalidField(_))));
    }

    #[test]
    fn integrate_known_values() {
        let g = grid(64);
        let s = Surface::flat(g);
        let c2 = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos().powi(2)).unwrap();
        assert!((s.integrate(&c2).unwrap() - 0.5).abs() < 1e-14);
        let es = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin().exp()).unwrap();
        assert!((s.integrate(&es).unwrap() - bessel_i0(1.0)).abs() < 1e-10);
    }

    #[test]
    fn integrate_rejects_other_grids() {
        let s = Surface::flat(grid(32));
        let f = ScalarField::zeros(grid(16));
        assert!(matches!(s.integrate(&f), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn laplacian_of_fourier_mode() {
        let g = grid(32);
        let s = Surface::flat(g);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos()).unwrap();
        let lap = s.laplace_beltrami(&f).unwrap();
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a + 4.0 * PI * PI * b).abs() < 1e-11);
        }
        let c = ScalarField::constant(g, 2.5);
        assert!(s.laplace_beltrami(&c).unwrap().values().iter().all(|v| v.abs() < 1e-12));
    }

    /// Second-order finite differences of `e^{-phi} Delta f` converge to the spectral
    /// operator at rate `dx^2`.
    #[test]
    fn laplace_beltrami_matches_finite_differences() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let g = grid(n);
            let phi = ScalarField::from_fn(g, |_, y| 0.3 * (2.0 * PI * y).sin()).unwrap();
            let s = Surface::new(g, &phi).unwrap();
            let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos()).unwrap();
            let spec = s.laplace_beltrami(&f).unwrap();
            let dx = g.dx();
            let mut err: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let ip = (i + 1) % n;
                    let im = (i + n - 1) % n;
                    let jp = (j + 1) % n;
                    let jm = (j + n - 1) % n;
                    let fd = (f.at(ip, j) + f.at(im, j) + f.at(i, jp) + f.at(i, jm) - 4.0 * f.at(i, j))
                        / (dx * dx)
                        * (-s.phi().at(i, j)).exp();
                    err = err.max((fd - spec.at(i, j)).abs());
                }
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}, errs {errs:?}");
        }
    }

    #[test]
    fn gradient_energy_of_cosine() {
        let g = grid(32);
        let s = Surface::flat(g);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos()).unwrap();
        let d = s.grad_energy_density(&f).unwrap();
        for i in 0..32 {
            let x = g.coord(i);
            let want = 4.0 * PI * PI * (2.0 * PI * x).sin().powi(2);
            assert!((d.at(i, 5) - want).abs() < 1e-10);
        }
        assert!((s.integrate(&d).unwrap() - 2.0 * PI * PI).abs() < 1e-10);
        assert!((s.dirichlet_energy(&f).unwrap() - 2.0 * PI * PI).abs() < 1e-10);
        let c = ScalarField::constant(g, 1.0);
        assert!(s.grad_energy_density(&c).unwrap().max() < 1e-20);
    }

    #[test]
    fn curvature_of_cosine_factor() {
        let g = grid(64);
        let eps = 0.2;
        let phi = ScalarField::from_fn(g, |x, _| eps * (2.0 * PI * x).cos()).unwrap();
        let s = Surface::new(g, &phi).unwrap();
        let k = s.gauss_curvature();
        let shift = s.phi().at(0, 0) - phi.at(0, 0);
        for i in 0..64 {
            let x = g.coord(i);
            let p = eps * (2.0 * PI * x).cos() + shift;
            let want = 2.0 * PI * PI * eps * (-p).exp() * (2.0 * PI * x).cos();
            assert!((k.at(i, 7) - want).abs() < 1e-10);
        }
        assert!(Surface::flat(g).gauss_curvature().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn poisson_eigenfunction_and_solvability() {
        let g = grid(32);
        let s = Surface::flat(g);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos()).unwrap();
        let v = s.poisson_solve(&f).unwrap();
        for (a, b) in v.values().iter().zip(f.values()) {
            assert!((a - b / (4.0 * PI * PI)).abs() < 1e-14);
        }
        let bad = ScalarField::constant(g, 0.1);
        assert!(matches!(s.poisson_solve(&bad), Err(Error::Solvability { .. })));
    }

    #[test]
    fn sobolev_norms_closed_forms() {
        let g = grid(32);
        let s = Surface::flat(g);
        let z = s.sobolev_norms(&ScalarField::zeros(g)).unwrap();
        assert_eq!((z.l2, z.h1, z.h2), (0.0, 0.0, 0.0));
        let t = s.sobolev_norms(&ScalarField::constant(g, 3.0)).unwrap();
        for v in [t.l2, t.h1, t.h2] {
            assert!((v - 3.0).abs() < 1e-13);
        }
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos()).unwrap();
        let c = s.sobolev_norms(&f).unwrap();
        let p2 = PI * PI;
        assert!((c.l2 - 0.5f64.sqrt()).abs() < 1e-13);
        assert!((c.h1 - (0.5 + 2.0 * p2).sqrt()).abs() < 1e-11);
        assert!((c.h2 - (0.5 + 2.0 * p2 + 8.0 * p2 * p2).sqrt()).abs() < 1e-9);
    }
}
