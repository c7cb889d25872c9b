//! Preconditioned conjugate gradients for symmetric operators on grid vectors.

use crate::grid::pairwise_sum;

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `|b - A x| / |b|` at exit.
    pub relative_residual: f64,
    pub converged: bool,
    /// A direction with `p^T A p <= 0` was met: the operator is not positive definite.
    pub breakdown: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let t: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&t)
}

/// Solves `A x = b` from `x0` until `|r| <= tol |b|`.
pub(crate) fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let bnorm = dot(b, b).sqrt();
    let mut x = x0;
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            breakdown: false,
        };
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut k = 0;
    while rel > tol && k < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome {
                x,
                iterations: k,
                relative_residual: rel,
                converged: false,
                breakdown: true,
            };
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        k += 1;
        if rel <= tol {
            break;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        x,
        iterations: k,
        relative_residual: rel,
        converged: rel <= tol,
        breakdown: false,
    }
}
