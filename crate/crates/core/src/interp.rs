//! Periodic interpolation of node-sampled fields at arbitrary points.

use crate::grid::ScalarField;

/// Integer cell and fractional offset of coordinate `x` (in grid cells).
#[inline]
fn split(x: f64, n: usize) -> (isize, f64) {
    let t = x * n as f64;
    let i = t.floor();
    (i as isize, t - i)
}

pub fn bilinear(f: &ScalarField, p: [f64; 2]) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let (i, ti) = split(p[0], n);
    let (j, tj) = split(p[1], n);
    let i0 = grid.wrap_index(i);
    let i1 = grid.wrap_index(i + 1);
    let j0 = grid.wrap_index(j);
    let j1 = grid.wrap_index(j + 1);
    (1.0 - ti) * ((1.0 - tj) * f.at(i0, j0) + tj * f.at(i0, j1))
        + ti * ((1.0 - tj) * f.at(i1, j0) + tj * f.at(i1, j1))
}

/// Cubic Lagrange weights on nodes `-1, 0, 1, 2` at offset `t` in `[0, 1)`.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Tensor-product cubic interpolation on the 4x4 stencil; exact for bicubic
/// polynomials and fourth-order accurate for smooth fields.
pub fn bicubic(f: &ScalarField, p: [f64; 2]) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let (i, ti) = split(p[0], n);
    let (j, tj) = split(p[1], n);
    let wi = cubic_weights(ti);
    let wj = cubic_weights(tj);
    let mut acc = 0.0;
    for (a, wa) in wi.iter().enumerate() {
        let ii = grid.wrap_index(i + a as isize - 1);
        let mut row = 0.0;
        for (b, wb) in wj.iter().enumerate() {
            row += wb * f.at(ii, grid.wrap_index(j + b as isize - 1));
        }
        acc += wa * row;
    }
    acc
}
