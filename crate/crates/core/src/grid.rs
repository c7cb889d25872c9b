//! Periodic grids on the unit square torus and fields sampled on them.

use std::fmt;

use crate::error::{Error, Result};

/// Uniform periodic grid on `[0,1)^2` with `n` nodes per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub const MIN_SIZE: usize = 16;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_SIZE || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of nodes, `n * n`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Node `(i, j)` from a flat row-major index.
    #[inline]
    pub fn node(&self, idx: usize) -> (usize, usize) {
        (idx / self.n, idx % self.n)
    }

    /// Physical coordinate of node index `i` along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Minimal-image offset `x - c` on the unit circle, in `[-1/2, 1/2)`.
    #[inline]
    pub fn wrap(d: f64) -> f64 {
        d - (d + 0.5).floor()
    }

    /// Wrap an integer node offset into `[-n/2, n/2)`.
    #[inline]
    pub fn wrap_index(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }
}

impl TryFrom<usize> for Grid {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Grid::new(n)
    }
}

impl From<Grid> for usize {
    fn from(g: Grid) -> usize {
        g.n
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n, self.n)
    }
}

/// Real-valued samples on a grid, row-major; node `(i, j)` samples `(i dx, j dx)`.
///
/// Values are always finite. Extended-real data (such as the concentration
/// potential with `-inf` where the weight vanishes) lives in plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values for a {} grid, got {}",
                grid.len(),
                grid,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = grid.node(k);
            return Err(Error::InvalidField(format!(
                "non-finite value {} at node ({i}, {j})",
                values[k]
            )));
        }
        Ok(ScalarField { grid, values })
    }

    /// Wraps values produced by internal kernels that cannot introduce non-finite numbers
    /// from finite input.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    /// Samples `f(x1, x2)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = grid.n();
        let dx = grid.dx();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                values.push(f(i as f64 * dx, j as f64 * dx));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First node (row-major) attaining the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        self.grid.node(best)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_grid(other)?;
        Ok(Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add_scalar(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| v * c)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Result<ScalarField> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        check_grids(self.grid, other.grid)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_grids(a: Grid, b: Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    Ok(())
}

/// Pairwise (tree) summation; deterministic and accurate to `O(log n)` ulps.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if v.len() <= BLOCK {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}
