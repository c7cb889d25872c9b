//! 2-D periodic FFT kernels on square grids.
//!
//! Fields are real, so only the half spectrum `k2 in 0..=n/2` is stored, laid out
//! as `hat[b * n + a]` for second-axis index `b` and first-axis index `a`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Grids at least this large transform their rows in parallel.
const PARALLEL_SIZE: usize = 256;

/// Planned transforms plus wavenumber tables for one grid size.
pub(crate) struct Spectral {
    n: usize,
    /// Half-spectrum width `n/2 + 1`.
    m: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Integer wavenumber per index, `{0, .., n/2-1, -n/2, .., -1}`.
    k: Vec<f64>,
    /// Wavenumber used for first derivatives; the Nyquist entry is zeroed
    /// so derivatives of real fields stay real.
    kd: Vec<f64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

fn transpose<T: Copy + Default>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl Spectral {
    pub(crate) fn new(grid: Grid) -> Self {
        let n = grid.n();
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|i| if i < n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        let mut kd = k.clone();
        kd[n / 2] = 0.0;
        Spectral {
            n,
            m: n / 2 + 1,
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            fwd: complex.plan_fft_forward(n),
            inv: complex.plan_fft_inverse(n),
            k,
            kd,
        }
    }

    fn rows_r2c(&self, values: &[f64]) -> Vec<Complex64> {
        let (n, m) = (self.n, self.m);
        let mut out = vec![Complex64::default(); n * m];
        let run = |(src, dst): (&[f64], &mut [Complex64])| {
            let mut input = src.to_vec();
            self.r2c.process(&mut input, dst).expect("buffer sizes match the plan");
        };
        if n >= PARALLEL_SIZE {
            values.par_chunks(n).zip(out.par_chunks_mut(m)).for_each(run);
        } else {
            values.chunks(n).zip(out.chunks_mut(m)).for_each(run);
        }
        out
    }

    fn rows_c2r(&self, mut half: Vec<Complex64>) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = vec![0.0; n * n];
        // The zero and Nyquist bins carry rounding-level imaginary parts, which the
        // inverse discards; that is the projection onto real fields we want.
        let run = |(src, dst): (&mut [Complex64], &mut [f64])| {
            let _ = self.c2r.process(src, dst);
        };
        if n >= PARALLEL_SIZE {
            half.par_chunks_mut(m).zip(out.par_chunks_mut(n)).for_each(run);
        } else {
            half.chunks_mut(m).zip(out.chunks_mut(n)).for_each(run);
        }
        out
    }

    fn columns(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        if n >= PARALLEL_SIZE {
            buf.par_chunks_mut(n).for_each(|row| plan.process(row));
        } else {
            plan.process(buf);
        }
    }

    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let rows = self.rows_r2c(values);
        let mut hat = transpose(&rows, self.n, self.m);
        self.columns(&mut hat, &self.fwd);
        hat
    }

    /// Inverse of [`Spectral::forward`], normalized by `1/n^2`.
    pub(crate) fn inverse_real(&self, mut hat: Vec<Complex64>) -> Vec<f64> {
        self.columns(&mut hat, &self.inv);
        let rows = transpose(&hat, self.m, self.n);
        let norm = 1.0 / (self.n * self.n) as f64;
        let mut out = self.rows_c2r(rows);
        out.iter_mut().for_each(|v| *v *= norm);
        out
    }

    /// Splits a half-spectrum index into (first-axis, second-axis) indices.
    #[inline]
    fn modes(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    /// `(2 pi)^2 |k|^2` at half-spectrum index `idx`, i.e. the symbol of `-Delta`.
    #[inline]
    pub(crate) fn neg_laplacian_symbol(&self, idx: usize) -> f64 {
        let (a, b) = self.modes(idx);
        4.0 * PI * PI * (self.k[a] * self.k[a] + self.k[b] * self.k[b])
    }

    pub(crate) fn apply_symbol(&self, values: &[f64], symbol: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut hat = self.forward(values);
        for (idx, c) in hat.iter_mut().enumerate() {
            *c *= symbol(idx);
        }
        self.inverse_real(hat)
    }

    /// Flat Laplacian `sum_k -4 pi^2 |k|^2 f_k e^{2 pi i k.x}`.
    pub(crate) fn laplacian(&self, values: &[f64]) -> Vec<f64> {
        self.apply_symbol(values, |idx| -self.neg_laplacian_symbol(idx))
    }

    /// Flat gradient `(d/dx1, d/dx2)`.
    pub(crate) fn gradient(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hat = self.forward(values);
        let mut h1 = hat.clone();
        let mut h2 = hat;
        for idx in 0..h1.len() {
            let (a, b) = self.modes(idx);
            h1[idx] *= Complex64::new(0.0, 2.0 * PI * self.kd[a]);
            h2[idx] *= Complex64::new(0.0, 2.0 * PI * self.kd[b]);
        }
        (self.inverse_real(h1), self.inverse_real(h2))
    }

    /// Solution of `(c - Delta) v = f`; with `c == 0` the zero mode is dropped,
    /// giving the mean-zero solution.
    pub(crate) fn shifted_inverse(&self, values: &[f64], c: f64) -> Vec<f64> {
        self.apply_symbol(values, |idx| {
            if idx == 0 && c == 0.0 {
                0.0
            } else {
                1.0 / (c + self.neg_laplacian_symbol(idx))
            }
        })
    }

    /// `sum_k 4 pi^2 |k|^2 |f_k|^2 / n^4`, which equals `-int f Delta f dx`.
    pub(crate) fn dirichlet_form(&self, values: &[f64]) -> f64 {
        let hat = self.forward(values);
        let n = self.n;
        let n4 = ((n * n) as f64).powi(2);
        let terms: Vec<f64> = hat
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let b = idx / n;
                // Columns other than 0 and n/2 stand for a conjugate pair.
                let mult = if b == 0 || b == n / 2 { 1.0 } else { 2.0 };
                mult * self.neg_laplacian_symbol(idx) * c.norm_sqr()
            })
            .collect();
        crate::grid::pairwise_sum(&terms) / n4
    }
}
