//! OTFS grid geometry, the delay-Doppler / time-frequency transforms and the
//! dense Kronecker form of the ISFFT.
//!
//! Flat-index conventions used across the crate:
//! * DD symbol `x[k, l]` (Doppler `k`, delay `l`) lives at `l + k * M`.
//! * TF symbol `X[n, m]` (time `n`, subcarrier `m`) lives at `m + n * M`.
//!
//! Both are plain row-major layouts of an `N x M` array, so a [`Frame`]'s
//! backing slice is already the vectorized form.

use std::f64::consts::PI;
use std::marker::PhantomData;
use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::SPEED_OF_LIGHT;

/// Default cap on `N * M` for dense matrix construction.
pub const DENSE_CAP: usize = 4096;

/// Condition numbers above this reject a reduced ISFFT system.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// OTFS burst geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Subsymbols per burst (Doppler bins).
    pub n: usize,
    /// Subcarriers (delay bins).
    pub m: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
}

impl FrameConfig {
    pub fn new(n: usize, m: usize, delta_f: f64, f_c: f64) -> Result<Self> {
        let cfg = Self { n, m, delta_f, f_c };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 5G NR FR2 numerology: N = 64, M = 128, 120 kHz spacing at 24.25 GHz.
    pub fn nr_fr2() -> Self {
        Self { n: 64, m: 128, delta_f: 120e3, f_c: 24.25e9 }
    }

    /// Same numerology as [`FrameConfig::nr_fr2`] on a reduced 16 x 32 grid.
    pub fn desk() -> Self {
        Self { n: 16, m: 32, ..Self::nr_fr2() }
    }

    pub fn with_grid(self, n: usize, m: usize) -> Self {
        Self { n, m, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be non-empty, got N = {}, M = {}",
                self.n, self.m
            )));
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "subcarrier spacing must be positive, got {}",
                self.delta_f
            )));
        }
        if !(self.f_c.is_finite() && self.f_c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "carrier frequency must be positive, got {}",
                self.f_c
            )));
        }
        Ok(())
    }

    /// Number of grid bins, `N * M`.
    pub fn bins(&self) -> usize {
        self.n * self.m
    }

    /// Subsymbol duration; `delta_t * delta_f == 1`.
    pub fn delta_t(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Doppler spacing `1 / (N * delta_t)`.
    pub fn delta_nu(&self) -> f64 {
        self.delta_f / self.n as f64
    }

    /// Delay spacing `1 / (M * delta_f)`.
    pub fn delta_tau(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    pub fn burst_duration(&self) -> f64 {
        self.n as f64 * self.delta_t()
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    /// Range resolution `c / (2 M delta_f)`.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth())
    }

    /// Unambiguous range `c / (2 delta_f)`.
    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.delta_f)
    }

    /// Velocity resolution `c / (2 N delta_t f_c)`.
    pub fn velocity_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.burst_duration() * self.f_c)
    }

    /// Unambiguous velocity span `c / (2 delta_t f_c)`.
    pub fn max_velocity(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.delta_t() * self.f_c)
    }

    /// Flat DD index of `x[k, l]`.
    pub fn dd_index(&self, k: usize, l: usize) -> usize {
        l + k * self.m
    }

    /// Flat TF index of `X[n, m]`.
    pub fn tf_index(&self, n: usize, m: usize) -> usize {
        m + n * self.m
    }
}

/// Marker for delay-Doppler frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayDoppler {}

/// Marker for time-frequency frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeFrequency {}

/// An `N x M` complex grid of symbols in one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<D> {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    _domain: PhantomData<D>,
}

/// DD frame: element `[k, l]`, Doppler row `k`, delay column `l`.
pub type DdFrame = Frame<DelayDoppler>;
/// TF frame: element `[n, m]`, time row `n`, subcarrier column `m`.
pub type TfFrame = Frame<TimeFrequency>;

impl<D> Frame<D> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![Complex64::new(0.0, 0.0); rows * cols])
    }

    pub fn zeros_like(cfg: &FrameConfig) -> Self {
        Self::zeros(cfg.n, cfg.m)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_mismatch(rows * cols, data.len()));
        }
        Ok(Self::from_vec_unchecked(rows, cols, data))
    }

    fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        Self { rows, cols, data, _domain: PhantomData }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_vec_unchecked(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Vectorized view (`col + row * cols`).
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|z| z * s).collect())
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: Complex64) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn check_dims(&self, cfg: &FrameConfig) -> Result<()> {
        if self.dims() != (cfg.n, cfg.m) {
            return Err(dim_mismatch(
                format!("{}x{}", cfg.n, cfg.m),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

impl<D> Index<(usize, usize)> for Frame<D> {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        assert!(r < self.rows && c < self.cols, "frame index out of bounds");
        &self.data[c + r * self.cols]
    }
}

impl<D> IndexMut<(usize, usize)> for Frame<D> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        assert!(r < self.rows && c < self.cols, "frame index out of bounds");
        &mut self.data[c + r * self.cols]
    }
}

/// In-place 2D FFT of a row-major `rows x cols` buffer with an independent
/// direction along each axis. Unnormalized.
pub(crate) fn fft2(
    data: &mut [Complex64],
    rows: usize,
    cols: usize,
    along_rows: FftDirection,
    along_cols: FftDirection,
) {
    let mut planner = FftPlanner::<f64>::new();
    // within each row (length `cols`)
    let row_fft = planner.plan_fft(cols, along_rows);
    row_fft.process(data);
    // within each column (length `rows`)
    let col_fft = planner.plan_fft(rows, along_cols);
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[c + r * cols];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[c + r * cols] = column[r];
        }
    }
}

/// ISFFT:
/// `X[n,m] = 1/(NM) sum_k sum_l x[k,l] exp(j2pi(kn/N - ml/M))`.
pub fn isfft(x: &DdFrame, cfg: &FrameConfig) -> Result<TfFrame> {
    x.check_dims(cfg)?;
    let mut data = x.as_slice().to_vec();
    fft2(&mut data, cfg.n, cfg.m, FftDirection::Forward, FftDirection::Inverse);
    let scale = 1.0 / cfg.bins() as f64;
    data.iter_mut().for_each(|z| *z *= scale);
    TfFrame::from_vec(cfg.n, cfg.m, data)
}

/// SFFT, the exact inverse of [`isfft`]:
/// `x[k,l] = sum_n sum_m X[n,m] exp(-j2pi(nk/N - ml/M))`.
pub fn sfft(y: &TfFrame, cfg: &FrameConfig) -> Result<DdFrame> {
    y.check_dims(cfg)?;
    let mut data = y.as_slice().to_vec();
    fft2(&mut data, cfg.n, cfg.m, FftDirection::Inverse, FftDirection::Forward);
    DdFrame::from_vec(cfg.n, cfg.m, data)
}

/// Single entry of the ISFFT matrix: row `m + nM`, column `l + kM`.
fn isfft_entry(cfg: &FrameConfig, (n, m): (usize, usize), (k, l): (usize, usize)) -> Complex64 {
    // reduce the exponent modulo one period before scaling to keep the phase exact
    let turns = ((k * n) % cfg.n) as f64 / cfg.n as f64 - ((m * l) % cfg.m) as f64 / cfg.m as f64;
    Complex64::from_polar(1.0 / cfg.bins() as f64, 2.0 * PI * turns)
}

/// Dense ISFFT matrix `G = (F_N^H kron F_M) / (NM)`, so that
/// `G * vec(x) == vec(isfft(x))` and `G^H G = I / (NM)`.
pub fn build_isfft_matrix(cfg: &FrameConfig) -> Result<DMatrix<Complex64>> {
    build_isfft_matrix_capped(cfg, DENSE_CAP)
}

pub fn build_isfft_matrix_capped(cfg: &FrameConfig, cap: usize) -> Result<DMatrix<Complex64>> {
    cfg.validate()?;
    let side = cfg.bins();
    if side > cap {
        return Err(Error::CapExceeded { side, cap });
    }
    Ok(DMatrix::from_fn(side, side, |row, col| {
        isfft_entry(cfg, (row / cfg.m, row % cfg.m), (col / cfg.m, col % cfg.m))
    }))
}

/// ISFFT matrix with a set of TF rows and DD columns removed, together with
/// an LU factorization for solving the reduced system.
#[derive(Debug, Clone)]
pub struct ReducedIsfftMatrix {
    cfg: FrameConfig,
    removed_rows: Vec<usize>,
    removed_cols: Vec<usize>,
    kept_rows: Vec<usize>,
    kept_cols: Vec<usize>,
    reduced: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

fn flat_indices(
    pairs: &[(usize, usize)],
    bounds: (usize, usize),
    what: &str,
    flat: impl Fn(usize, usize) -> usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        if a >= bounds.0 || b >= bounds.1 {
            return Err(Error::IndexOutOfRange(format!(
                "{what} bin ({a}, {b}) outside {}x{}",
                bounds.0, bounds.1
            )));
        }
        let idx = flat(a, b);
        if out.contains(&idx) {
            return Err(Error::DuplicateIndex(format!("{what} bin ({a}, {b})")));
        }
        out.push(idx);
    }
    Ok(out)
}

/// Condition number of the ISFFT matrix (unitary normalization) after
/// removing the given TF rows and DD columns.
///
/// By the CS decomposition this equals `1 / sigma_min` of the small block at
/// the removed rows and columns, so no dense matrix is formed and the check
/// works on grids of any size.
pub fn removal_condition(
    cfg: &FrameConfig,
    removed_tf: &[(usize, usize)],
    removed_dd: &[(usize, usize)],
) -> Result<f64> {
    cfg.validate()?;
    if removed_tf.len() != removed_dd.len() {
        return Err(dim_mismatch(
            format!("{} removed DD bins", removed_tf.len()),
            format!("{} removed DD bins", removed_dd.len()),
        ));
    }
    let rows = flat_indices(removed_tf, (cfg.n, cfg.m), "TF", |n, m| cfg.tf_index(n, m))?;
    let cols = flat_indices(removed_dd, (cfg.n, cfg.m), "DD", |k, l| cfg.dd_index(k, l))?;
    Ok(removal_block_condition(cfg, &rows, &cols))
}

fn removal_block_condition(cfg: &FrameConfig, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let scale = (cfg.bins() as f64).sqrt();
    let block = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let (r, c) = (rows[i], cols[j]);
        isfft_entry(cfg, (r / cfg.m, r % cfg.m), (c / cfg.m, c % cfg.m)) * scale
    });
    let sigma_min = block.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
    if sigma_min > 0.0 {
        1.0 / sigma_min
    } else {
        f64::INFINITY
    }
}

impl ReducedIsfftMatrix {
    /// Removes TF rows `removed_tf` (as `(n, m)`) and DD columns
    /// `removed_dd` (as `(k, l)`) from the ISFFT matrix.
    ///
    /// The reduced matrix's 2-norm condition number (in the unitary
    /// normalization) equals `1 / sigma_min` of the small block formed by the
    /// removed rows and columns, so it is computed exactly from that block.
    pub fn new(
        cfg: &FrameConfig,
        removed_tf: &[(usize, usize)],
        removed_dd: &[(usize, usize)],
    ) -> Result<Self> {
        cfg.validate()?;
        if removed_tf.len() != removed_dd.len() {
            return Err(dim_mismatch(
                format!("{} removed DD bins", removed_tf.len()),
                format!("{} removed DD bins", removed_dd.len()),
            ));
        }
        let side = cfg.bins();
        if side > DENSE_CAP {
            return Err(Error::CapExceeded { side, cap: DENSE_CAP });
        }
        let removed_rows = flat_indices(removed_tf, (cfg.n, cfg.m), "TF", |n, m| cfg.tf_index(n, m))?;
        let removed_cols = flat_indices(removed_dd, (cfg.n, cfg.m), "DD", |k, l| cfg.dd_index(k, l))?;

        let kept_rows: Vec<usize> = (0..side).filter(|i| !removed_rows.contains(i)).collect();
        let kept_cols: Vec<usize> = (0..side).filter(|i| !removed_cols.contains(i)).collect();

        let condition = removal_block_condition(cfg, &removed_rows, &removed_cols);
        if !(condition < SINGULAR_CONDITION) {
            return Err(Error::SingularMatrix { condition });
        }

        let reduced = DMatrix::from_fn(kept_rows.len(), kept_cols.len(), |i, j| {
            let (r, c) = (kept_rows[i], kept_cols[j]);
            isfft_entry(cfg, (r / cfg.m, r % cfg.m), (c / cfg.m, c % cfg.m))
        });
        let lu = reduced.clone().lu();
        Ok(Self {
            cfg: *cfg,
            removed_rows,
            removed_cols,
            kept_rows,
            kept_cols,
            reduced,
            lu,
            condition,
        })
    }

    pub fn side(&self) -> usize {
        self.kept_rows.len()
    }

    pub fn removed_rows(&self) -> &[usize] {
        &self.removed_rows
    }

    pub fn removed_cols(&self) -> &[usize] {
        &self.removed_cols
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.reduced
    }

    /// 2-norm condition number of the reduced matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Drops the removed TF rows from a full TF frame.
    pub fn keep_rows(&self, tf: &TfFrame) -> Result<DVector<Complex64>> {
        tf.check_dims(&self.cfg)?;
        let data = tf.as_slice();
        Ok(DVector::from_iterator(self.kept_rows.len(), self.kept_rows.iter().map(|&i| data[i])))
    }

    /// Places a reduced DD vector back on the grid with zeros at the removed columns.
    pub fn scatter_cols(&self, reduced_dd: &DVector<Complex64>) -> Result<DdFrame> {
        if reduced_dd.len() != self.kept_cols.len() {
            return Err(dim_mismatch(self.kept_cols.len(), reduced_dd.len()));
        }
        let mut frame = DdFrame::zeros_like(&self.cfg);
        let data = frame.as_mut_slice();
        for (&idx, v) in self.kept_cols.iter().zip(reduced_dd.iter()) {
            data[idx] = *v;
        }
        Ok(frame)
    }

    /// Keeps only the non-removed DD columns of a full DD frame.
    pub fn gather_cols(&self, dd: &DdFrame) -> Result<DVector<Complex64>> {
        dd.check_dims(&self.cfg)?;
        let data = dd.as_slice();
        Ok(DVector::from_iterator(self.kept_cols.len(), self.kept_cols.iter().map(|&i| data[i])))
    }

    /// Solves `C x = rhs` exactly.
    pub fn solve(&self, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if rhs.len() != self.side() {
            return Err(dim_mismatch(self.side(), rhs.len()));
        }
        self.lu
            .solve(rhs)
            .ok_or(Error::SingularMatrix { condition: self.condition })
    }

    /// Factorizes `C^H C + delta I` for Tikhonov-regularized solves.
    pub fn regularized(&self, delta: f64) -> Result<RegularizedReducedSolver> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidConfig(format!("regularization must be >= 0, got {delta}")));
        }
        let mut normal = self.reduced.ad_mul(&self.reduced);
        for i in 0..normal.nrows() {
            normal[(i, i)] += Complex64::new(delta, 0.0);
        }
        let chol = normal
            .cholesky()
            .ok_or(Error::SingularMatrix { condition: self.condition })?;
        Ok(RegularizedReducedSolver { adjoint: self.reduced.adjoint(), chol })
    }
}

/// Solves `min ||C x - b||^2 + delta ||x||^2` for a fixed reduced matrix.
#[derive(Debug, Clone)]
pub struct RegularizedReducedSolver {
    adjoint: DMatrix<Complex64>,
    chol: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
}

impl RegularizedReducedSolver {
    pub fn solve(&self, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if rhs.len() != self.adjoint.ncols() {
            return Err(dim_mismatch(self.adjoint.ncols(), rhs.len()));
        }
        Ok(self.chol.solve(&(&self.adjoint * rhs)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn derived_spacings() {
        let cfg = FrameConfig::nr_fr2();
        assert!((cfg.delta_t() * cfg.delta_f - 1.0).abs() < 1e-15);
        assert!((cfg.delta_nu() * cfg.n as f64 * cfg.delta_t() - 1.0).abs() < 1e-12);
        assert!((cfg.delta_tau() * cfg.m as f64 * cfg.delta_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_config() {
        assert!(FrameConfig::new(0, 4, 1.0, 1.0).is_err());
        assert!(FrameConfig::new(4, 4, -1.0, 1.0).is_err());
        assert!(FrameConfig::new(4, 4, 1.0, 0.0).is_err());
    }

    #[test]
    fn impulse_spreads_uniformly() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let mut x = DdFrame::zeros_like(&cfg);
        x[(0, 0)] = c(1.0, 0.0);
        let tf = isfft(&x, &cfg).unwrap();
        for z in tf.as_slice() {
            assert!((z - c(1.0 / 16.0, 0.0)).norm() < 1e-15);
        }
        let back = sfft(&tf, &cfg).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn all_ones_concentrates_at_origin() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let x = DdFrame::from_fn(4, 4, |_, _| c(1.0, 0.0));
        let tf = isfft(&x, &cfg).unwrap();
        assert!((tf[(0, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        for (i, z) in tf.as_slice().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-14, "bin {i} = {z}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let x = DdFrame::zeros(4, 8);
        assert!(matches!(isfft(&x, &cfg), Err(Error::DimensionMismatch { .. })));
        let y = TfFrame::zeros(2, 4);
        assert!(matches!(sfft(&y, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn two_point_dft_for_single_subsymbol() {
        let cfg = FrameConfig::nr_fr2().with_grid(1, 2);
        let g = build_isfft_matrix(&cfg).unwrap();
        let expected = [[0.5, 0.5], [0.5, -0.5]];
        for r in 0..2 {
            for col in 0..2 {
                assert!((g[(r, col)] - c(expected[r][col], 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn dense_matrix_cap() {
        let cfg = FrameConfig::nr_fr2();
        assert!(matches!(build_isfft_matrix(&cfg), Err(Error::CapExceeded { side: 8192, .. })));
    }

    #[test]
    fn reduced_matrix_without_removal_is_g() {
        let cfg = FrameConfig::nr_fr2().with_grid(2, 2);
        let red = ReducedIsfftMatrix::new(&cfg, &[], &[]).unwrap();
        let g = build_isfft_matrix(&cfg).unwrap();
        assert!((red.matrix() - g).norm() < 1e-15);
        assert_eq!(red.condition(), 1.0);
    }

    #[test]
    fn reduced_matrix_small_is_invertible() {
        let cfg = FrameConfig::nr_fr2().with_grid(2, 2);
        let red = ReducedIsfftMatrix::new(&cfg, &[(0, 0)], &[(1, 1)]).unwrap();
        assert_eq!(red.side(), 3);
        // direct check: the explicit inverse exists and the determinant is not tiny
        let det = red.matrix().determinant();
        assert!(det.norm() > 1e-6, "det = {det}");
        assert!(red.condition() < 10.0);
    }

    #[test]
    fn reduced_matrix_rejects_bad_indices() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        assert!(matches!(
            ReducedIsfftMatrix::new(&cfg, &[(4, 0)], &[(0, 0)]),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(matches!(
            ReducedIsfftMatrix::new(&cfg, &[(1, 1), (1, 1)], &[(0, 0), (2, 2)]),
            Err(Error::DuplicateIndex(_))
        ));
        assert!(matches!(
            ReducedIsfftMatrix::new(&cfg, &[(1, 1)], &[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn diagonal_removal_on_square_grid_is_singular() {
        // with N == M every entry of the removed block is exp(j2pi nk(1/N - 1/M)) = 1
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let diag = [(0, 0), (1, 1), (2, 2)];
        assert!(matches!(
            ReducedIsfftMatrix::new(&cfg, &diag, &diag),
            Err(Error::SingularMatrix { .. })
        ));
    }
}
