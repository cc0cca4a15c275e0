//! Coarse target estimation with the physical receive array.
//!
//! Angles come from a DFT across the receive antennas, accumulated over all
//! DD bins. For each detected angle the DD angle profile is recovered with a
//! matched beamformer and circularly cross-correlated against the profile
//! predicted from the known transmit frames; correlation peaks give the
//! Doppler and delay indices.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{tx_beam, ArrayConfig};
use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{fft2, DdFrame, FrameConfig};

/// Peak-picking rule shared by the angle spectrum and the 2D correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    /// Peaks below this fraction of the maximum are discarded.
    pub relative_threshold: f64,
    pub max_peaks: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self { relative_threshold: 0.15, max_peaks: 8 }
    }
}

/// Receive-array spatial spectrum averaged over all DD bins.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSpectrum {
    /// Normalized to a maximum of 1 (all zeros for an all-zero input).
    pub magnitudes: Vec<f64>,
    pub rx_spacing_m: f64,
    pub wavelength: f64,
}

impl AngleSpectrum {
    pub fn n_fft(&self) -> usize {
        self.magnitudes.len()
    }

    /// Signed spatial frequency of bin `b`, in `[-0.5, 0.5)`.
    pub fn bin_to_omega(&self, bin: usize) -> f64 {
        let n = self.n_fft() as f64;
        let b = bin as f64;
        if 2 * bin >= self.n_fft() {
            (b - n) / n
        } else {
            b / n
        }
    }

    /// Angle in degrees of bin `b`, or `None` when the spatial frequency has
    /// no physical angle for this spacing.
    pub fn bin_to_angle(&self, bin: usize) -> Option<f64> {
        omega_to_angle(self.bin_to_omega(bin), self.rx_spacing_m, self.wavelength)
    }
}

pub fn omega_to_angle(omega: f64, spacing_m: f64, wavelength: f64) -> Option<f64> {
    let s = omega * wavelength / spacing_m;
    (s.abs() <= 1.0).then(|| s.asin().to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePeak {
    pub bin: usize,
    pub omega: f64,
    pub theta_deg: f64,
    /// Normalized spectrum value at the peak.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    pub spectrum: AngleSpectrum,
    pub peaks: Vec<AnglePeak>,
}

/// DFT angle estimation across the receive array.
///
/// For every DD bin the length-`N_r` snapshot is transformed with an
/// `n_fft`-point DFT using the kernel `exp(+j2pi nr b / n_fft)`, so a source
/// with spatial frequency `w` peaks at `b = w * n_fft`.
pub fn estimate_angles(
    rx: &[DdFrame],
    n_fft: usize,
    peaks: &PeakConfig,
    arrays: &ArrayConfig,
    cfg: &FrameConfig,
) -> Result<AngleEstimate> {
    if rx.is_empty() {
        return Err(Error::InvalidConfig("no receive frames".into()));
    }
    if rx.len() < 2 {
        return Err(Error::InvalidConfig(format!("angle estimation needs N_r >= 2, got {}", rx.len())));
    }
    if n_fft < rx.len() {
        return Err(Error::InvalidConfig(format!("n_fft = {n_fft} < N_r = {}", rx.len())));
    }
    rx.iter().try_for_each(|f| f.check_dims(cfg))?;

    let fft = FftPlanner::<f64>::new().plan_fft(n_fft, FftDirection::Inverse);
    let mut acc = vec![0.0; n_fft];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for bin in 0..cfg.bins() {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (nr, frame) in rx.iter().enumerate() {
            buf[nr] = frame.as_slice()[bin];
        }
        fft.process(&mut buf);
        for (a, z) in acc.iter_mut().zip(&buf) {
            *a += z.norm_sqr();
        }
    }
    let max = acc.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        acc.iter_mut().for_each(|a| *a /= max);
    }
    let spectrum = AngleSpectrum {
        magnitudes: acc,
        rx_spacing_m: arrays.rx_spacing_m,
        wavelength: cfg.wavelength(),
    };
    let peaks = pick_peaks_1d(&spectrum.magnitudes, peaks)
        .into_iter()
        .filter_map(|bin| {
            spectrum.bin_to_angle(bin).map(|theta_deg| AnglePeak {
                bin,
                omega: spectrum.bin_to_omega(bin),
                theta_deg,
                power: spectrum.magnitudes[bin],
            })
        })
        .collect();
    Ok(AngleEstimate { spectrum, peaks })
}

/// Circular local maxima above the relative threshold, strongest first.
pub fn pick_peaks_1d(values: &[f64], cfg: &PeakConfig) -> Vec<usize> {
    let n = values.len();
    let max = values.iter().copied().fold(0.0, f64::max);
    if n == 0 || max <= 0.0 {
        return Vec::new();
    }
    let mut found: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = values[i];
            let left = values[(i + n - 1) % n];
            let right = values[(i + 1) % n];
            v >= cfg.relative_threshold * max && (n == 1 || (v >= left && v > right))
        })
        .collect();
    found.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    found.truncate(cfg.max_peaks);
    found
}

/// Circular 8-neighborhood local maxima of a row-major `rows x cols` surface.
pub fn pick_peaks_2d(values: &[f64], rows: usize, cols: usize, cfg: &PeakConfig) -> Vec<(usize, usize)> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if values.is_empty() || max <= 0.0 {
        return Vec::new();
    }
    let at = |r: usize, c: usize| values[c + r * cols];
    let mut found = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = at(r, c);
            if v < cfg.relative_threshold * max {
                continue;
            }
            let mut is_peak = true;
            'nbr: for dr in [rows - 1, 0, 1] {
                for dc in [cols - 1, 0, 1] {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = ((r + dr) % rows, (c + dc) % cols);
                    if (rr, cc) == (r, c) {
                        continue;
                    }
                    let w = at(rr, cc);
                    // ties resolve to the first cell in raster order
                    if w > v || (w == v && (rr, cc) < (r, c)) {
                        is_peak = false;
                        break 'nbr;
                    }
                }
            }
            if is_peak {
                found.push((r, c));
            }
        }
    }
    found.sort_by(|&a, &b| at(b.0, b.1).total_cmp(&at(a.0, a.1)));
    found.truncate(cfg.max_peaks);
    found
}

/// Matched beamformer output at spatial frequency `omega`:
/// `A[k,l] = (1/N_r) sum_nr y_nr[k,l] exp(+j2pi nr omega)`.
pub fn extract_angle_profile(rx: &[DdFrame], omega: f64) -> Result<DdFrame> {
    let first = rx.first().ok_or_else(|| Error::InvalidConfig("no receive frames".into()))?;
    let (n, m) = first.dims();
    let mut out = DdFrame::zeros(n, m);
    let scale = 1.0 / rx.len() as f64;
    for (nr, y) in rx.iter().enumerate() {
        if y.dims() != (n, m) {
            return Err(dim_mismatch(format!("{n}x{m}"), format!("{}x{}", y.rows(), y.cols())));
        }
        out.add_scaled(y, Complex64::from_polar(scale, 2.0 * PI * nr as f64 * omega));
    }
    Ok(out)
}

/// Angle profile predicted from the transmit frames:
/// `A'[k,l] = sum_nt exp(-j2pi nt g_t sin(theta)/lambda) x_nt[k,l]`.
pub fn build_a_prime(tx: &[DdFrame], theta_deg: f64, arrays: &ArrayConfig, cfg: &FrameConfig) -> Result<DdFrame> {
    if tx.len() != arrays.n_t {
        return Err(dim_mismatch(arrays.n_t, tx.len()));
    }
    tx.iter().try_for_each(|f| f.check_dims(cfg))?;
    Ok(tx_beam(tx, theta_deg, arrays, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdPeak {
    pub k: usize,
    pub l: usize,
    /// Correlation magnitude normalized by the energy of `A'`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub rows: usize,
    pub cols: usize,
    /// `|c[a, b]| / ||A'||^2`, row-major.
    pub surface: Vec<f64>,
    pub peaks: Vec<DdPeak>,
}

/// Circular cross-correlation `c[a,b] = sum_{k,l} A[k,l] conj(A'[k-a, l-b])`
/// computed with 2D FFTs, then peak-picked.
pub fn correlate_2d(a_hat: &DdFrame, a_prime: &DdFrame, peaks: &PeakConfig) -> Result<Correlation> {
    if a_hat.dims() != a_prime.dims() {
        return Err(dim_mismatch(
            format!("{}x{}", a_prime.rows(), a_prime.cols()),
            format!("{}x{}", a_hat.rows(), a_hat.cols()),
        ));
    }
    let (rows, cols) = a_hat.dims();
    let surface = circular_xcorr_magnitude(a_hat, a_prime);
    let found = pick_peaks_2d(&surface, rows, cols, peaks)
        .into_iter()
        .map(|(k, l)| DdPeak { k, l, score: surface[l + k * cols] })
        .collect();
    Ok(Correlation { rows, cols, surface, peaks: found })
}

fn circular_xcorr_magnitude(a: &DdFrame, b: &DdFrame) -> Vec<f64> {
    let (rows, cols) = a.dims();
    let mut fa = a.as_slice().to_vec();
    let mut fb = b.as_slice().to_vec();
    fft2(&mut fa, rows, cols, FftDirection::Forward, FftDirection::Forward);
    fft2(&mut fb, rows, cols, FftDirection::Forward, FftDirection::Forward);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    fft2(&mut fa, rows, cols, FftDirection::Inverse, FftDirection::Inverse);
    let energy = b.energy();
    let scale = if energy > 0.0 { 1.0 / (energy * (rows * cols) as f64) } else { 0.0 };
    fa.iter().map(|z| z.norm() * scale).collect()
}

/// Number of cells of the circular autocorrelation of `a_prime` at or
/// above half its peak. Reported as a resolvability diagnostic.
pub fn autocorrelation_mainlobe(a_prime: &DdFrame) -> usize {
    let surface = circular_xcorr_magnitude(a_prime, a_prime);
    let max = surface.iter().copied().fold(0.0, f64::max);
    surface.iter().filter(|&&v| max > 0.0 && v >= 0.5 * max).count()
}

/// Signed Doppler index in `[-N/2, N/2)` of grid row `k`.
pub fn signed_doppler(k: usize, n: usize) -> i64 {
    if 2 * k >= n {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

/// Range (m) and velocity (m/s) of a DD grid point.
pub fn indices_to_physical(k: usize, l: usize, cfg: &FrameConfig) -> (f64, f64) {
    (
        l as f64 * cfg.range_resolution(),
        signed_doppler(k, cfg.n) as f64 * cfg.velocity_resolution(),
    )
}

/// One coarse target hypothesis: an angle peak paired with a correlation peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseEstimate {
    pub theta_deg: f64,
    pub omega: f64,
    pub angle_bin: usize,
    /// Grid Doppler row (`0..N`).
    pub k: usize,
    /// Signed Doppler index.
    pub doppler_bin: i64,
    pub l: usize,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub peak_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseParams {
    /// DFT length across the receive array; 0 means `N_r`.
    pub n_fft: usize,
    pub angle_peaks: PeakConfig,
    pub dd_peaks: PeakConfig,
    /// Also correlate at this many DFT bins on each side of every angle
    /// peak, so targets merged into one peak still yield Doppler/delay
    /// candidates. Duplicate `(k, l)` keep their best-scoring angle.
    pub neighbour_bins: usize,
}

impl Default for CoarseParams {
    fn default() -> Self {
        Self { n_fft: 0, angle_peaks: PeakConfig::default(), dd_peaks: PeakConfig::default(), neighbour_bins: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct CoarseResult {
    pub angles: AngleEstimate,
    /// One correlation surface per detected angle, in the same order.
    pub correlations: Vec<Correlation>,
    pub estimates: Vec<CoarseEstimate>,
}

/// Full coarse pipeline: angle DFT, then per-angle 2D correlation.
pub fn coarse_estimate(
    rx: &[DdFrame],
    tx: &[DdFrame],
    arrays: &ArrayConfig,
    cfg: &FrameConfig,
    params: &CoarseParams,
) -> Result<CoarseResult> {
    let n_fft = if params.n_fft == 0 { rx.len() } else { params.n_fft };
    let angles = estimate_angles(rx, n_fft, &params.angle_peaks, arrays, cfg)?;
    let mut correlations = Vec::with_capacity(angles.peaks.len());
    let mut estimates = Vec::new();
    let spectrum = &angles.spectrum;
    let reach = params.neighbour_bins.min(n_fft / 2) as i64;
    for peak in &angles.peaks {
        for offset in -reach..=reach {
            let bin = (peak.bin as i64 + offset).rem_euclid(n_fft as i64) as usize;
            let Some(theta_deg) = spectrum.bin_to_angle(bin) else { continue };
            let omega = spectrum.bin_to_omega(bin);
            let a_hat = extract_angle_profile(rx, omega)?;
            let a_prime = build_a_prime(tx, theta_deg, arrays, cfg)?;
            let corr = correlate_2d(&a_hat, &a_prime, &params.dd_peaks)?;
            for p in &corr.peaks {
                let (range_m, velocity_mps) = indices_to_physical(p.k, p.l, cfg);
                let e = CoarseEstimate {
                    theta_deg,
                    omega,
                    angle_bin: bin,
                    k: p.k,
                    doppler_bin: signed_doppler(p.k, cfg.n),
                    l: p.l,
                    range_m,
                    velocity_mps,
                    peak_score: p.score,
                };
                match estimates.iter_mut().find(|o: &&mut CoarseEstimate| (o.k, o.l) == (e.k, e.l)) {
                    Some(o) if o.peak_score < e.peak_score => *o = e,
                    Some(_) => {}
                    None => estimates.push(e),
                }
            }
            if offset == 0 {
                correlations.push(corr);
            }
        }
    }
    Ok(CoarseResult { angles, correlations, estimates })
}
