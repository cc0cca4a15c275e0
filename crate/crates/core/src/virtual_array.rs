//! Private time-frequency bins and the virtual array they create.
//!
//! A private bin is a TF cell that only one transmit antenna uses; every
//! other antenna nulls it. The receive samples on that cell therefore carry
//! a single transmit antenna's contribution, and stacking the per-bin
//! snapshots across receive antennas forms a virtual array whose steering
//! depends on angle, Doppler and delay. Targets are recovered from the
//! stacked snapshot by sparse recovery over a discretized target space.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{dd_phase, ArrayConfig};
use crate::coarse::{build_a_prime, correlate_2d, extract_angle_profile, omega_to_angle, CoarseEstimate, PeakConfig};
use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{isfft, removal_condition, DdFrame, FrameConfig, ReducedIsfftMatrix, TfFrame, SINGULAR_CONDITION};
use crate::ssr::{solve_ssr, SsrParams, SsrSolution};

/// Default cap on the number of dictionary atoms.
pub const GRID_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateBin {
    pub antenna: usize,
    pub n: usize,
    pub m: usize,
}

/// Assignment of private TF bins to transmit antennas and the DD zeros that
/// keep each antenna's symbols recoverable after nulling.
///
/// Antenna `p` nulls every private bin it does not own and places one DD zero
/// per nulled bin, so owners carry `N_p - 1` zeros and the remaining antennas
/// `N_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateBinPlan {
    n_t: usize,
    bins: Vec<PrivateBin>,
    dd_zeros: Vec<Vec<(usize, usize)>>,
    probe: Option<Complex64>,
}

impl PrivateBinPlan {
    /// No private bins: every antenna uses the full grid.
    pub fn all_shared(n_t: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::InvalidConfig("N_t must be >= 1".into()));
        }
        Ok(Self { n_t, bins: Vec::new(), dd_zeros: vec![Vec::new(); n_t], probe: None })
    }

    /// Private bin `i` at TF cell `(i, i)` owned by antenna `i`; DD zeros on
    /// the diagonal `(0, 0), (1, 1), ...`.
    pub fn diagonal(cfg: &FrameConfig, n_t: usize, n_p: usize) -> Result<Self> {
        if n_p == 0 {
            return Self::all_shared(n_t);
        }
        if n_p > n_t {
            return Err(Error::InvalidConfig(format!("N_p = {n_p} exceeds N_t = {n_t}")));
        }
        let side = cfg.n.min(cfg.m);
        if n_p > side {
            return Err(Error::InvalidConfig(format!("N_p = {n_p} exceeds min(N, M) = {side}")));
        }
        let bins = (0..n_p).map(|i| PrivateBin { antenna: i, n: i, m: i }).collect();
        let dd_zeros = (0..n_t)
            .map(|p| {
                let count = if p < n_p { n_p - 1 } else { n_p };
                (0..count).map(|i| (i, i)).collect()
            })
            .collect();
        Self::custom(cfg, n_t, bins, dd_zeros)
    }

    /// Validated arbitrary placement.
    pub fn custom(
        cfg: &FrameConfig,
        n_t: usize,
        bins: Vec<PrivateBin>,
        dd_zeros: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_t == 0 {
            return Err(Error::InvalidConfig("N_t must be >= 1".into()));
        }
        if bins.len() > n_t {
            return Err(Error::InvalidConfig(format!("N_p = {} exceeds N_t = {n_t}", bins.len())));
        }
        if dd_zeros.len() != n_t {
            return Err(dim_mismatch(format!("{n_t} DD zero lists"), dd_zeros.len()));
        }
        for (i, b) in bins.iter().enumerate() {
            if b.antenna >= n_t {
                return Err(Error::IndexOutOfRange(format!("antenna {} of {n_t}", b.antenna)));
            }
            if b.n >= cfg.n || b.m >= cfg.m {
                return Err(Error::IndexOutOfRange(format!("TF bin ({}, {})", b.n, b.m)));
            }
            for other in &bins[..i] {
                if (other.n, other.m) == (b.n, b.m) {
                    return Err(Error::DuplicateIndex(format!("private TF bin ({}, {})", b.n, b.m)));
                }
                if other.antenna == b.antenna {
                    return Err(Error::DuplicateIndex(format!("antenna {} owns two private bins", b.antenna)));
                }
            }
        }
        let plan = Self { n_t, bins, dd_zeros, probe: None };
        for p in 0..n_t {
            let nulled = plan.nulled_bins(p);
            if plan.dd_zeros[p].len() != nulled.len() {
                return Err(dim_mismatch(
                    format!("{} DD zeros on antenna {p}", nulled.len()),
                    plan.dd_zeros[p].len(),
                ));
            }
            let condition = removal_condition(cfg, &nulled, &plan.dd_zeros[p])?;
            if !(condition < SINGULAR_CONDITION) {
                return Err(Error::SingularMatrix { condition });
            }
        }
        Ok(plan)
    }

    /// Replace each owner's own private-bin value with a fixed known symbol
    /// after the ISFFT. The overwritten bin no longer carries information, so
    /// each owner gets one more DD zero (the first free diagonal cell) to
    /// keep its symbols recoverable.
    pub fn with_probe(mut self, cfg: &FrameConfig, probe: Complex64) -> Result<Self> {
        if probe.norm() == 0.0 || !probe.re.is_finite() || !probe.im.is_finite() {
            return Err(Error::InvalidConfig("probe symbol must be finite and nonzero".into()));
        }
        if self.probe.is_none() {
            for b in self.bins.clone() {
                let zeros = &mut self.dd_zeros[b.antenna];
                let free = (0..cfg.n.min(cfg.m))
                    .map(|i| (i, i))
                    .find(|z| !zeros.contains(z))
                    .ok_or_else(|| Error::InvalidConfig("no free DD cell for the probe reserve".into()))?;
                zeros.push(free);
            }
        }
        self.probe = Some(probe);
        for b in &self.bins {
            let condition = removal_condition(cfg, &self.removed_tf_bins(b.antenna), &self.dd_zeros[b.antenna])?;
            if !(condition < SINGULAR_CONDITION) {
                return Err(Error::SingularMatrix { condition });
            }
        }
        Ok(self)
    }

    /// [`Self::with_probe`] with [`Self::rms_probe`] when `enable` is set.
    pub fn probed(self, cfg: &FrameConfig, enable: bool) -> Result<Self> {
        if enable && self.n_p() > 0 {
            self.with_probe(cfg, Self::rms_probe(cfg))
        } else {
            Ok(self)
        }
    }

    /// Probe equal to the RMS TF amplitude `1/sqrt(NM)` of a unit-power DD frame.
    pub fn rms_probe(cfg: &FrameConfig) -> Complex64 {
        Complex64::new(1.0 / (cfg.bins() as f64).sqrt(), 0.0)
    }

    pub fn probe(&self) -> Option<Complex64> {
        self.probe
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_p(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[PrivateBin] {
        &self.bins
    }

    pub fn own_bin(&self, antenna: usize) -> Option<PrivateBin> {
        self.bins.iter().copied().find(|b| b.antenna == antenna)
    }

    /// Private bins that `antenna` transmits zero on.
    pub fn nulled_bins(&self, antenna: usize) -> Vec<(usize, usize)> {
        self.bins.iter().filter(|b| b.antenna != antenna).map(|b| (b.n, b.m)).collect()
    }

    /// TF bins whose transmitted value does not follow from `antenna`'s DD
    /// symbols: the nulled bins and, with a probe, its own private bin.
    pub fn removed_tf_bins(&self, antenna: usize) -> Vec<(usize, usize)> {
        let mut out = self.nulled_bins(antenna);
        if let (Some(_), Some(own)) = (self.probe, self.own_bin(antenna)) {
            out.push((own.n, own.m));
        }
        out
    }

    pub fn dd_zeros(&self, antenna: usize) -> &[(usize, usize)] {
        &self.dd_zeros[antenna]
    }

    pub fn info_symbols(&self, antenna: usize, cfg: &FrameConfig) -> usize {
        cfg.bins() - self.dd_zeros[antenna].len()
    }

    pub fn total_info_symbols(&self, cfg: &FrameConfig) -> usize {
        (0..self.n_t).map(|p| self.info_symbols(p, cfg)).sum()
    }

    /// Reduced ISFFT system for recovering `antenna`'s DD symbols from its
    /// transmitted TF frame.
    pub fn reduced_matrix(&self, antenna: usize, cfg: &FrameConfig) -> Result<ReducedIsfftMatrix> {
        ReducedIsfftMatrix::new(cfg, &self.removed_tf_bins(antenna), &self.dd_zeros[antenna])
    }
}

/// File form of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanSpec {
    Shared,
    Diagonal {
        n_p: usize,
        /// Overwrite owned bins with [`PrivateBinPlan::rms_probe`].
        #[serde(default)]
        probe: bool,
    },
    Custom {
        bins: Vec<PrivateBin>,
        dd_zeros: Vec<Vec<(usize, usize)>>,
        #[serde(default)]
        probe: bool,
    },
}

impl PlanSpec {
    pub fn build(&self, cfg: &FrameConfig, n_t: usize) -> Result<PrivateBinPlan> {
        match self {
            PlanSpec::Shared => PrivateBinPlan::all_shared(n_t),
            PlanSpec::Diagonal { n_p, probe } => PrivateBinPlan::diagonal(cfg, n_t, *n_p)?.probed(cfg, *probe),
            PlanSpec::Custom { bins, dd_zeros, probe } => {
                PrivateBinPlan::custom(cfg, n_t, bins.clone(), dd_zeros.clone())?.probed(cfg, *probe)
            }
        }
    }
}

/// ISFFT of every antenna's DD frame followed by private-bin nulling.
pub fn apply_plan(tx_dd: &[DdFrame], plan: &PrivateBinPlan, cfg: &FrameConfig) -> Result<Vec<TfFrame>> {
    if tx_dd.len() != plan.n_t {
        return Err(dim_mismatch(plan.n_t, tx_dd.len()));
    }
    let mut out = Vec::with_capacity(tx_dd.len());
    for (p, x) in tx_dd.iter().enumerate() {
        x.check_dims(cfg)?;
        for &(k, l) in plan.dd_zeros(p) {
            if x[(k, l)].norm() != 0.0 {
                return Err(Error::NonZeroReservedBin { antenna: p, k, l });
            }
        }
        let mut tf = isfft(x, cfg)?;
        for (n, m) in plan.nulled_bins(p) {
            tf[(n, m)] = Complex64::new(0.0, 0.0);
        }
        if let (Some(probe), Some(own)) = (plan.probe, plan.own_bin(p)) {
            tf[(own.n, own.m)] = probe;
        }
        out.push(tf);
    }
    Ok(out)
}

/// Stacked per-private-bin receive snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualMeasurement {
    /// Segment `p` holds `Y_nr[n_p, m_p] / X_p[n_p, m_p]` for all receive antennas.
    pub r: DVector<Complex64>,
    pub bins: Vec<PrivateBin>,
    pub n_r: usize,
    /// Noise variance multiplier of each segment, `1 / |X_p[n_p, m_p]|^2`.
    pub noise_gain: Vec<f64>,
}

impl VirtualMeasurement {
    pub fn segment(&self, p: usize) -> &[Complex64] {
        &self.r.as_slice()[p * self.n_r..(p + 1) * self.n_r]
    }

    /// Expected `||noise||^2` in `r` for receive noise variance `noise_var`.
    pub fn expected_noise_energy(&self, noise_var: f64) -> f64 {
        noise_var * self.n_r as f64 * self.noise_gain.iter().sum::<f64>()
    }

    /// Per-segment weights `|X_p| / rms(|X|)` that equalize the noise level
    /// across segments while keeping the mean squared weight at one.
    pub fn segment_weights(&self) -> Vec<f64> {
        let mean_power = self.noise_gain.iter().map(|g| 1.0 / g).sum::<f64>() / self.noise_gain.len().max(1) as f64;
        self.noise_gain.iter().map(|g| (1.0 / (g * mean_power)).sqrt()).collect()
    }

    /// Copy with every segment scaled by [`Self::segment_weights`]. The noise
    /// in the result is white, with variance `noise_var / mean |X_p|^2`.
    pub fn whitened(&self) -> Self {
        let w = self.segment_weights();
        let mut out = self.clone();
        for (i, v) in out.r.iter_mut().enumerate() {
            *v *= w[i / self.n_r];
        }
        for (g, wp) in out.noise_gain.iter_mut().zip(&w) {
            *g *= wp * wp;
        }
        out
    }
}

pub fn extract_virtual_measurement(
    rx_tf: &[TfFrame],
    plan: &PrivateBinPlan,
    tx_tf: &[TfFrame],
) -> Result<VirtualMeasurement> {
    if tx_tf.len() != plan.n_t {
        return Err(dim_mismatch(plan.n_t, tx_tf.len()));
    }
    if rx_tf.is_empty() {
        return Err(Error::InvalidConfig("no receive frames".into()));
    }
    let n_r = rx_tf.len();
    let mut r = Vec::with_capacity(plan.n_p() * n_r);
    let mut noise_gain = Vec::with_capacity(plan.n_p());
    for b in plan.bins() {
        let x = tx_tf[b.antenna][(b.n, b.m)];
        if x.norm() == 0.0 {
            return Err(Error::ZeroProbe { antenna: b.antenna, n: b.n, m: b.m });
        }
        noise_gain.push(1.0 / x.norm_sqr());
        r.extend(rx_tf.iter().map(|y| y[(b.n, b.m)] / x));
    }
    Ok(VirtualMeasurement { r: DVector::from_vec(r), bins: plan.bins().to_vec(), n_r, noise_gain })
}

/// One point of the discretized angle-Doppler-delay space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta_deg: f64,
    pub doppler_bin: i64,
    pub delay_bin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub atoms: Vec<Atom>,
    pub spacing_deg: f64,
    /// Atoms carry no Doppler/delay dependence (single private bin).
    pub angle_only: bool,
}

/// Angular window and DD neighborhood used around coarse estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridWindow {
    /// Half-width in receive-array DFT bins (spatial frequency `1/N_r`).
    pub angle_bins: f64,
    pub dd_radius: usize,
    pub cap: usize,
}

impl Default for GridWindow {
    fn default() -> Self {
        Self { angle_bins: 1.5, dd_radius: 0, cap: GRID_CAP }
    }
}

fn grid_angles(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let eps = 1e-9;
    let first = ((lo - eps) / spacing).ceil() as i64;
    let last = ((hi + eps) / spacing).floor() as i64;
    (first..=last).map(|i| i as f64 * spacing).filter(|a| a.abs() <= 90.0 + eps).collect()
}

fn angle_key(theta: f64) -> i64 {
    (theta * 1e6).round() as i64
}

fn wrap_doppler(k: i64, n: usize) -> i64 {
    let n = n as i64;
    (k + n / 2).rem_euclid(n) - n / 2
}

impl TargetGrid {
    /// Grid of angle multiples of `spacing_deg` near each coarse angle, paired
    /// with that estimate's DD neighborhood. With no coarse estimates the
    /// whole angle range (and, unless `angle_only`, the whole DD grid) is used.
    pub fn around(
        coarse: &[CoarseEstimate],
        spacing_deg: f64,
        window: &GridWindow,
        angle_only: bool,
        cfg: &FrameConfig,
        arrays: &ArrayConfig,
    ) -> Result<Self> {
        if !(spacing_deg > 0.0) {
            return Err(Error::InvalidConfig(format!("angle spacing must be > 0, got {spacing_deg}")));
        }
        let lambda = cfg.wavelength();
        let half = window.angle_bins / arrays.n_r as f64;
        let mut seen = BTreeSet::new();
        let mut atoms = Vec::new();
        let mut push = |atoms: &mut Vec<Atom>, a: Atom| -> Result<()> {
            if seen.insert((angle_key(a.theta_deg), a.doppler_bin, a.delay_bin)) {
                if atoms.len() >= window.cap {
                    return Err(Error::CapExceeded { side: atoms.len() + 1, cap: window.cap });
                }
                atoms.push(a);
            }
            Ok(())
        };
        if coarse.is_empty() {
            for theta in grid_angles(-90.0, 90.0, spacing_deg) {
                if angle_only {
                    push(&mut atoms, Atom { theta_deg: theta, doppler_bin: 0, delay_bin: 0 })?;
                    continue;
                }
                for k in 0..cfg.n {
                    for l in 0..cfg.m {
                        let doppler_bin = wrap_doppler(k as i64, cfg.n);
                        push(&mut atoms, Atom { theta_deg: theta, doppler_bin, delay_bin: l })?;
                    }
                }
            }
        }
        for e in coarse {
            let to_angle = |w: f64| {
                let s = (w * lambda / arrays.rx_spacing_m).clamp(-1.0, 1.0);
                s.asin().to_degrees()
            };
            let lo = to_angle(e.omega - half);
            let hi = to_angle(e.omega + half);
            let radius = window.dd_radius as i64;
            for theta in grid_angles(lo, hi, spacing_deg) {
                if angle_only {
                    push(&mut atoms, Atom { theta_deg: theta, doppler_bin: 0, delay_bin: 0 })?;
                    continue;
                }
                for dk in -radius..=radius {
                    for dl in -radius..=radius {
                        let doppler_bin = wrap_doppler(e.doppler_bin + dk, cfg.n);
                        let delay_bin = (e.l as i64 + dl).rem_euclid(cfg.m as i64) as usize;
                        push(&mut atoms, Atom { theta_deg: theta, doppler_bin, delay_bin })?;
                    }
                }
            }
        }
        if atoms.is_empty() {
            return Err(Error::InvalidConfig("target grid is empty".into()));
        }
        Ok(Self { atoms, spacing_deg, angle_only })
    }
}

/// Virtual-array steering of one atom, before normalization.
pub fn steering(atom: &Atom, bins: &[PrivateBin], n_r: usize, cfg: &FrameConfig, arrays: &ArrayConfig) -> Vec<Complex64> {
    let lambda = cfg.wavelength();
    let dd = dd_phase(atom.doppler_bin, atom.delay_bin, cfg);
    let mut out = Vec::with_capacity(bins.len() * n_r);
    for b in bins {
        let ramp = 2.0
            * std::f64::consts::PI
            * (atom.doppler_bin as f64 * b.n as f64 / cfg.n as f64 - b.m as f64 * atom.delay_bin as f64 / cfg.m as f64);
        let seg = arrays.tx_steering(b.antenna, atom.theta_deg, lambda) * dd * Complex64::from_polar(1.0, ramp);
        out.extend((0..n_r).map(|nr| arrays.rx_steering(nr, atom.theta_deg, lambda) * seg));
    }
    out
}

/// Unit-norm dictionary. Every unnormalized column has norm `scale`, so a
/// target with gain `b` on atom `i` contributes `b * scale * phi[:, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub phi: DMatrix<Complex64>,
    pub scale: f64,
}

pub fn build_dictionary(
    grid: &TargetGrid,
    bins: &[PrivateBin],
    n_r: usize,
    cfg: &FrameConfig,
    arrays: &ArrayConfig,
) -> Result<Dictionary> {
    if grid.atoms.is_empty() {
        return Err(Error::InvalidConfig("empty target grid".into()));
    }
    if bins.is_empty() {
        return Err(Error::InvalidConfig("dictionary needs at least one private bin".into()));
    }
    let rows = bins.len() * n_r;
    let scale = (rows as f64).sqrt();
    let inv = Complex64::new(1.0 / scale, 0.0);
    let mut phi = DMatrix::zeros(rows, grid.atoms.len());
    for (j, atom) in grid.atoms.iter().enumerate() {
        for (i, v) in steering(atom, bins, n_r, cfg, arrays).into_iter().enumerate() {
            phi[(i, j)] = v * inv;
        }
    }
    Ok(Dictionary { phi, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub ssr: SsrParams,
    /// Starting angle spacing; `None` means `floor(90 / N_r)` degrees.
    pub initial_spacing_deg: Option<f64>,
    pub min_spacing_deg: f64,
    pub window: GridWindow,
    pub max_targets: usize,
    /// Stop when the next peak is below this fraction of the first one.
    pub peak_fraction: f64,
    /// Stop when the residual energy falls below this multiple of the
    /// expected noise energy.
    pub noise_factor: f64,
    /// Weight each segment by its probe magnitude before solving.
    pub whiten: bool,
    /// Adds `noise_weight * 2 sigma sqrt(ln G)` to the l1 weight, where
    /// `sigma^2` is the per-entry noise variance of the measurement and `G`
    /// the number of atoms. Zero keeps the configured weight unchanged.
    pub noise_weight: f64,
    /// Passes of neighbour moves after each extraction; zero disables them.
    pub refit_sweeps: usize,
    /// Permute the detected Doppler/delay labels among the detections to
    /// maximize the physical-array matched-filter score.
    pub relabel_dd: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            ssr: SsrParams::default(),
            initial_spacing_deg: None,
            min_spacing_deg: 0.25,
            window: GridWindow::default(),
            max_targets: 8,
            peak_fraction: 0.2,
            noise_factor: 1.5,
            whiten: true,
            noise_weight: 1.0,
            refit_sweeps: 10,
            relabel_dd: true,
        }
    }
}

impl DetectParams {
    pub fn initial_spacing(&self, n_r: usize) -> f64 {
        self.initial_spacing_deg
            .unwrap_or_else(|| (90 / n_r.max(1)) as f64)
            .max(self.min_spacing_deg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ssr.validate()?;
        if !(self.min_spacing_deg > 0.0) {
            return Err(Error::InvalidConfig("min_spacing_deg must be > 0".into()));
        }
        if let Some(d) = self.initial_spacing_deg {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig("initial_spacing_deg must be > 0".into()));
            }
        }
        if !(self.noise_weight >= 0.0 && self.noise_weight.is_finite()) {
            return Err(Error::InvalidConfig("noise_weight must be >= 0".into()));
        }
        if self.max_targets == 0 || !(self.window.angle_bins > 0.0) {
            return Err(Error::InvalidConfig("max_targets and angle window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedTarget {
    pub theta_deg: f64,
    pub doppler_bin: i64,
    pub delay_bin: usize,
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Least-squares gain estimate.
    pub gain: Complex64,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub targets: Vec<DetectedTarget>,
    pub final_spacing_deg: f64,
    pub refinements: usize,
    /// The first solve at the final spacing (the full sparse spectrum).
    pub spectrum: SsrSolution,
    pub grid: TargetGrid,
    pub dictionary_scale: f64,
    /// All solver runs converged.
    pub converged: bool,
}

/// Physical-array data used to attach Doppler/delay to angle-only detections.
#[derive(Debug, Clone, Copy)]
pub struct DdScorer<'a> {
    pub rx: &'a [DdFrame],
    pub tx: &'a [DdFrame],
}

/// Iterative sparse detection with angular grid refinement.
///
/// At each spacing the strongest atom is extracted, all extracted atoms are
/// refit by least squares and the solver reruns on the residual. An atom at
/// an already-extracted angle with a different Doppler/delay means the grid
/// is too coarse: the spacing is halved and detection restarts.
#[allow(clippy::too_many_arguments)]
pub fn detect_with_refinement(
    meas: &VirtualMeasurement,
    coarse: &[CoarseEstimate],
    cfg: &FrameConfig,
    arrays: &ArrayConfig,
    params: &DetectParams,
    noise_var: f64,
    scorer: Option<DdScorer<'_>>,
) -> Result<Detection> {
    params.validate()?;
    if meas.bins.is_empty() {
        return Err(Error::InvalidConfig("detection needs at least one private bin".into()));
    }
    let angle_only = meas.bins.len() == 1;
    let weighted;
    let (meas, weights) = if params.whiten && !angle_only {
        weighted = meas.whitened();
        (&weighted, meas.segment_weights())
    } else {
        (meas, vec![1.0; meas.bins.len()])
    };
    let noise_floor = params.noise_factor * meas.expected_noise_energy(noise_var.max(0.0));
    let r_energy = meas.r.norm_squared();
    let mut spacing = params.initial_spacing(arrays.n_r);
    let mut refinements = 0;
    let mut converged = true;
    loop {
        let grid = TargetGrid::around(coarse, spacing, &params.window, angle_only, cfg, arrays)?;
        let mut dict = build_dictionary(&grid, &meas.bins, meas.n_r, cfg, arrays)?;
        for (i, mut row) in dict.phi.row_iter_mut().enumerate() {
            row *= Complex64::new(weights[i / meas.n_r], 0.0);
        }
        let entry_var = noise_var.max(0.0) * meas.noise_gain.iter().sum::<f64>() / meas.noise_gain.len() as f64;
        let atoms = grid.atoms.len().max(2) as f64;
        let ssr = SsrParams {
            lasso_weight: params.ssr.lasso_weight + params.noise_weight * 2.0 * (entry_var * atoms.ln()).sqrt(),
            ..params.ssr
        };
        let mut residual = meas.r.clone();
        let mut chosen: Vec<usize> = Vec::new();
        let mut coefs = DVector::zeros(0);
        let mut first_peak = None;
        let mut spectrum = None;
        let mut too_coarse = false;
        while chosen.len() < params.max_targets {
            let e = residual.norm_squared();
            if e <= noise_floor || e <= 1e-20 * r_energy || r_energy == 0.0 {
                break;
            }
            let sol = solve_ssr(&residual, &dict.phi, &ssr)?;
            converged &= sol.converged;
            let pick = sol.support.iter().copied().find(|i| !chosen.contains(i));
            let Some(i) = pick else {
                spectrum.get_or_insert(sol);
                break;
            };
            let mag = sol.beta[i].norm();
            let first = *first_peak.get_or_insert(mag);
            spectrum.get_or_insert_with(|| sol.clone());
            if mag < params.peak_fraction * first {
                break;
            }
            if chosen.iter().any(|&c| same_angle_other_dd(&grid.atoms[c], &grid.atoms[i])) {
                too_coarse = true;
                break;
            }
            chosen.push(i);
            (coefs, residual) = refit_cyclic(&mut chosen, &grid, &dict.phi, &meas.r, params.refit_sweeps)?;
            if has_pair(&chosen, &grid, same_angle_other_dd) {
                too_coarse = true;
                break;
            }
        }
        // two neighbouring cells with one DD signature: an off-grid target
        let straddle = |a: &Atom, b: &Atom| {
            (a.doppler_bin, a.delay_bin) == (b.doppler_bin, b.delay_bin)
                && (a.theta_deg - b.theta_deg).abs() <= spacing * 1.000001
        };
        too_coarse |= has_pair(&chosen, &grid, straddle);
        if too_coarse && spacing / 2.0 >= params.min_spacing_deg {
            spacing /= 2.0;
            refinements += 1;
            continue;
        }
        let spectrum = match spectrum {
            Some(s) => s,
            None => solve_ssr(&meas.r, &dict.phi, &ssr)?,
        };
        let mut targets: Vec<DetectedTarget> = chosen
            .iter()
            .zip(coefs.iter())
            .map(|(&i, &c)| {
                let a = grid.atoms[i];
                to_target(a, c / dict.scale, cfg)
            })
            .collect();
        if angle_only {
            assign_dd(&mut targets, coarse, cfg, arrays, scorer)?;
        } else if let (true, Some(sc)) = (params.relabel_dd && targets.len() > 1, scorer) {
            relabel_dd(&mut targets, coarse, sc, cfg, arrays)?;
            let atoms: Vec<Atom> = targets
                .iter()
                .map(|t| Atom { theta_deg: t.theta_deg, doppler_bin: t.doppler_bin, delay_bin: t.delay_bin })
                .collect();
            let sub_grid = TargetGrid { atoms, spacing_deg: spacing, angle_only };
            let mut sub = build_dictionary(&sub_grid, &meas.bins, meas.n_r, cfg, arrays)?;
            for (i, mut row) in sub.phi.row_iter_mut().enumerate() {
                row *= Complex64::new(weights[i / meas.n_r], 0.0);
            }
            let gains = least_squares(&sub.phi, &meas.r)?;
            for (t, g) in targets.iter_mut().zip(gains.iter()) {
                t.gain = g / sub.scale;
            }
        }
        return Ok(Detection {
            targets,
            final_spacing_deg: spacing,
            refinements,
            spectrum,
            grid,
            dictionary_scale: dict.scale,
            converged,
        });
    }
}

fn same_angle_other_dd(a: &Atom, b: &Atom) -> bool {
    angle_key(a.theta_deg) == angle_key(b.theta_deg) && (a.doppler_bin, a.delay_bin) != (b.doppler_bin, b.delay_bin)
}

fn has_pair(chosen: &[usize], grid: &TargetGrid, f: impl Fn(&Atom, &Atom) -> bool) -> bool {
    chosen
        .iter()
        .enumerate()
        .any(|(n, &i)| chosen[..n].iter().any(|&j| f(&grid.atoms[i], &grid.atoms[j])))
}

/// Least-squares fit on the chosen atoms, then cyclic moves of each atom to
/// a neighbouring angle with the same Doppler/delay while that lowers the
/// residual.
fn refit_cyclic(
    chosen: &mut [usize],
    grid: &TargetGrid,
    phi: &DMatrix<Complex64>,
    r: &DVector<Complex64>,
    sweeps: usize,
) -> Result<(DVector<Complex64>, DVector<Complex64>)> {
    let fit = |set: &[usize]| -> Result<(DVector<Complex64>, DVector<Complex64>)> {
        let sub = phi.select_columns(set.iter());
        let c = least_squares(&sub, r)?;
        let res = r - &sub * &c;
        Ok((c, res))
    };
    let mut best = fit(chosen)?;
    let reach = grid.spacing_deg * 1.000001;
    for _ in 0..sweeps {
        let mut moved = false;
        for slot in 0..chosen.len() {
            let cur = grid.atoms[chosen[slot]];
            let neighbours: Vec<usize> = (0..grid.atoms.len())
                .filter(|&j| {
                    let a = grid.atoms[j];
                    !chosen.contains(&j)
                        && (a.doppler_bin, a.delay_bin) == (cur.doppler_bin, cur.delay_bin)
                        && (a.theta_deg - cur.theta_deg).abs() <= reach
                })
                .collect();
            for j in neighbours {
                let keep = chosen[slot];
                chosen[slot] = j;
                let trial = fit(chosen)?;
                if trial.1.norm_squared() < best.1.norm_squared() * (1.0 - 1e-12) {
                    best = trial;
                    moved = true;
                } else {
                    chosen[slot] = keep;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(best)
}

fn to_target(a: Atom, gain: Complex64, cfg: &FrameConfig) -> DetectedTarget {
    DetectedTarget {
        theta_deg: a.theta_deg,
        doppler_bin: a.doppler_bin,
        delay_bin: a.delay_bin,
        range_m: a.delay_bin as f64 * cfg.range_resolution(),
        velocity_mps: a.doppler_bin as f64 * cfg.velocity_resolution(),
        gain,
    }
}

fn least_squares(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-12)
        .map_err(|e| Error::InvalidConfig(format!("least-squares refit failed: {e}")))
}

/// Matched-filter score of each Doppler/delay candidate at angle `theta`.
fn dd_scores(
    theta: f64,
    candidates: &[(i64, usize)],
    scorer: DdScorer<'_>,
    cfg: &FrameConfig,
    arrays: &ArrayConfig,
) -> Result<Vec<f64>> {
    let omega = arrays.rx_spatial_frequency(theta, cfg.wavelength());
    let a_hat = extract_angle_profile(scorer.rx, omega)?;
    let a_prime = build_a_prime(scorer.tx, theta, arrays, cfg)?;
    let corr = correlate_2d(&a_hat, &a_prime, &PeakConfig { relative_threshold: 1.0, max_peaks: 1 })?;
    Ok(candidates
        .iter()
        .map(|&(k, l)| corr.surface[l + k.rem_euclid(cfg.n as i64) as usize * cfg.m])
        .collect())
}

/// Reassigns Doppler/delay labels, drawn without replacement from the
/// detections' own labels and the coarse candidates, to maximize the total
/// score.
fn relabel_dd(
    targets: &mut [DetectedTarget],
    coarse: &[CoarseEstimate],
    scorer: DdScorer<'_>,
    cfg: &FrameConfig,
    arrays: &ArrayConfig,
) -> Result<()> {
    let n = targets.len();
    let mut labels: Vec<(i64, usize)> = targets.iter().map(|t| (t.doppler_bin, t.delay_bin)).collect();
    for e in coarse {
        if !labels.contains(&(e.doppler_bin, e.l)) && labels.len() < 16 {
            labels.push((e.doppler_bin, e.l));
        }
    }
    let scores = targets
        .iter()
        .map(|t| dd_scores(t.theta_deg, &labels, scorer, cfg, arrays))
        .collect::<Result<Vec<_>>>()?;
    // best[mask] = max total score assigning targets 0..popcount(mask) to the labels in mask
    let full = 1usize << labels.len();
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut from = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if best[mask] == f64::NEG_INFINITY {
            continue;
        }
        let t = mask.count_ones() as usize;
        if t == n {
            continue;
        }
        for (c, score) in scores[t].iter().enumerate() {
            let next = mask | (1 << c);
            if next != mask && best[mask] + score > best[next] {
                best[next] = best[mask] + score;
                from[next] = c;
            }
        }
    }
    let mut mask = (0..full)
        .filter(|m| m.count_ones() as usize == n)
        .max_by(|&a, &b| best[a].total_cmp(&best[b]))
        .expect("n <= number of labels");
    for t in (0..n).rev() {
        let c = from[mask];
        let (k, l) = labels[c];
        let gain = targets[t].gain;
        targets[t] = to_target(Atom { theta_deg: targets[t].theta_deg, doppler_bin: k, delay_bin: l }, gain, cfg);
        mask &= !(1 << c);
    }
    Ok(())
}

/// Gives each angle-only detection the Doppler/delay of a coarse candidate,
/// strongest detections first, without reusing a candidate.
fn assign_dd(
    targets: &mut [DetectedTarget],
    coarse: &[CoarseEstimate],
    cfg: &FrameConfig,
    arrays: &ArrayConfig,
    scorer: Option<DdScorer<'_>>,
) -> Result<()> {
    let mut candidates: Vec<(i64, usize)> = Vec::new();
    for e in coarse {
        if !candidates.contains(&(e.doppler_bin, e.l)) {
            candidates.push((e.doppler_bin, e.l));
        }
    }
    if candidates.is_empty() {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[b].gain.norm().total_cmp(&targets[a].gain.norm()));
    let mut used = vec![false; candidates.len()];
    for t in order {
        let theta = targets[t].theta_deg;
        let scores: Vec<f64> = match scorer {
            Some(s) => dd_scores(theta, &candidates, s, cfg, arrays)?,
            None => candidates
                .iter()
                .map(|&(k, l)| {
                    coarse
                        .iter()
                        .filter(|e| (e.doppler_bin, e.l) == (k, l))
                        .map(|e| e.peak_score / (1.0 + (e.theta_deg - theta).abs()))
                        .fold(0.0, f64::max)
                })
                .collect(),
        };
        let best = (0..candidates.len())
            .filter(|&i| !used[i])
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        if let Some(i) = best {
            used[i] = true;
            let (k, l) = candidates[i];
            let gain = targets[t].gain;
            targets[t] = to_target(Atom { theta_deg: theta, doppler_bin: k, delay_bin: l }, gain, cfg);
        }
    }
    Ok(())
}

/// Angle in degrees for a receive-array spatial frequency, if physical.
pub fn angle_of(omega: f64, cfg: &FrameConfig, arrays: &ArrayConfig) -> Option<f64> {
    omega_to_angle(omega, arrays.rx_spacing_m, cfg.wavelength())
}
