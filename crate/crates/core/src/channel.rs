//! Target and path models, the sparse DD channel, and synthesis of the radar
//! and communication receive arrays in the DD and TF domains.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{DdFrame, Frame, FrameConfig, TfFrame};
use crate::rng;

/// RNG stream reserved for drawing communication path gains from the scenario seed.
pub const COMM_GAIN_STREAM: u64 = 0xC0_44;

/// Uniform linear transmit / receive arrays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_c: usize,
    /// Transmit element spacing in meters.
    pub tx_spacing_m: f64,
    /// Receive element spacing in meters.
    pub rx_spacing_m: f64,
}

impl ArrayConfig {
    /// Arrays with half-wavelength spacing at the frame's carrier.
    pub fn half_wavelength(n_t: usize, n_r: usize, n_c: usize, frame: &FrameConfig) -> Self {
        let g = frame.wavelength() / 2.0;
        Self { n_t, n_r, n_c, tx_spacing_m: g, rx_spacing_m: g }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 || self.n_c == 0 {
            return Err(Error::InvalidConfig(format!(
                "antenna counts must be >= 1, got N_t = {}, N_r = {}, N_c = {}",
                self.n_t, self.n_r, self.n_c
            )));
        }
        if !(self.tx_spacing_m > 0.0 && self.rx_spacing_m > 0.0) {
            return Err(Error::InvalidConfig("element spacings must be positive".into()));
        }
        Ok(())
    }

    /// Transmit steering phase `exp(-j2pi n_t g_t sin(theta) / lambda)`.
    pub fn tx_steering(&self, n_t: usize, theta_deg: f64, wavelength: f64) -> Complex64 {
        steering(n_t as f64 * self.tx_spacing_m, theta_deg, wavelength)
    }

    /// Receive steering phase `exp(-j2pi n_r g_r sin(theta) / lambda)`.
    pub fn rx_steering(&self, n_r: usize, theta_deg: f64, wavelength: f64) -> Complex64 {
        steering(n_r as f64 * self.rx_spacing_m, theta_deg, wavelength)
    }

    /// Receive spatial frequency `g_r sin(theta) / lambda`.
    pub fn rx_spatial_frequency(&self, theta_deg: f64, wavelength: f64) -> f64 {
        self.rx_spacing_m * theta_deg.to_radians().sin() / wavelength
    }
}

fn steering(offset_m: f64, theta_deg: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * offset_m * theta_deg.to_radians().sin() / wavelength)
}

/// A point reflector (radar) or propagation path (communication), snapped
/// to the DD grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub theta_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub gain: Complex64,
    /// Signed Doppler index; the grid row is this value modulo `N`.
    pub doppler_bin: i64,
    pub delay_bin: usize,
    /// `velocity / v_res - doppler_bin`, in bins.
    pub doppler_residual: f64,
    /// `range / R_res - delay_bin`, in bins.
    pub delay_residual: f64,
}

impl Target {
    /// Snaps a physical target to the nearest DD grid point.
    pub fn snapped(
        theta_deg: f64,
        range_m: f64,
        velocity_mps: f64,
        gain: Complex64,
        cfg: &FrameConfig,
    ) -> Result<Self> {
        if !(-90.0..=90.0).contains(&theta_deg) {
            return Err(Error::InvalidConfig(format!("angle {theta_deg} outside [-90, 90] degrees")));
        }
        if !(range_m.is_finite() && velocity_mps.is_finite() && gain.norm().is_finite()) {
            return Err(Error::NonFinite("target parameters"));
        }
        let l_exact = range_m / cfg.range_resolution();
        let k_exact = velocity_mps / cfg.velocity_resolution();
        let delay_bin = l_exact.round();
        let doppler_bin = k_exact.round();
        if delay_bin < 0.0 || delay_bin >= cfg.m as f64 {
            return Err(Error::IndexOutOfRange(format!(
                "range {range_m} m maps to delay bin {delay_bin}, outside [0, {})",
                cfg.m
            )));
        }
        Ok(Self {
            theta_deg,
            range_m,
            velocity_mps,
            gain,
            doppler_bin: doppler_bin as i64,
            delay_bin: delay_bin as usize,
            doppler_residual: k_exact - doppler_bin,
            delay_residual: l_exact - delay_bin,
        })
    }

    /// Target placed exactly on a grid point.
    pub fn on_grid(
        theta_deg: f64,
        doppler_bin: i64,
        delay_bin: usize,
        gain: Complex64,
        cfg: &FrameConfig,
    ) -> Result<Self> {
        if delay_bin >= cfg.m {
            return Err(Error::IndexOutOfRange(format!("delay bin {delay_bin} >= M = {}", cfg.m)));
        }
        if !(-90.0..=90.0).contains(&theta_deg) {
            return Err(Error::InvalidConfig(format!("angle {theta_deg} outside [-90, 90] degrees")));
        }
        Ok(Self {
            theta_deg,
            range_m: delay_bin as f64 * cfg.range_resolution(),
            velocity_mps: doppler_bin as f64 * cfg.velocity_resolution(),
            gain,
            doppler_bin,
            delay_bin,
            doppler_residual: 0.0,
            delay_residual: 0.0,
        })
    }

    /// Doppler row on the grid, `doppler_bin mod N`.
    pub fn doppler_index(&self, cfg: &FrameConfig) -> usize {
        self.doppler_bin.rem_euclid(cfg.n as i64) as usize
    }

    pub fn doppler_hz(&self, cfg: &FrameConfig) -> f64 {
        self.doppler_bin as f64 * cfg.delta_nu()
    }

    pub fn delay_s(&self, cfg: &FrameConfig) -> f64 {
        self.delay_bin as f64 * cfg.delta_tau()
    }

    /// DD channel coefficient `beta exp(-j2pi k l / (NM))`.
    pub fn dd_coefficient(&self, cfg: &FrameConfig) -> Complex64 {
        self.gain * dd_phase(self.doppler_bin, self.delay_bin, cfg)
    }

    /// TF channel response of this target alone at bin `[n, m]`.
    pub fn tf_response(&self, n: usize, m: usize, cfg: &FrameConfig) -> Complex64 {
        let kn = (self.doppler_bin * n as i64).rem_euclid(cfg.n as i64) as f64 / cfg.n as f64;
        let ml = ((m * self.delay_bin) % cfg.m) as f64 / cfg.m as f64;
        self.dd_coefficient(cfg) * Complex64::from_polar(1.0, 2.0 * PI * (kn - ml))
    }
}

/// `exp(-j2pi nu tau)` for a grid point, i.e. `exp(-j2pi k l / (NM))`.
pub(crate) fn dd_phase(doppler_bin: i64, delay_bin: usize, cfg: &FrameConfig) -> Complex64 {
    let nm = cfg.bins() as i64;
    let prod = (doppler_bin * delay_bin as i64).rem_euclid(nm);
    Complex64::from_polar(1.0, -2.0 * PI * prod as f64 / nm as f64)
}

/// One circular shift of the DD grid with a complex weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdTap {
    pub doppler_shift: usize,
    pub delay_shift: usize,
    pub coefficient: Complex64,
}

/// Sparse `(NM) x (NM)` DD channel matrix stored as its distinct circular
/// shifts. Row `l + kM` has one nonzero per tap.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDdChannel {
    n: usize,
    m: usize,
    taps: Vec<DdTap>,
}

impl SparseDdChannel {
    pub fn from_taps(cfg: &FrameConfig, taps: impl IntoIterator<Item = DdTap>) -> Self {
        let mut merged: Vec<DdTap> = Vec::new();
        for tap in taps {
            let tap = DdTap {
                doppler_shift: tap.doppler_shift % cfg.n,
                delay_shift: tap.delay_shift % cfg.m,
                ..tap
            };
            match merged
                .iter_mut()
                .find(|t| t.doppler_shift == tap.doppler_shift && t.delay_shift == tap.delay_shift)
            {
                Some(t) => t.coefficient += tap.coefficient,
                None => merged.push(tap),
            }
        }
        Self { n: cfg.n, m: cfg.m, taps: merged }
    }

    pub fn identity(cfg: &FrameConfig) -> Self {
        Self::from_taps(
            cfg,
            [DdTap { doppler_shift: 0, delay_shift: 0, coefficient: Complex64::new(1.0, 0.0) }],
        )
    }

    pub fn taps(&self) -> &[DdTap] {
        &self.taps
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// `y = h x`: `y[k,l] = sum_taps c x[[k - k_j]_N, [l - l_j]_M]`.
    pub fn apply(&self, x: &DdFrame) -> Result<DdFrame> {
        let mut y = DdFrame::zeros(self.n, self.m);
        self.apply_add(x, Complex64::new(1.0, 0.0), &mut y)?;
        Ok(y)
    }

    /// `y += s * h x`.
    pub fn apply_add(&self, x: &DdFrame, s: Complex64, y: &mut DdFrame) -> Result<()> {
        self.check(x)?;
        let (n, m) = (self.n, self.m);
        let xs = x.as_slice();
        let ys = y.as_mut_slice();
        for tap in &self.taps {
            let c = tap.coefficient * s;
            for k in 0..n {
                let ks = (k + n - tap.doppler_shift) % n;
                let src = &xs[ks * m..(ks + 1) * m];
                let dst = &mut ys[k * m..(k + 1) * m];
                for (l, d) in dst.iter_mut().enumerate() {
                    *d += c * src[(l + m - tap.delay_shift) % m];
                }
            }
        }
        Ok(())
    }

    /// `x += s * h^H y`.
    pub fn apply_adjoint_add(&self, y: &DdFrame, s: Complex64, x: &mut DdFrame) -> Result<()> {
        self.check(y)?;
        let (n, m) = (self.n, self.m);
        let ys = y.as_slice();
        let xs = x.as_mut_slice();
        for tap in &self.taps {
            let c = tap.coefficient.conj() * s;
            for k in 0..n {
                let kd = (k + tap.doppler_shift) % n;
                let src = &ys[kd * m..(kd + 1) * m];
                let dst = &mut xs[k * m..(k + 1) * m];
                for (l, d) in dst.iter_mut().enumerate() {
                    *d += c * src[(l + tap.delay_shift) % m];
                }
            }
        }
        Ok(())
    }

    pub fn apply_adjoint(&self, y: &DdFrame) -> Result<DdFrame> {
        let mut x = DdFrame::zeros(self.n, self.m);
        self.apply_adjoint_add(y, Complex64::new(1.0, 0.0), &mut x)?;
        Ok(x)
    }

    fn check(&self, f: &DdFrame) -> Result<()> {
        if f.dims() != (self.n, self.m) {
            return Err(dim_mismatch(
                format!("{}x{}", self.n, self.m),
                format!("{}x{}", f.rows(), f.cols()),
            ));
        }
        Ok(())
    }

    /// Matrix entry at flat row `l + kM`, column `l' + k'M`.
    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        let (k, l) = (row / self.m, row % self.m);
        let (kc, lc) = (col / self.m, col % self.m);
        self.taps
            .iter()
            .filter(|t| (k + self.n - t.doppler_shift) % self.n == kc && (l + self.m - t.delay_shift) % self.m == lc)
            .map(|t| t.coefficient)
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let side = self.n * self.m;
        let mut out = DMatrix::zeros(side, side);
        for row in 0..side {
            let (k, l) = (row / self.m, row % self.m);
            for t in &self.taps {
                let col = (l + self.m - t.delay_shift) % self.m
                    + ((k + self.n - t.doppler_shift) % self.n) * self.m;
                out[(row, col)] += t.coefficient;
            }
        }
        out
    }
}

/// DD channel matrix of a set of on-grid targets.
pub fn dd_channel_matrix(targets: &[Target], cfg: &FrameConfig) -> SparseDdChannel {
    SparseDdChannel::from_taps(
        cfg,
        targets.iter().map(|t| DdTap {
            doppler_shift: t.doppler_index(cfg),
            delay_shift: t.delay_bin,
            coefficient: t.dd_coefficient(cfg),
        }),
    )
}

/// Block DD channel between `N_t` transmit and `N_c` receive antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoDdChannel {
    n_c: usize,
    n_t: usize,
    blocks: Vec<SparseDdChannel>,
}

impl MimoDdChannel {
    /// `blocks[nc * n_t + nt]` is the channel from transmit `nt` to receive `nc`.
    pub fn new(n_c: usize, n_t: usize, blocks: Vec<SparseDdChannel>) -> Result<Self> {
        if blocks.len() != n_c * n_t {
            return Err(dim_mismatch(n_c * n_t, blocks.len()));
        }
        Ok(Self { n_c, n_t, blocks })
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn block(&self, nc: usize, nt: usize) -> &SparseDdChannel {
        &self.blocks[nc * self.n_t + nt]
    }

    pub fn apply(&self, x: &[DdFrame]) -> Result<Vec<DdFrame>> {
        if x.len() != self.n_t {
            return Err(dim_mismatch(self.n_t, x.len()));
        }
        let (n, m) = x[0].dims();
        let one = Complex64::new(1.0, 0.0);
        (0..self.n_c)
            .map(|nc| {
                let mut y = DdFrame::zeros(n, m);
                for (nt, xt) in x.iter().enumerate() {
                    self.block(nc, nt).apply_add(xt, one, &mut y)?;
                }
                Ok(y)
            })
            .collect()
    }

    pub fn apply_adjoint(&self, y: &[DdFrame]) -> Result<Vec<DdFrame>> {
        if y.len() != self.n_c {
            return Err(dim_mismatch(self.n_c, y.len()));
        }
        let (n, m) = y[0].dims();
        let one = Complex64::new(1.0, 0.0);
        (0..self.n_t)
            .map(|nt| {
                let mut x = DdFrame::zeros(n, m);
                for (nc, yc) in y.iter().enumerate() {
                    self.block(nc, nt).apply_adjoint_add(yc, one, &mut x)?;
                }
                Ok(x)
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let side = self.blocks[0].n * self.blocks[0].m;
        let mut out = DMatrix::zeros(self.n_c * side, self.n_t * side);
        for nc in 0..self.n_c {
            for nt in 0..self.n_t {
                out.view_mut((nc * side, nt * side), (side, side))
                    .copy_from(&self.block(nc, nt).to_dense());
            }
        }
        out
    }
}

/// Communication paths: shared DD geometry, independent gains per antenna pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CommPaths {
    /// Geometry of each path; angle and gain fields are not used.
    pub paths: Vec<Target>,
    /// `gains[nc][nt][j]`.
    pub gains: Vec<Vec<Vec<Complex64>>>,
}

impl CommPaths {
    /// Unit-modulus gains with independent uniform phases for every pair and path.
    pub fn random_gains<R: Rng + ?Sized>(paths: Vec<Target>, n_c: usize, n_t: usize, rng: &mut R) -> Self {
        let gains = (0..n_c)
            .map(|_| (0..n_t).map(|_| paths.iter().map(|_| rng::unit_phase(rng)).collect()).collect())
            .collect();
        Self { paths, gains }
    }

    pub fn validate(&self, arrays: &ArrayConfig) -> Result<()> {
        let ok = self.gains.len() == arrays.n_c
            && self
                .gains
                .iter()
                .all(|row| row.len() == arrays.n_t && row.iter().all(|g| g.len() == self.paths.len()));
        if !ok {
            return Err(dim_mismatch(
                format!("gains[{}][{}][{}]", arrays.n_c, arrays.n_t, self.paths.len()),
                "ragged or mis-sized gain table",
            ));
        }
        Ok(())
    }

    pub fn block(&self, nc: usize, nt: usize, cfg: &FrameConfig) -> SparseDdChannel {
        let targets: Vec<Target> = self
            .paths
            .iter()
            .zip(&self.gains[nc][nt])
            .map(|(p, &gain)| Target { gain, ..*p })
            .collect();
        dd_channel_matrix(&targets, cfg)
    }

    pub fn mimo_channel(&self, cfg: &FrameConfig) -> MimoDdChannel {
        let n_c = self.gains.len();
        let n_t = self.gains.first().map_or(0, Vec::len);
        let blocks = (0..n_c)
            .flat_map(|nc| (0..n_t).map(move |nt| (nc, nt)))
            .map(|(nc, nt)| self.block(nc, nt, cfg))
            .collect();
        MimoDdChannel { n_c, n_t, blocks }
    }
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub frame: FrameConfig,
    pub arrays: ArrayConfig,
    pub targets: Vec<Target>,
    pub comm: Option<CommPaths>,
    /// Per-bin SNR in dB, relative to the average noiseless received power
    /// per receive antenna.
    pub snr_db: Option<f64>,
    /// Absolute complex noise variance; overrides `snr_db` when set.
    pub noise_var: Option<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(frame: FrameConfig, arrays: ArrayConfig) -> Self {
        Self { frame, arrays, targets: Vec::new(), comm: None, snr_db: None, noise_var: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.arrays.validate()?;
        for t in &self.targets {
            if t.delay_bin >= self.frame.m {
                return Err(Error::IndexOutOfRange(format!("target delay bin {}", t.delay_bin)));
            }
        }
        if let Some(comm) = &self.comm {
            comm.validate(&self.arrays)?;
        }
        if let Some(v) = self.noise_var {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("noise variance must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn noise_variance(&self, signal_power: f64) -> Option<f64> {
        match (self.noise_var, self.snr_db) {
            (Some(v), _) => Some(v),
            (None, Some(db)) => Some(signal_power / 10f64.powf(db / 10.0)),
            (None, None) => None,
        }
    }

    /// Radar targets at the same geometry but with gains redrawn (used for
    /// checking superposition and for Monte Carlo redraws).
    pub fn with_targets(&self, targets: Vec<Target>) -> Self {
        Self { targets, ..self.clone() }
    }
}

/// Received frames together with the complex noise variance that was added
/// (zero when noiseless).
#[derive(Debug, Clone)]
pub struct Received<F> {
    pub frames: Vec<F>,
    pub noise_var: f64,
}

/// Average per-bin power across a set of frames.
pub fn mean_power<D>(frames: &[Frame<D>]) -> f64 {
    let count: usize = frames.iter().map(|f| f.as_slice().len()).sum();
    if count == 0 {
        return 0.0;
    }
    frames.iter().map(Frame::energy).sum::<f64>() / count as f64
}

fn add_noise<D, R: Rng + ?Sized>(frames: &mut [Frame<D>], var: f64, rng: &mut R) {
    if var <= 0.0 {
        return;
    }
    for f in frames.iter_mut() {
        for z in f.as_mut_slice() {
            *z += rng::complex_normal(rng, var);
        }
    }
}

fn finish<D, R: Rng + ?Sized>(mut frames: Vec<Frame<D>>, scenario: &Scenario, rng: &mut R) -> Received<Frame<D>> {
    let noise_var = scenario.noise_variance(mean_power(&frames)).unwrap_or(0.0);
    add_noise(&mut frames, noise_var, rng);
    Received { frames, noise_var }
}

fn check_tx<D>(tx: &[Frame<D>], n_t: usize, cfg: &FrameConfig) -> Result<()> {
    if tx.len() != n_t {
        return Err(dim_mismatch(format!("{n_t} transmit frames"), tx.len()));
    }
    tx.iter().try_for_each(|f| f.check_dims(cfg))
}

/// Transmit-steered sum `sum_nt exp(-j2pi nt g_t sin(theta)/lambda) x_nt`.
pub fn tx_beam<D>(tx: &[Frame<D>], theta_deg: f64, arrays: &ArrayConfig, cfg: &FrameConfig) -> Frame<D> {
    let (n, m) = tx[0].dims();
    let mut out = Frame::zeros(n, m);
    for (nt, x) in tx.iter().enumerate() {
        out.add_scaled(x, arrays.tx_steering(nt, theta_deg, cfg.wavelength()));
    }
    out
}

/// Radar receive array in the DD domain:
/// `y_nr[k,l] = sum_j sum_nt a_r(nr) a_t(nt) (h^j * x_nt)[k,l] + w`.
pub fn radar_receive_dd<R: Rng + ?Sized>(
    tx: &[DdFrame],
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Received<DdFrame>> {
    let cfg = &scenario.frame;
    let arrays = &scenario.arrays;
    check_tx(tx, arrays.n_t, cfg)?;
    let lambda = cfg.wavelength();
    let mut rx = vec![DdFrame::zeros_like(cfg); arrays.n_r];
    for target in &scenario.targets {
        let beam = tx_beam(tx, target.theta_deg, arrays, cfg);
        let echo = dd_channel_matrix(std::slice::from_ref(target), cfg).apply(&beam)?;
        for (nr, y) in rx.iter_mut().enumerate() {
            y.add_scaled(&echo, arrays.rx_steering(nr, target.theta_deg, lambda));
        }
    }
    Ok(finish(rx, scenario, rng))
}

/// Radar receive array in the TF domain:
/// `Y_nr[n,m] = sum_j a_r(nr) (sum_nt a_t(nt) X_nt[n,m]) H^j[n,m] + W`.
pub fn radar_receive_tf<R: Rng + ?Sized>(
    tx: &[TfFrame],
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Received<TfFrame>> {
    let cfg = &scenario.frame;
    let arrays = &scenario.arrays;
    check_tx(tx, arrays.n_t, cfg)?;
    let lambda = cfg.wavelength();
    let mut rx = vec![TfFrame::zeros_like(cfg); arrays.n_r];
    for target in &scenario.targets {
        let mut echo = tx_beam(tx, target.theta_deg, arrays, cfg);
        for n in 0..cfg.n {
            for m in 0..cfg.m {
                echo[(n, m)] *= target.tf_response(n, m, cfg);
            }
        }
        for (nr, y) in rx.iter_mut().enumerate() {
            y.add_scaled(&echo, arrays.rx_steering(nr, target.theta_deg, lambda));
        }
    }
    Ok(finish(rx, scenario, rng))
}

/// Communication receive array with the true block channel.
#[derive(Debug, Clone)]
pub struct CommReceived {
    pub frames: Vec<DdFrame>,
    pub channel: MimoDdChannel,
    pub noise_var: f64,
}

/// `y_nc = sum_nt h_(nc,nt) x_nt + w_nc`.
pub fn comm_receive_dd<R: Rng + ?Sized>(
    tx: &[DdFrame],
    scenario: &Scenario,
    rng: &mut R,
) -> Result<CommReceived> {
    let cfg = &scenario.frame;
    check_tx(tx, scenario.arrays.n_t, cfg)?;
    let comm = scenario
        .comm
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("scenario has no communication paths".into()))?;
    comm.validate(&scenario.arrays)?;
    let channel = comm.mimo_channel(cfg);
    let frames = channel.apply(tx)?;
    let Received { frames, noise_var } = finish(frames, scenario, rng);
    Ok(CommReceived { frames, channel, noise_var })
}

// ---------------------------------------------------------------------------
// File representation
// ---------------------------------------------------------------------------

fn unit_gain() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Serialized form of a target: physical parameters only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub theta_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    /// `[re, im]`.
    #[serde(default = "unit_gain")]
    pub gain: Complex64,
}

/// Serialized form of the array geometry; spacings default to half a wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub n_t: usize,
    pub n_r: usize,
    pub n_c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_spacing_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_spacing_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub range_m: f64,
    pub velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommPathsSpec {
    pub paths: Vec<PathSpec>,
    /// `gains[nc][nt][j]` as `[re, im]`; drawn from the scenario seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<Vec<Complex64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub frame: FrameConfig,
    pub arrays: ArraySpec,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_paths: Option<CommPathsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        let frame = self.frame;
        frame.validate()?;
        let half = frame.wavelength() / 2.0;
        let arrays = ArrayConfig {
            n_t: self.arrays.n_t,
            n_r: self.arrays.n_r,
            n_c: self.arrays.n_c,
            tx_spacing_m: self.arrays.tx_spacing_m.unwrap_or(half),
            rx_spacing_m: self.arrays.rx_spacing_m.unwrap_or(half),
        };
        arrays.validate()?;
        let targets = self
            .targets
            .iter()
            .map(|t| Target::snapped(t.theta_deg, t.range_m, t.velocity_mps, t.gain, &frame))
            .collect::<Result<Vec<_>>>()?;
        let comm = match &self.comm_paths {
            None => None,
            Some(spec) => {
                let paths = spec
                    .paths
                    .iter()
                    .map(|p| Target::snapped(0.0, p.range_m, p.velocity_mps, unit_gain(), &frame))
                    .collect::<Result<Vec<_>>>()?;
                Some(match &spec.gains {
                    Some(gains) => CommPaths { paths, gains: gains.clone() },
                    None => {
                        let mut rng = rng::stream(self.seed, COMM_GAIN_STREAM);
                        CommPaths::random_gains(paths, arrays.n_c, arrays.n_t, &mut rng)
                    }
                })
            }
        };
        let scenario = Scenario {
            frame,
            arrays,
            targets,
            comm,
            snr_db: self.snr_db,
            noise_var: self.noise_var,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioSpec {
    fn from(s: &Scenario) -> Self {
        Self {
            frame: s.frame,
            arrays: ArraySpec {
                n_t: s.arrays.n_t,
                n_r: s.arrays.n_r,
                n_c: s.arrays.n_c,
                tx_spacing_m: Some(s.arrays.tx_spacing_m),
                rx_spacing_m: Some(s.arrays.rx_spacing_m),
            },
            targets: s
                .targets
                .iter()
                .map(|t| TargetSpec {
                    theta_deg: t.theta_deg,
                    range_m: t.range_m,
                    velocity_mps: t.velocity_mps,
                    gain: t.gain,
                })
                .collect(),
            comm_paths: s.comm.as_ref().map(|c| CommPathsSpec {
                paths: c
                    .paths
                    .iter()
                    .map(|p| PathSpec { range_m: p.range_m, velocity_mps: p.velocity_mps })
                    .collect(),
                gains: Some(c.gains.clone()),
            }),
            snr_db: s.snr_db,
            noise_var: s.noise_var,
            seed: s.seed,
        }
    }
}

/// Three well-separated targets at -25, 7 and 15 degrees.
pub fn well_separated_targets(cfg: &FrameConfig) -> Result<Vec<Target>> {
    [(-25.0, 68.31, 57.95), (7.0, 78.07, -104.31), (15.0, 48.79, 81.13)]
        .into_iter()
        .map(|(theta, r, v)| Target::snapped(theta, r, v, unit_gain(), cfg))
        .collect()
}

/// Three targets at 17, 13 and 15 degrees, 2 degrees apart.
pub fn closely_spaced_targets(cfg: &FrameConfig) -> Result<Vec<Target>> {
    [(17.0, 68.31, 46.36), (13.0, 48.79, -139.08), (15.0, 78.07, 81.13)]
        .into_iter()
        .map(|(theta, r, v)| Target::snapped(theta, r, v, unit_gain(), cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{isfft, sfft};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_frame(cfg: &FrameConfig, rng: &mut impl Rng) -> DdFrame {
        DdFrame::from_fn(cfg.n, cfg.m, |_, _| rng::complex_normal(rng, 1.0))
    }

    #[test]
    fn zero_shift_target_is_identity() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let t = Target::on_grid(0.0, 0, 0, c(1.0, 0.0), &cfg).unwrap();
        let h = dd_channel_matrix(&[t], &cfg).to_dense();
        assert!((h - DMatrix::identity(16, 16)).norm() < 1e-15);
    }

    #[test]
    fn unit_shift_on_2x2_grid() {
        let cfg = FrameConfig::nr_fr2().with_grid(2, 2);
        let t = Target::on_grid(0.0, 1, 1, c(1.0, 0.0), &cfg).unwrap();
        let h = dd_channel_matrix(&[t], &cfg);
        let phase = Complex64::from_polar(1.0, -2.0 * PI / 4.0);
        // row (k=0,l=0) reads x[1,1]; row (1,1) reads x[0,0]; etc.
        for row in 0..4 {
            let (k, l) = (row / 2, row % 2);
            let col = (l + 1) % 2 + ((k + 1) % 2) * 2;
            for cidx in 0..4 {
                let expected = if cidx == col { phase } else { c(0.0, 0.0) };
                assert!((h.entry(row, cidx) - expected).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn negative_doppler_wraps() {
        let cfg = FrameConfig::nr_fr2();
        let t = Target::snapped(7.0, 78.07, -104.31, c(1.0, 0.0), &cfg).unwrap();
        assert_eq!(t.doppler_bin, -9);
        assert_eq!(t.doppler_index(&cfg), cfg.n - 9);
        assert!(t.doppler_residual.abs() < 0.5 && t.delay_residual.abs() < 0.5);
    }

    #[test]
    fn adjoint_matches_dense_transpose() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 8);
        let mut r = rng::seeded(1);
        let targets: Vec<Target> = [(1, 2), (-1, 5), (3, 0)]
            .iter()
            .map(|&(k, l)| Target::on_grid(0.0, k, l, rng::unit_phase(&mut r), &cfg).unwrap())
            .collect();
        let h = dd_channel_matrix(&targets, &cfg);
        let y = random_frame(&cfg, &mut r);
        let got = h.apply_adjoint(&y).unwrap();
        let dense = h.to_dense().adjoint() * nalgebra::DVector::from_column_slice(y.as_slice());
        for (a, b) in got.as_slice().iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn broadside_zero_shift_echo_equals_input() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 8);
        let arrays = ArrayConfig::half_wavelength(1, 4, 1, &cfg);
        let mut s = Scenario::new(cfg, arrays);
        s.targets = vec![Target::on_grid(0.0, 0, 0, c(1.0, 0.0), &cfg).unwrap()];
        let mut r = rng::seeded(2);
        let x = random_frame(&cfg, &mut r);
        let rx = radar_receive_dd(std::slice::from_ref(&x), &s, &mut r).unwrap();
        assert_eq!(rx.noise_var, 0.0);
        for y in &rx.frames {
            assert!(y.max_abs_diff(&x) < 1e-14);
        }
        let tx_tf = isfft(&x, &cfg).unwrap();
        let rx_tf = radar_receive_tf(std::slice::from_ref(&tx_tf), &s, &mut r).unwrap();
        for y in &rx_tf.frames {
            assert!(y.max_abs_diff(&tx_tf) < 1e-15);
        }
    }

    #[test]
    fn receive_phase_progression() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 8);
        let arrays = ArrayConfig::half_wavelength(2, 4, 1, &cfg);
        let mut s = Scenario::new(cfg, arrays);
        s.targets = vec![Target::on_grid(7.0, 1, 2, c(0.6, -0.8), &cfg).unwrap()];
        let mut r = rng::seeded(5);
        let tx = vec![random_frame(&cfg, &mut r), random_frame(&cfg, &mut r)];
        let rx = radar_receive_dd(&tx, &s, &mut r).unwrap().frames;
        let expected = Complex64::from_polar(1.0, -PI * 7f64.to_radians().sin());
        for nr in 0..3 {
            for (a, b) in rx[nr + 1].as_slice().iter().zip(rx[nr].as_slice()) {
                assert!((a / b - expected).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn tf_and_dd_paths_agree() {
        let cfg = FrameConfig::nr_fr2().with_grid(8, 8);
        let arrays = ArrayConfig::half_wavelength(2, 3, 1, &cfg);
        let mut s = Scenario::new(cfg, arrays);
        s.targets = vec![
            Target::on_grid(-20.0, -3, 2, c(0.3, 0.9), &cfg).unwrap(),
            Target::on_grid(10.0, 2, 7, c(-1.0, 0.2), &cfg).unwrap(),
        ];
        let mut r = rng::seeded(8);
        let tx: Vec<DdFrame> = (0..2).map(|_| random_frame(&cfg, &mut r)).collect();
        let tx_tf: Vec<TfFrame> = tx.iter().map(|x| isfft(x, &cfg).unwrap()).collect();
        let dd = radar_receive_dd(&tx, &s, &mut r).unwrap().frames;
        let tf = radar_receive_tf(&tx_tf, &s, &mut r).unwrap().frames;
        for (a, b) in dd.iter().zip(&tf) {
            assert!(a.max_abs_diff(&sfft(b, &cfg).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn tf_response_is_separable_phase_ramp() {
        let cfg = FrameConfig::nr_fr2().with_grid(8, 8);
        let beta = c(0.8, 0.6);
        let t = Target::on_grid(0.0, 2, 3, beta, &cfg).unwrap();
        let (nu, tau) = (t.doppler_hz(&cfg), t.delay_s(&cfg));
        for n in 0..8 {
            for m in 0..8 {
                let expected = beta
                    * Complex64::from_polar(1.0, -2.0 * PI * nu * tau)
                    * Complex64::from_polar(
                        1.0,
                        2.0 * PI * (nu * n as f64 * cfg.delta_t() - m as f64 * cfg.delta_f * tau),
                    );
                assert!((t.tf_response(n, m, &cfg) - expected).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn comm_requires_paths() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let s = Scenario::new(cfg, ArrayConfig::half_wavelength(1, 1, 1, &cfg));
        let x = vec![DdFrame::zeros_like(&cfg)];
        assert!(comm_receive_dd(&x, &s, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn tx_count_mismatch() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let s = Scenario::new(cfg, ArrayConfig::half_wavelength(2, 2, 1, &cfg));
        let x = vec![DdFrame::zeros_like(&cfg)];
        assert!(matches!(
            radar_receive_dd(&x, &s, &mut rng::seeded(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn table_geometry_snaps_to_expected_bins() {
        let cfg = FrameConfig::nr_fr2();
        let t = well_separated_targets(&cfg).unwrap();
        let k: Vec<i64> = t.iter().map(|t| t.doppler_bin).collect();
        let l: Vec<usize> = t.iter().map(|t| t.delay_bin).collect();
        assert_eq!(k, vec![5, -9, 7]);
        assert_eq!(l, vec![7, 8, 5]);
        let t = closely_spaced_targets(&cfg).unwrap();
        let kl: Vec<(i64, usize)> = t.iter().map(|t| (t.doppler_bin, t.delay_bin)).collect();
        assert_eq!(kl, vec![(4, 7), (-12, 5), (7, 8)]);
    }

    #[test]
    fn scenario_spec_round_trip() {
        let spec: ScenarioSpec = serde_json::from_str(
            r#"{
                "frame": {"n": 8, "m": 16, "delta_f": 120000.0, "f_c": 24.25e9},
                "arrays": {"n_t": 2, "n_r": 4, "n_c": 2},
                "targets": [{"theta_deg": 7.0, "range_m": 78.07, "velocity_mps": -104.31}],
                "comm_paths": {"paths": [{"range_m": 48.79, "velocity_mps": 81.13}]},
                "snr_db": 20.0,
                "seed": 11
            }"#,
        )
        .unwrap();
        let s = spec.build().unwrap();
        let again = ScenarioSpec::from(&s);
        let text = serde_json::to_string(&again).unwrap();
        let s2 = serde_json::from_str::<ScenarioSpec>(&text).unwrap().build().unwrap();
        assert_eq!(s, s2);
    }
}
