//! Communication link: QPSK mapping, private-bin aware frame construction,
//! MIMO LMMSE equalization in the DD domain, symbol recovery through the
//! reduced ISFFT system, rate accounting and a simple impulse-pilot channel
//! estimator.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{DdTap, MimoDdChannel, SparseDdChannel};
use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{isfft, DdFrame, FrameConfig, ReducedIsfftMatrix, RegularizedReducedSolver, TfFrame, DENSE_CAP};
use crate::rng;
use crate::virtual_array::{apply_plan, PrivateBinPlan};

pub const QPSK_BITS: usize = 2;

/// Gray-mapped unit-power QPSK: bits `(b0, b1)` map to
/// `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn modulate_qpsk(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    bits.chunks_exact(2)
        .map(|b| {
            if b[0] > 1 || b[1] > 1 {
                return Err(Error::InvalidConfig("bits must be 0 or 1".into()));
            }
            let re = 1.0 - 2.0 * b[0] as f64;
            let im = 1.0 - 2.0 * b[1] as f64;
            Ok(Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2))
        })
        .collect()
}

/// Quadrant decision.
pub fn demodulate_qpsk(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [(s.re < 0.0) as u8, (s.im < 0.0) as u8])
        .collect()
}

pub fn random_bits<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<u8> {
    (0..count).map(|_| rng.random_range(0..2u8)).collect()
}

/// Places each antenna's symbols on its DD grid in row-major order, skipping
/// the plan's DD zeros, then forms the TF frames with private-bin nulling.
pub fn build_tx_frames(
    streams: &[Vec<Complex64>],
    plan: &PrivateBinPlan,
    cfg: &FrameConfig,
) -> Result<(Vec<DdFrame>, Vec<TfFrame>)> {
    if streams.len() != plan.n_t() {
        return Err(dim_mismatch(format!("{} symbol streams", plan.n_t()), streams.len()));
    }
    let mut dd = Vec::with_capacity(streams.len());
    for (p, symbols) in streams.iter().enumerate() {
        let expected = plan.info_symbols(p, cfg);
        if symbols.len() != expected {
            return Err(dim_mismatch(format!("{expected} symbols on antenna {p}"), symbols.len()));
        }
        let zeros = plan.dd_zeros(p);
        let mut frame = DdFrame::zeros_like(cfg);
        let mut it = symbols.iter();
        for k in 0..cfg.n {
            for l in 0..cfg.m {
                if !zeros.contains(&(k, l)) {
                    frame[(k, l)] = *it.next().expect("count checked above");
                }
            }
        }
        dd.push(frame);
    }
    let tf = apply_plan(&dd, plan, cfg)?;
    Ok((dd, tf))
}

/// Symbols of an antenna's DD frame in transmit order (DD zeros skipped).
pub fn extract_dd_symbols(frame: &DdFrame, plan: &PrivateBinPlan, antenna: usize) -> Vec<Complex64> {
    let zeros = plan.dd_zeros(antenna);
    let (n, m) = frame.dims();
    let mut out = Vec::with_capacity(n * m - zeros.len());
    for k in 0..n {
        for l in 0..m {
            if !zeros.contains(&(k, l)) {
                out.push(frame[(k, l)]);
            }
        }
    }
    out
}

/// Largest system `Auto` solves densely; the dense path costs `O(n^3)`
/// while a CG iteration costs a few sparse channel applications.
pub const AUTO_DENSE_UNKNOWNS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerMethod {
    /// Dense solve up to [`AUTO_DENSE_UNKNOWNS`] unknowns, otherwise CG.
    #[default]
    Auto,
    Cg,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgParams {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgParams {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 500 }
    }
}

pub struct EqualizerInput<'a> {
    pub y: &'a [DdFrame],
    pub channel: &'a MimoDdChannel,
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct Equalized {
    pub x: Vec<DdFrame>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// `x = (H^H H + s^2 I)^{-1} H^H y`.
pub fn lmmse_equalize(input: &EqualizerInput<'_>, method: EqualizerMethod, cg: &CgParams) -> Result<Equalized> {
    if !(input.noise_var > 0.0 && input.noise_var.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise variance must be > 0, got {}", input.noise_var)));
    }
    let h = input.channel;
    if input.y.len() != h.n_c() {
        return Err(dim_mismatch(format!("{} receive frames", h.n_c()), input.y.len()));
    }
    let (n, m) = input.y.first().map(DdFrame::dims).ok_or_else(|| Error::InvalidConfig("no receive frames".into()))?;
    let unknowns = h.n_t() * n * m;
    let use_dense = match method {
        EqualizerMethod::Dense if unknowns > DENSE_CAP => {
            return Err(Error::CapExceeded { side: unknowns, cap: DENSE_CAP });
        }
        EqualizerMethod::Dense => true,
        EqualizerMethod::Cg => false,
        EqualizerMethod::Auto => unknowns <= AUTO_DENSE_UNKNOWNS,
    };
    if use_dense {
        lmmse_dense(input, n, m)
    } else {
        lmmse_cg(input, n, m, cg)
    }
}

fn flatten(frames: &[DdFrame]) -> Vec<Complex64> {
    frames.iter().flat_map(|f| f.as_slice().iter().copied()).collect()
}

fn unflatten(v: &[Complex64], count: usize, n: usize, m: usize) -> Vec<DdFrame> {
    (0..count)
        .map(|i| DdFrame::from_vec(n, m, v[i * n * m..(i + 1) * n * m].to_vec()).expect("sizes match"))
        .collect()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sq(a: &[Complex64]) -> f64 {
    a.iter().map(Complex64::norm_sqr).sum()
}

fn lmmse_cg(input: &EqualizerInput<'_>, n: usize, m: usize, params: &CgParams) -> Result<Equalized> {
    let h = input.channel;
    let n_t = h.n_t();
    let normal = |v: &[Complex64]| -> Result<Vec<Complex64>> {
        let frames = unflatten(v, n_t, n, m);
        let hv = h.apply(&frames)?;
        let mut out = flatten(&h.apply_adjoint(&hv)?);
        for (o, x) in out.iter_mut().zip(v) {
            *o += x * input.noise_var;
        }
        Ok(out)
    };
    let b = flatten(&h.apply_adjoint(input.y)?);
    let b_norm = norm_sq(&b).sqrt();
    let mut x = vec![Complex64::new(0.0, 0.0); b.len()];
    if b_norm == 0.0 {
        return Ok(Equalized { x: unflatten(&x, n_t, n, m), iterations: 0, converged: true, relative_residual: 0.0 });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = norm_sq(&r);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < params.max_iterations {
        let ap = normal(&p)?;
        let alpha = rr / dot(&p, &ap).re;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        iterations += 1;
        let rr_next = norm_sq(&r);
        rel = rr_next.sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        if rel < params.tolerance {
            break;
        }
        let beta = rr_next / rr;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_next;
    }
    Ok(Equalized {
        x: unflatten(&x, n_t, n, m),
        iterations,
        converged: rel < params.tolerance,
        relative_residual: rel,
    })
}

fn lmmse_dense(input: &EqualizerInput<'_>, n: usize, m: usize) -> Result<Equalized> {
    let h = input.channel.to_dense();
    let y = DVector::from_vec(flatten(input.y));
    let mut a = h.ad_mul(&h);
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(input.noise_var, 0.0);
    }
    let rhs = h.ad_mul(&y);
    let chol = a.clone().cholesky().ok_or(Error::SingularMatrix { condition: f64::INFINITY })?;
    let x = chol.solve(&rhs);
    let rel = (&a * &x - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
    Ok(Equalized { x: unflatten(x.as_slice(), input.channel.n_t(), n, m), iterations: 0, converged: true, relative_residual: rel })
}

/// How the reduced ISFFT system is solved during symbol recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recovery {
    /// Exact LU solve.
    Exact,
    /// Tikhonov-regularized solve with the given weight.
    Regularized { delta: f64 },
}

/// Recovers each antenna's information symbols from its equalized DD frame:
/// ISFFT, drop the nulled private-bin rows, solve the reduced system.
pub fn recover_info_symbols(
    x_hat: &[DdFrame],
    plan: &PrivateBinPlan,
    cfg: &FrameConfig,
    recovery: Recovery,
) -> Result<Vec<Vec<Complex64>>> {
    if x_hat.len() != plan.n_t() {
        return Err(dim_mismatch(plan.n_t(), x_hat.len()));
    }
    // antennas with the same removal pattern share one factorization
    let mut solvers: Vec<(usize, ReducedIsfftMatrix, Option<RegularizedReducedSolver>)> = Vec::new();
    let mut out = Vec::with_capacity(x_hat.len());
    for (p, x) in x_hat.iter().enumerate() {
        let same = |q: usize| plan.removed_tf_bins(q) == plan.removed_tf_bins(p) && plan.dd_zeros(q) == plan.dd_zeros(p);
        let idx = match solvers.iter().position(|(q, _, _)| same(*q)) {
            Some(i) => i,
            None => {
                let reduced = plan.reduced_matrix(p, cfg)?;
                let reg = match recovery {
                    Recovery::Exact => None,
                    Recovery::Regularized { delta } => Some(reduced.regularized(delta)?),
                };
                solvers.push((p, reduced, reg));
                solvers.len() - 1
            }
        };
        let (_, reduced, reg) = &solvers[idx];
        let rhs = reduced.keep_rows(&isfft(x, cfg)?)?;
        let sol = match reg {
            Some(r) => r.solve(&rhs)?,
            None => reduced.solve(&rhs)?,
        };
        out.push(sol.iter().copied().collect());
    }
    Ok(out)
}

/// Burst-level rate bookkeeping for a private-bin plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub n_p: usize,
    pub info_symbols: usize,
    pub throughput_bits: usize,
    /// Fraction of the `N_t NM` symbol slots given up to DD zeros.
    pub loss_fraction: f64,
    /// `(N_t - 1) * bits_per_symbol * delta_f`.
    pub per_bin_loss_bps: f64,
    pub loss_bps: f64,
}

/// Each private bin costs one DD zero on each of the `N_t - 1` antennas that
/// null it.
pub fn rate_accounting(cfg: &FrameConfig, n_t: usize, n_p: usize, bits_per_symbol: usize) -> Result<RateReport> {
    cfg.validate()?;
    if n_t == 0 || n_p > n_t {
        return Err(Error::InvalidConfig(format!("need 0 <= N_p <= N_t and N_t >= 1, got N_p = {n_p}, N_t = {n_t}")));
    }
    let slots = n_t * cfg.bins();
    let lost = n_p * (n_t - 1);
    let info_symbols = slots - lost;
    let per_bin_loss_bps = ((n_t - 1) * bits_per_symbol) as f64 * cfg.delta_f;
    Ok(RateReport {
        n_p,
        info_symbols,
        throughput_bits: info_symbols * bits_per_symbol,
        loss_fraction: lost as f64 / slots as f64,
        per_bin_loss_bps,
        loss_bps: n_p as f64 * per_bin_loss_bps,
    })
}

/// Rate bookkeeping from a plan's actual DD zero counts, which also covers
/// probed and custom plans.
pub fn plan_rate(plan: &PrivateBinPlan, cfg: &FrameConfig, bits_per_symbol: usize) -> Result<RateReport> {
    cfg.validate()?;
    let slots = plan.n_t() * cfg.bins();
    let info_symbols = plan.total_info_symbols(cfg);
    let lost = slots - info_symbols;
    let per_bin_loss_bps = if plan.n_p() == 0 {
        0.0
    } else {
        (lost * bits_per_symbol) as f64 * cfg.delta_f / plan.n_p() as f64
    };
    Ok(RateReport {
        n_p: plan.n_p(),
        info_symbols,
        throughput_bits: info_symbols * bits_per_symbol,
        loss_fraction: lost as f64 / slots as f64,
        per_bin_loss_bps,
        loss_bps: plan.n_p() as f64 * per_bin_loss_bps,
    })
}

/// Error counts and rate figures for one link configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub ber: f64,
    pub ser: f64,
    pub bit_errors: usize,
    pub bits: usize,
    pub symbol_errors: usize,
    pub symbols: usize,
    pub throughput_bits: usize,
    pub rate_loss_fraction: f64,
    pub rate_loss_bps: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCount {
    pub bit_errors: usize,
    pub bits: usize,
    pub symbol_errors: usize,
    pub symbols: usize,
}

impl ErrorCount {
    pub fn add(&mut self, sent_bits: &[u8], got: &[Complex64]) {
        let got_bits = demodulate_qpsk(got);
        for (a, b) in sent_bits.chunks_exact(2).zip(got_bits.chunks_exact(2)) {
            let wrong = (a[0] != b[0]) as usize + (a[1] != b[1]) as usize;
            self.bit_errors += wrong;
            self.symbol_errors += (wrong > 0) as usize;
        }
        self.bits += sent_bits.len();
        self.symbols += sent_bits.len() / 2;
    }

    pub fn merge(&mut self, other: &ErrorCount) {
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.symbol_errors += other.symbol_errors;
        self.symbols += other.symbols;
    }

    pub fn report(&self, rate: &RateReport) -> LinkReport {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        LinkReport {
            ber: ratio(self.bit_errors, self.bits),
            ser: ratio(self.symbol_errors, self.symbols),
            bit_errors: self.bit_errors,
            bits: self.bits,
            symbol_errors: self.symbol_errors,
            symbols: self.symbols,
            throughput_bits: rate.throughput_bits,
            rate_loss_fraction: rate.loss_fraction,
            rate_loss_bps: rate.loss_bps,
        }
    }
}

/// Received pilot frames: `frames[nt][nc]` is receive antenna `nc` while only
/// transmit antenna `nt` sends an impulse at DD bin `(0, 0)`.
#[derive(Debug, Clone)]
pub struct PilotBursts {
    pub frames: Vec<Vec<DdFrame>>,
    pub amplitude: f64,
    pub noise_var: f64,
}

/// Simulates the orthogonal-in-time impulse pilot schedule. The impulse
/// amplitude is `sqrt(NM)`, so a pilot frame carries the same energy as a
/// data frame of unit-power symbols.
pub fn pilot_bursts<R: Rng + ?Sized>(
    channel: &MimoDdChannel,
    cfg: &FrameConfig,
    noise_var: f64,
    rng: &mut R,
) -> Result<PilotBursts> {
    let amplitude = (cfg.bins() as f64).sqrt();
    let mut pilot = DdFrame::zeros_like(cfg);
    pilot[(0, 0)] = Complex64::new(amplitude, 0.0);
    let mut frames = Vec::with_capacity(channel.n_t());
    for nt in 0..channel.n_t() {
        let mut row = Vec::with_capacity(channel.n_c());
        for nc in 0..channel.n_c() {
            let mut y = channel.block(nc, nt).apply(&pilot)?;
            if noise_var > 0.0 {
                for z in y.as_mut_slice() {
                    *z += rng::complex_normal(rng, noise_var);
                }
            }
            row.push(y);
        }
        frames.push(row);
    }
    Ok(PilotBursts { frames, amplitude, noise_var })
}

/// Reads the channel taps off the pilot responses: every DD bin whose
/// magnitude exceeds `3 sigma` becomes a tap.
pub fn estimate_channel_pilot(bursts: &PilotBursts, cfg: &FrameConfig) -> Result<MimoDdChannel> {
    let n_t = bursts.frames.len();
    let n_c = bursts.frames.first().map_or(0, Vec::len);
    if n_t == 0 || n_c == 0 || !(bursts.amplitude > 0.0) {
        return Err(Error::InvalidConfig("empty pilot burst".into()));
    }
    let threshold = 3.0 * bursts.noise_var.max(0.0).sqrt();
    let mut blocks = vec![None; n_c * n_t];
    let mut any = false;
    for (nt, row) in bursts.frames.iter().enumerate() {
        if row.len() != n_c {
            return Err(dim_mismatch(n_c, row.len()));
        }
        for (nc, y) in row.iter().enumerate() {
            y.check_dims(cfg)?;
            let mut taps = Vec::new();
            for k in 0..cfg.n {
                for l in 0..cfg.m {
                    let v = y[(k, l)];
                    if v.norm() > threshold && v.norm() > 0.0 {
                        taps.push(DdTap { doppler_shift: k, delay_shift: l, coefficient: v / bursts.amplitude });
                    }
                }
            }
            any |= !taps.is_empty();
            blocks[nt + nc * n_t] = Some(SparseDdChannel::from_taps(cfg, taps));
        }
    }
    if !any {
        return Err(Error::EmptyChannel);
    }
    MimoDdChannel::new(n_c, n_t, blocks.into_iter().map(|b| b.expect("filled")).collect())
}

/// Dense `(H^H H + s^2 I)^{-1} H^H` applied to `y`; used as a reference.
pub fn lmmse_reference(h: &DMatrix<Complex64>, y: &DVector<Complex64>, noise_var: f64) -> Option<DVector<Complex64>> {
    let mut a = h.ad_mul(h);
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    a.lu().solve(&h.ad_mul(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constellation() {
        let s = modulate_qpsk(&[0, 0, 0, 1, 1, 1, 1, 0]).unwrap();
        let h = FRAC_1_SQRT_2;
        assert_eq!(s, vec![c(h, h), c(h, -h), c(-h, -h), c(-h, h)]);
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert!(modulate_qpsk(&[0, 1, 1]).is_err());
        assert!(modulate_qpsk(&[0, 2]).is_err());
    }

    #[test]
    fn qpsk_round_trip() {
        let mut r = rng::seeded(5);
        let bits = random_bits(10_000, &mut r);
        assert_eq!(demodulate_qpsk(&modulate_qpsk(&bits).unwrap()), bits);
    }

    #[test]
    fn decision_regions() {
        let mut r = rng::seeded(6);
        let bits = random_bits(2000, &mut r);
        let s = modulate_qpsk(&bits).unwrap();
        // minimum distance is sqrt(2); anything shorter than half of it is safe
        let noisy: Vec<Complex64> = s
            .iter()
            .map(|z| z + Complex64::from_polar(0.7, r.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        assert_eq!(demodulate_qpsk(&noisy), bits);
    }

    #[test]
    fn rate_figures() {
        let cfg = FrameConfig::nr_fr2();
        let r = rate_accounting(&cfg, 4, 4, 2).unwrap();
        assert!((r.loss_fraction * 100.0 - 0.0366).abs() < 1e-4);
        assert_eq!(r.per_bin_loss_bps, 7.2e5);
        assert_eq!(r.throughput_bits, (4 * 8192 - 12) * 2);
        let zero = rate_accounting(&cfg, 4, 0, 2).unwrap();
        assert_eq!(zero.loss_fraction, 0.0);
        assert!(rate_accounting(&cfg, 4, 5, 2).is_err());
    }

    #[test]
    fn frame_construction_counts() {
        let cfg = FrameConfig::desk();
        let plan = PrivateBinPlan::diagonal(&cfg, 4, 4).unwrap();
        let streams: Vec<Vec<Complex64>> = (0..4).map(|_| vec![c(1.0, 0.0); 509]).collect();
        let (dd, tf) = build_tx_frames(&streams, &plan, &cfg).unwrap();
        for (p, frame) in dd.iter().enumerate() {
            for &(k, l) in plan.dd_zeros(p) {
                assert_eq!(frame[(k, l)], c(0.0, 0.0));
            }
            assert_eq!(extract_dd_symbols(frame, &plan, p), streams[p]);
        }
        assert_eq!(tf.len(), 4);
        let short: Vec<Vec<Complex64>> = (0..4).map(|_| vec![c(1.0, 0.0); 510]).collect();
        assert!(build_tx_frames(&short, &plan, &cfg).is_err());
    }

    #[test]
    fn identity_channel_equalizes_to_input() {
        let cfg = FrameConfig::nr_fr2().with_grid(4, 4);
        let h = MimoDdChannel::new(1, 1, vec![SparseDdChannel::identity(&cfg)]).unwrap();
        let mut r = rng::seeded(2);
        let y = vec![DdFrame::from_fn(4, 4, |_, _| rng::complex_normal(&mut r, 1.0))];
        for method in [EqualizerMethod::Cg, EqualizerMethod::Dense] {
            let out = lmmse_equalize(&EqualizerInput { y: &y, channel: &h, noise_var: 1e-12 }, method, &CgParams::default())
                .unwrap();
            assert!(out.x[0].max_abs_diff(&y[0]) < 1e-10);
        }
        assert!(lmmse_equalize(&EqualizerInput { y: &y, channel: &h, noise_var: 0.0 }, EqualizerMethod::Cg, &CgParams::default()).is_err());
    }

    #[test]
    fn pilot_reads_single_tap() {
        let cfg = FrameConfig::desk();
        let tap = DdTap { doppler_shift: 2, delay_shift: 3, coefficient: c(1.0, 0.0) };
        let h = MimoDdChannel::new(1, 1, vec![SparseDdChannel::from_taps(&cfg, [tap])]).unwrap();
        let bursts = pilot_bursts(&h, &cfg, 0.0, &mut rng::seeded(0)).unwrap();
        let est = estimate_channel_pilot(&bursts, &cfg).unwrap();
        assert_eq!(est.block(0, 0).taps(), &[tap]);
    }
}
