//! Batch experiments: coarse radar estimation, sparse super-resolution,
//! Monte Carlo detection probability and the communication link.
//!
//! Each runner takes an [`ExperimentConfig`] and returns an
//! [`ExperimentOutput`] holding the main result table, auxiliary tables for
//! plotting and a JSON summary. Results depend only on the configuration and
//! its seed; Monte Carlo trials use independent RNG streams and are reduced
//! in trial order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::channel::{radar_receive_tf, ArrayConfig, CommPaths, Scenario, ScenarioSpec, Target};
use crate::coarse::{coarse_estimate, CoarseParams, CoarseResult};
use crate::comm::{
    build_tx_frames, estimate_channel_pilot, extract_dd_symbols, lmmse_equalize, modulate_qpsk, pilot_bursts,
    plan_rate, random_bits, recover_info_symbols, CgParams, EqualizerInput, EqualizerMethod, ErrorCount,
    RateReport, Recovery, QPSK_BITS,
};
use crate::error::{Error, Result};
use crate::grid::{sfft, DdFrame, FrameConfig, TfFrame};
use crate::rng::{self, SimRng};
use crate::virtual_array::{
    detect_with_refinement, extract_virtual_measurement, DdScorer, DetectParams, Detection, PlanSpec, PrivateBinPlan,
};

const TARGET_STREAM: u64 = 1 << 40;
const DATA_STREAM: u64 = 2 << 40;
const NOISE_STREAM: u64 = 3 << 40;
const GAIN_STREAM: u64 = 4 << 40;
const PILOT_STREAM: u64 = 5 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CoarseRadar,
    SsrRadar,
    DetectMc,
    CommRate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CoarseRadar => "coarse-radar",
            ExperimentKind::SsrRadar => "ssr-radar",
            ExperimentKind::DetectMc => "detect-mc",
            ExperimentKind::CommRate => "comm-rate",
        }
    }
}

/// How a planted target is matched to a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// Within one angle cell and on the exact Doppler/delay bin.
    #[default]
    AngleAndDd,
    AngleOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloParams {
    pub trials: usize,
    pub targets: usize,
    pub n_p: Vec<usize>,
    /// Initial angle spacings in degrees; empty uses `floor(90 / N_r)`.
    pub d_alpha: Vec<f64>,
    pub min_separation_deg: Vec<f64>,
    pub angle_span_deg: [f64; 2],
    pub match_rule: MatchRule,
    /// Known probe on owned private bins.
    pub probe: bool,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        Self {
            trials: 100,
            targets: 3,
            n_p: vec![1, 2, 3, 4],
            d_alpha: Vec::new(),
            min_separation_deg: vec![2.0],
            angle_span_deg: [-60.0, 60.0],
            match_rule: MatchRule::AngleAndDd,
            probe: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKnowledge {
    #[default]
    Perfect,
    /// Impulse pilots sent one transmit antenna at a time.
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommParams {
    /// Private-bin counts; 0 is the all-shared baseline.
    pub n_p: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub equalizer: EqualizerMethod,
    pub cg: CgParams,
    pub channel_knowledge: ChannelKnowledge,
    /// Grid used for rate accounting; defaults to the scenario grid.
    pub rate_frame: Option<FrameConfig>,
    /// Known probe on owned private bins.
    pub probe: bool,
}

impl Default for CommParams {
    fn default() -> Self {
        Self {
            n_p: vec![0, 1, 2, 3, 4],
            snr_db: vec![0.0, 10.0, 20.0],
            trials: 4,
            equalizer: EqualizerMethod::Auto,
            cg: CgParams::default(),
            channel_knowledge: ChannelKnowledge::Perfect,
            rate_frame: None,
            probe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: Option<PathBuf>,
    /// Treat solver non-convergence as a failure.
    pub strict: bool,
}

/// Complete description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub scenario: ScenarioSpec,
    /// Private-bin plan for the radar experiments.
    #[serde(default = "default_plan")]
    pub plan: PlanSpec,
    #[serde(default)]
    pub coarse: CoarseParams,
    #[serde(default)]
    pub detect: DetectParams,
    #[serde(default)]
    pub monte_carlo: MonteCarloParams,
    #[serde(default)]
    pub comm: CommParams,
    #[serde(default)]
    pub output: OutputParams,
}

fn default_plan() -> PlanSpec {
    PlanSpec::Diagonal { n_p: 4, probe: true }
}

impl ExperimentConfig {
    /// Parses TOML or JSON, chosen by extension (`.toml`, `.json`); other
    /// extensions try JSON first.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            Some("json") => Self::from_json(&text),
            _ => Self::from_json(&text).or_else(|_| Self::from_toml(&text)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let scenario = self.scenario.build()?;
        self.detect.validate()?;
        if self.coarse.n_fft != 0 && self.coarse.n_fft < scenario.arrays.n_r {
            return Err(Error::InvalidConfig("coarse.n_fft must be 0 or >= N_r".into()));
        }
        let mc = &self.monte_carlo;
        if mc.trials == 0 || self.comm.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        let [lo, hi] = mc.angle_span_deg;
        if !(-90.0..=90.0).contains(&lo) || !(-90.0..=90.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidConfig(format!("angle span [{lo}, {hi}] must lie within [-90, 90]")));
        }
        if mc.min_separation_deg.iter().any(|s| !(*s >= 0.0)) || mc.d_alpha.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidConfig("separations must be >= 0 and spacings > 0".into()));
        }
        match self.experiment {
            ExperimentKind::SsrRadar => {
                self.plan.build(&scenario.frame, scenario.arrays.n_t)?;
            }
            ExperimentKind::DetectMc => {
                if mc.n_p.is_empty() || mc.min_separation_deg.is_empty() || mc.targets == 0 {
                    return Err(Error::InvalidConfig("monte_carlo needs n_p, min_separation_deg and targets".into()));
                }
                for &n_p in &mc.n_p {
                    if n_p == 0 {
                        return Err(Error::InvalidConfig("detection needs N_p >= 1".into()));
                    }
                    PrivateBinPlan::diagonal(&scenario.frame, scenario.arrays.n_t, n_p)?.probed(&scenario.frame, mc.probe)?;
                }
                let span = (hi.floor() - lo.ceil()) as usize + 1;
                if span < mc.targets {
                    return Err(Error::InvalidConfig("angle span too small for the target count".into()));
                }
            }
            ExperimentKind::CommRate => {
                if scenario.comm.is_none() {
                    return Err(Error::InvalidConfig("comm-rate needs scenario.comm_paths".into()));
                }
                if self.comm.n_p.is_empty() || self.comm.snr_db.is_empty() {
                    return Err(Error::InvalidConfig("comm needs n_p and snr_db lists".into()));
                }
                for &n_p in &self.comm.n_p {
                    PrivateBinPlan::diagonal(&scenario.frame, scenario.arrays.n_t, n_p)?
                        .probed(&scenario.frame, self.comm.probe)?;
                }
                if let Some(f) = &self.comm.rate_frame {
                    f.validate()?;
                }
            }
            ExperimentKind::CoarseRadar => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Formats like C's `%.12g`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn float(&self, row: usize, name: &str) -> Option<f64> {
        match self.rows.get(row)?.get(self.column(name)?)? {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) => format_float(*v),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub table: ResultTable,
    /// Named auxiliary tables, written as `<name>.csv`.
    pub aux: BTreeMap<String, ResultTable>,
    pub summary: serde_json::Value,
    /// Solver runs that hit their iteration cap.
    pub non_converged: usize,
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::CoarseRadar => run_coarse_radar(config),
        ExperimentKind::SsrRadar => run_ssr_radar(config),
        ExperimentKind::DetectMc => run_detect_mc(config),
        ExperimentKind::CommRate => run_comm_rate(config),
    }
}

/// Writes the main CSV, auxiliary CSVs, `summary.json` and `manifest.json`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, output: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut write = |name: String, body: String| -> Result<PathBuf> {
        let path = dir.join(&name);
        std::fs::write(&path, &body)?;
        files.insert(name, hex::encode(Sha256::digest(body.as_bytes())));
        Ok(path)
    };
    let mut written = vec![write(format!("{}.csv", output.kind.name()), output.table.to_csv())?];
    for (name, table) in &output.aux {
        written.push(write(format!("{name}.csv"), table.to_csv())?);
    }
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes") + "\n";
    written.push(write("summary.json".into(), summary)?);
    let manifest = json!({
        "experiment": output.kind.name(),
        "config_sha256": config.hash(),
        "seed": config.scenario.seed,
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "files": files,
        "config": config,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    written.push(path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// Radar simulation
// ---------------------------------------------------------------------------

/// One radar burst: transmit frames and the noisy receive array.
#[derive(Debug, Clone)]
pub struct RadarObservation {
    /// DD frames equivalent to what is actually transmitted (after nulling).
    pub tx_dd: Vec<DdFrame>,
    pub tx_tf: Vec<TfFrame>,
    pub rx_tf: Vec<TfFrame>,
    pub rx_dd: Vec<DdFrame>,
    pub noise_var: f64,
}

/// Per-antenna bits, DD frames and transmitted TF frames of one burst.
pub type TxBurst = (Vec<Vec<u8>>, Vec<DdFrame>, Vec<TfFrame>);

/// Random QPSK DD frames respecting the plan's zeros.
pub fn random_tx_frames<R: Rng + ?Sized>(plan: &PrivateBinPlan, cfg: &FrameConfig, rng: &mut R) -> Result<TxBurst> {
    let bits: Vec<Vec<u8>> = (0..plan.n_t())
        .map(|p| random_bits(plan.info_symbols(p, cfg) * QPSK_BITS, rng))
        .collect();
    let streams = bits.iter().map(|b| modulate_qpsk(b)).collect::<Result<Vec<_>>>()?;
    let (dd, tf) = build_tx_frames(&streams, plan, cfg)?;
    Ok((bits, dd, tf))
}

pub fn observe_radar(
    scenario: &Scenario,
    plan: &PrivateBinPlan,
    data_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<RadarObservation> {
    let cfg = &scenario.frame;
    let (_, _, tx_tf) = random_tx_frames(plan, cfg, data_rng)?;
    let tx_dd = tx_tf.iter().map(|x| sfft(x, cfg)).collect::<Result<Vec<_>>>()?;
    let rx = radar_receive_tf(&tx_tf, scenario, noise_rng)?;
    let rx_dd = rx.frames.iter().map(|y| sfft(y, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(RadarObservation { tx_dd, tx_tf, rx_tf: rx.frames, rx_dd, noise_var: rx.noise_var })
}

pub struct RadarRun {
    pub observation: RadarObservation,
    pub coarse: CoarseResult,
    pub detection: Option<Detection>,
}

/// Coarse estimation followed, when the plan has private bins, by
/// virtual-array detection with refinement.
pub fn radar_pipeline(
    scenario: &Scenario,
    plan: &PrivateBinPlan,
    coarse_params: &CoarseParams,
    detect_params: &DetectParams,
    data_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<RadarRun> {
    let obs = observe_radar(scenario, plan, data_rng, noise_rng)?;
    let coarse = coarse_estimate(&obs.rx_dd, &obs.tx_dd, &scenario.arrays, &scenario.frame, coarse_params)?;
    let detection = if plan.n_p() > 0 {
        let meas = extract_virtual_measurement(&obs.rx_tf, plan, &obs.tx_tf)?;
        let scorer = DdScorer { rx: &obs.rx_dd, tx: &obs.tx_dd };
        Some(detect_with_refinement(
            &meas,
            &coarse.estimates,
            &scenario.frame,
            &scenario.arrays,
            detect_params,
            obs.noise_var,
            Some(scorer),
        )?)
    } else {
        None
    };
    Ok(RadarRun { observation: obs, coarse, detection })
}

fn angle_spectrum_table(coarse: &CoarseResult) -> ResultTable {
    let mut t = ResultTable::new(&["bin", "omega", "theta_deg", "magnitude"]);
    let s = &coarse.angles.spectrum;
    for (b, &v) in s.magnitudes.iter().enumerate() {
        let theta = s.bin_to_angle(b).unwrap_or(f64::NAN);
        t.push(vec![b.into(), s.bin_to_omega(b).into(), theta.into(), v.into()]);
    }
    t
}

fn coarse_estimates_table(coarse: &CoarseResult) -> ResultTable {
    let mut t = ResultTable::new(&[
        "angle_bin",
        "theta_deg",
        "k",
        "doppler_bin",
        "l",
        "range_m",
        "velocity_mps",
        "score",
    ]);
    for e in &coarse.estimates {
        t.push(vec![
            e.angle_bin.into(),
            e.theta_deg.into(),
            e.k.into(),
            e.doppler_bin.into(),
            e.l.into(),
            e.range_m.into(),
            e.velocity_mps.into(),
            e.peak_score.into(),
        ]);
    }
    t
}

fn correlation_table(coarse: &CoarseResult) -> ResultTable {
    let mut t = ResultTable::new(&["angle_index", "theta_deg", "k", "l", "score"]);
    for (i, (corr, peak)) in coarse.correlations.iter().zip(&coarse.angles.peaks).enumerate() {
        for k in 0..corr.rows {
            for l in 0..corr.cols {
                t.push(vec![i.into(), peak.theta_deg.into(), k.into(), l.into(), corr.surface[l + k * corr.cols].into()]);
            }
        }
    }
    t
}

fn ssr_spectrum_table(det: &Detection) -> ResultTable {
    let mut t = ResultTable::new(&["atom", "theta_deg", "doppler_bin", "l", "magnitude"]);
    for (i, a) in det.grid.atoms.iter().enumerate() {
        let mag = det.spectrum.beta[i].norm() / det.dictionary_scale;
        t.push(vec![i.into(), a.theta_deg.into(), a.doppler_bin.into(), a.delay_bin.into(), mag.into()]);
    }
    t
}

pub fn run_coarse_radar(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.build()?;
    let plan = PrivateBinPlan::all_shared(scenario.arrays.n_t)?;
    let mut data_rng = rng::stream(scenario.seed, DATA_STREAM);
    let mut noise_rng = rng::stream(scenario.seed, NOISE_STREAM);
    let run = radar_pipeline(&scenario, &plan, &config.coarse, &config.detect, &mut data_rng, &mut noise_rng)?;
    let cfg = &scenario.frame;
    let bin_width = 1.0 / run.coarse.angles.spectrum.n_fft() as f64;
    let lambda = cfg.wavelength();

    let mut table = ResultTable::new(&[
        "target",
        "true_theta_deg",
        "true_k",
        "true_l",
        "est_theta_deg",
        "est_k",
        "est_l",
        "est_range_m",
        "est_velocity_mps",
        "angle_error_bins",
        "dd_exact",
    ]);
    let mut matched = 0;
    for (j, t) in scenario.targets.iter().enumerate() {
        let true_k = t.doppler_index(cfg);
        let omega = scenario.arrays.rx_spatial_frequency(t.theta_deg, lambda);
        let err_bins = |w: f64| {
            let d = (w - omega).abs();
            d.min(1.0 - d) / bin_width
        };
        // prefer an estimate on the true DD bin, then the closest in angle
        let best = run.coarse.estimates.iter().min_by(|a, b| {
            let ka = (a.k, a.l) != (true_k, t.delay_bin);
            let kb = (b.k, b.l) != (true_k, t.delay_bin);
            ka.cmp(&kb).then(err_bins(a.omega).total_cmp(&err_bins(b.omega)))
        });
        let mut row: Vec<Cell> = vec![j.into(), t.theta_deg.into(), true_k.into(), t.delay_bin.into()];
        match best {
            Some(e) => {
                let exact = (e.k, e.l) == (true_k, t.delay_bin);
                matched += (exact && err_bins(e.omega) <= 1.0) as usize;
                row.extend([
                    e.theta_deg.into(),
                    e.k.into(),
                    e.l.into(),
                    e.range_m.into(),
                    e.velocity_mps.into(),
                    err_bins(e.omega).into(),
                    exact.into(),
                ]);
            }
            None => row.extend([
                f64::NAN.into(),
                (-1i64).into(),
                (-1i64).into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                false.into(),
            ]),
        }
        table.push(row);
    }
    let mut aux = BTreeMap::new();
    aux.insert("angle_spectrum".to_string(), angle_spectrum_table(&run.coarse));
    aux.insert("coarse_estimates".to_string(), coarse_estimates_table(&run.coarse));
    aux.insert("correlation".to_string(), correlation_table(&run.coarse));
    let summary = json!({
        "experiment": "coarse-radar",
        "targets": scenario.targets.len(),
        "angle_peaks": run.coarse.angles.peaks.len(),
        "estimates": run.coarse.estimates.len(),
        "targets_matched": matched,
        "noise_var": run.observation.noise_var,
        "range_resolution_m": cfg.range_resolution(),
        "velocity_resolution_mps": cfg.velocity_resolution(),
    });
    Ok(ExperimentOutput { kind: ExperimentKind::CoarseRadar, table, aux, summary, non_converged: 0 })
}

pub fn run_ssr_radar(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.build()?;
    let cfg = &scenario.frame;
    let plan = config.plan.build(cfg, scenario.arrays.n_t)?;
    if plan.n_p() == 0 {
        return Err(Error::InvalidConfig("ssr-radar needs at least one private bin".into()));
    }
    let mut data_rng = rng::stream(scenario.seed, DATA_STREAM);
    let mut noise_rng = rng::stream(scenario.seed, NOISE_STREAM);
    let run = radar_pipeline(&scenario, &plan, &config.coarse, &config.detect, &mut data_rng, &mut noise_rng)?;
    let det = run.detection.as_ref().expect("plan has private bins");

    let mut table = ResultTable::new(&[
        "theta_deg",
        "doppler_bin",
        "k",
        "l",
        "range_m",
        "velocity_mps",
        "gain_abs",
        "matches_target",
        "final_spacing_deg",
        "refined",
    ]);
    for t in &det.targets {
        let hit = scenario.targets.iter().position(|s| {
            (s.theta_deg - t.theta_deg).abs() <= det.final_spacing_deg / 2.0 + 1e-9
                && (s.doppler_bin, s.delay_bin) == (t.doppler_bin, t.delay_bin)
        });
        table.push(vec![
            t.theta_deg.into(),
            t.doppler_bin.into(),
            (t.doppler_bin.rem_euclid(cfg.n as i64) as usize).into(),
            t.delay_bin.into(),
            t.range_m.into(),
            t.velocity_mps.into(),
            t.gain.norm().into(),
            hit.map_or(-1, |i| i as i64).into(),
            det.final_spacing_deg.into(),
            (det.refinements > 0).into(),
        ]);
    }
    let mut aux = BTreeMap::new();
    aux.insert("angle_spectrum".to_string(), angle_spectrum_table(&run.coarse));
    aux.insert("coarse_estimates".to_string(), coarse_estimates_table(&run.coarse));
    aux.insert("ssr_spectrum".to_string(), ssr_spectrum_table(det));
    let summary = json!({
        "experiment": "ssr-radar",
        "n_p": plan.n_p(),
        "coarse_angle_peaks": run.coarse.angles.peaks.len(),
        "coarse_estimates": run.coarse.estimates.len(),
        "detected": det.targets.len(),
        "refinements": det.refinements,
        "final_spacing_deg": det.final_spacing_deg,
        "atoms": det.grid.atoms.len(),
        "solver_converged": det.converged,
        "noise_var": run.observation.noise_var,
    });
    Ok(ExperimentOutput {
        kind: ExperimentKind::SsrRadar,
        table,
        aux,
        summary,
        non_converged: (!det.converged) as usize,
    })
}

/// Draws `count` targets at integer angles in `span` with pairwise
/// separation at least `min_sep`, distinct uniform DD bins and
/// unit-modulus gains.
pub fn draw_targets<R: Rng + ?Sized>(
    cfg: &FrameConfig,
    count: usize,
    span: [f64; 2],
    min_sep: f64,
    rng: &mut R,
) -> Result<Vec<Target>> {
    let lo = span[0].ceil() as i64;
    let hi = span[1].floor() as i64;
    let mut angles: Vec<f64> = Vec::with_capacity(count);
    let mut attempts = 0;
    while angles.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidConfig(format!(
                "cannot place {count} targets {min_sep} degrees apart in [{lo}, {hi}]"
            )));
        }
        let a = rng.random_range(lo..=hi) as f64;
        if angles.iter().all(|b| (a - b).abs() >= min_sep - 1e-9) {
            angles.push(a);
        } else if attempts % 1000 == 0 {
            angles.clear();
        }
    }
    let half = (cfg.n / 2) as i64;
    let mut bins: Vec<(i64, usize)> = Vec::with_capacity(count);
    while bins.len() < count {
        let b = (rng.random_range(-half..cfg.n as i64 - half), rng.random_range(0..cfg.m));
        if !bins.contains(&b) {
            bins.push(b);
        }
    }
    angles
        .into_iter()
        .zip(bins)
        .map(|(theta, (k, l))| Target::on_grid(theta, k, l, rng::unit_phase(rng), cfg))
        .collect()
}

/// Number of planted targets matched one-to-one by detections.
pub fn count_matches(
    truth: &[Target],
    detected: &[crate::virtual_array::DetectedTarget],
    angle_tolerance: f64,
    rule: MatchRule,
) -> usize {
    let mut used = vec![false; detected.len()];
    let mut hits = 0;
    for t in truth {
        let best = detected
            .iter()
            .enumerate()
            .filter(|(i, d)| {
                !used[*i]
                    && (d.theta_deg - t.theta_deg).abs() <= angle_tolerance + 1e-9
                    && (rule == MatchRule::AngleOnly || (d.doppler_bin, d.delay_bin) == (t.doppler_bin, t.delay_bin))
            })
            .min_by(|a, b| (a.1.theta_deg - t.theta_deg).abs().total_cmp(&(b.1.theta_deg - t.theta_deg).abs()));
        if let Some((i, _)) = best {
            used[i] = true;
            hits += 1;
        }
    }
    hits
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialOutcome {
    detected: bool,
    matched: usize,
    reported: usize,
    final_spacing: f64,
    refinements: usize,
    converged: bool,
}

pub fn run_detect_mc(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let base = config.scenario.build()?;
    let cfg = base.frame;
    let mc = &config.monte_carlo;
    let spacings: Vec<Option<f64>> = if mc.d_alpha.is_empty() {
        vec![None]
    } else {
        mc.d_alpha.iter().map(|&d| Some(d)).collect()
    };
    let mut table = ResultTable::new(&[
        "n_p",
        "d_alpha_deg",
        "min_sep_deg",
        "trials",
        "detected",
        "probability",
        "mean_matched",
        "mean_reported",
        "mean_final_spacing_deg",
        "mean_refinements",
    ]);
    let mut non_converged = 0;
    let mut combos = Vec::new();
    for &min_sep in &mc.min_separation_deg {
        for &d_alpha in &spacings {
            for &n_p in &mc.n_p {
                let plan = PrivateBinPlan::diagonal(&cfg, base.arrays.n_t, n_p)?.probed(&cfg, mc.probe)?;
                let params = DetectParams { initial_spacing_deg: d_alpha, ..config.detect };
                let outcomes: Vec<TrialOutcome> = (0..mc.trials as u64)
                    .into_par_iter()
                    .map(|trial| {
                        // the same draws for every N_p and spacing at this separation
                        let mut target_rng = rng::stream(base.seed, TARGET_STREAM + trial);
                        let targets = draw_targets(&cfg, mc.targets, mc.angle_span_deg, min_sep, &mut target_rng)?;
                        let scenario = base.with_targets(targets);
                        let mut data_rng = rng::stream(base.seed, DATA_STREAM + trial);
                        let mut noise_rng = rng::stream(base.seed, NOISE_STREAM + trial);
                        let run = radar_pipeline(&scenario, &plan, &config.coarse, &params, &mut data_rng, &mut noise_rng)?;
                        let det = run.detection.expect("N_p >= 1");
                        let matched = count_matches(&scenario.targets, &det.targets, det.final_spacing_deg, mc.match_rule);
                        Ok(TrialOutcome {
                            detected: matched == scenario.targets.len(),
                            matched,
                            reported: det.targets.len(),
                            final_spacing: det.final_spacing_deg,
                            refinements: det.refinements,
                            converged: det.converged,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = outcomes.len() as f64;
                let detected = outcomes.iter().filter(|o| o.detected).count();
                non_converged += outcomes.iter().filter(|o| !o.converged).count();
                let mean = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
                let d_used = params.initial_spacing(base.arrays.n_r);
                table.push(vec![
                    n_p.into(),
                    d_used.into(),
                    min_sep.into(),
                    outcomes.len().into(),
                    detected.into(),
                    (detected as f64 / n).into(),
                    mean(&|o| o.matched as f64).into(),
                    mean(&|o| o.reported as f64).into(),
                    mean(&|o| o.final_spacing).into(),
                    mean(&|o| o.refinements as f64).into(),
                ]);
                combos.push(json!({
                    "n_p": n_p,
                    "d_alpha_deg": d_used,
                    "min_sep_deg": min_sep,
                    "probability": detected as f64 / n,
                }));
            }
        }
    }
    let summary = json!({
        "experiment": "detect-mc",
        "trials": mc.trials,
        "targets_per_trial": mc.targets,
        "angle_span_deg": mc.angle_span_deg,
        "match_rule": mc.match_rule,
        "results": combos,
        "non_converged_trials": non_converged,
    });
    Ok(ExperimentOutput { kind: ExperimentKind::DetectMc, table, aux: BTreeMap::new(), summary, non_converged })
}

/// Bit and symbol errors of one link configuration for both receivers:
/// through the reduced ISFFT system and read directly off the equalized DD grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinkErrors {
    pub reduced: ErrorCount,
    pub direct: ErrorCount,
    pub cg_iterations: usize,
    pub converged: bool,
}

/// One communication burst through the scenario's MIMO channel at `snr_db`.
pub fn comm_trial(
    scenario: &Scenario,
    plan: &PrivateBinPlan,
    snr_db: Option<f64>,
    params: &CommParams,
    trial: u64,
) -> Result<LinkErrors> {
    let cfg = &scenario.frame;
    let mut scenario = scenario.clone();
    scenario.snr_db = snr_db;
    if snr_db.is_some() {
        scenario.noise_var = None;
    }
    let comm = scenario.comm.as_ref().ok_or_else(|| Error::InvalidConfig("scenario has no communication paths".into()))?;
    if trial > 0 {
        let mut gain_rng = rng::stream(scenario.seed, GAIN_STREAM + trial);
        scenario.comm = Some(CommPaths::random_gains(comm.paths.clone(), scenario.arrays.n_c, scenario.arrays.n_t, &mut gain_rng));
    }
    let mut data_rng = rng::stream(scenario.seed, DATA_STREAM + trial);
    let mut noise_rng = rng::stream(scenario.seed, NOISE_STREAM + trial);
    let (bits, _, tx_tf) = random_tx_frames(plan, cfg, &mut data_rng)?;
    let tx_dd = tx_tf.iter().map(|x| sfft(x, cfg)).collect::<Result<Vec<_>>>()?;
    let rx = crate::channel::comm_receive_dd(&tx_dd, &scenario, &mut noise_rng)?;
    // a tiny floor keeps the noiseless case well posed
    let eq_noise = rx.noise_var.max(1e-12);
    let channel = match params.channel_knowledge {
        ChannelKnowledge::Perfect => rx.channel.clone(),
        ChannelKnowledge::Pilot => {
            let mut pilot_rng = rng::stream(scenario.seed, PILOT_STREAM + trial);
            let bursts = pilot_bursts(&rx.channel, cfg, rx.noise_var, &mut pilot_rng)?;
            estimate_channel_pilot(&bursts, cfg)?
        }
    };
    let eq = lmmse_equalize(
        &EqualizerInput { y: &rx.frames, channel: &channel, noise_var: eq_noise },
        params.equalizer,
        &params.cg,
    )?;
    let recovery = if rx.noise_var > 0.0 {
        Recovery::Regularized { delta: rx.noise_var / cfg.bins() as f64 }
    } else {
        Recovery::Exact
    };
    let recovered = recover_info_symbols(&eq.x, plan, cfg, recovery)?;
    let mut out = LinkErrors { cg_iterations: eq.iterations, converged: eq.converged, ..Default::default() };
    for (p, sent) in bits.iter().enumerate() {
        out.reduced.add(sent, &recovered[p]);
        out.direct.add(sent, &extract_dd_symbols(&eq.x[p], plan, p));
    }
    Ok(out)
}

pub fn run_comm_rate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.build()?;
    let cfg = scenario.frame;
    let params = &config.comm;
    let rate_frame = params.rate_frame.unwrap_or(cfg);
    let mut table = ResultTable::new(&[
        "n_p",
        "snr_db",
        "trials",
        "ber",
        "ser",
        "ber_direct",
        "ser_direct",
        "bits",
        "throughput_bits",
        "rate_loss_fraction",
        "rate_loss_bps",
        "per_bin_loss_bps",
        "mean_cg_iterations",
    ]);
    let mut non_converged = 0;
    let mut results = Vec::new();
    for &n_p in &params.n_p {
        let plan = PrivateBinPlan::diagonal(&cfg, scenario.arrays.n_t, n_p)?.probed(&cfg, params.probe)?;
        let rate_plan = PrivateBinPlan::diagonal(&rate_frame, scenario.arrays.n_t, n_p)?.probed(&rate_frame, params.probe)?;
        let rate: RateReport = plan_rate(&rate_plan, &rate_frame, QPSK_BITS)?;
        for &snr in &params.snr_db {
            let trials: Vec<LinkErrors> = (0..params.trials as u64)
                .into_par_iter()
                .map(|t| comm_trial(&scenario, &plan, Some(snr), params, t))
                .collect::<Result<Vec<_>>>()?;
            let mut reduced = ErrorCount::default();
            let mut direct = ErrorCount::default();
            let mut iters = 0;
            for t in &trials {
                reduced.merge(&t.reduced);
                direct.merge(&t.direct);
                iters += t.cg_iterations;
                non_converged += (!t.converged) as usize;
            }
            let a = reduced.report(&rate);
            let b = direct.report(&rate);
            table.push(vec![
                n_p.into(),
                snr.into(),
                trials.len().into(),
                a.ber.into(),
                a.ser.into(),
                b.ber.into(),
                b.ser.into(),
                a.bits.into(),
                rate.throughput_bits.into(),
                rate.loss_fraction.into(),
                rate.loss_bps.into(),
                rate.per_bin_loss_bps.into(),
                (iters as f64 / trials.len() as f64).into(),
            ]);
            results.push(json!({ "n_p": n_p, "snr_db": snr, "ber": a.ber, "ser": a.ser }));
        }
    }
    let summary = json!({
        "experiment": "comm-rate",
        "grid": [cfg.n, cfg.m],
        "rate_grid": [rate_frame.n, rate_frame.m],
        "n_t": scenario.arrays.n_t,
        "n_c": scenario.arrays.n_c,
        "channel_knowledge": params.channel_knowledge,
        "probe": params.probe,
        "results": results,
        "non_converged": non_converged,
    });
    Ok(ExperimentOutput { kind: ExperimentKind::CommRate, table, aux: BTreeMap::new(), summary, non_converged })
}

/// Default configuration for each experiment.
pub fn preset(kind: ExperimentKind) -> ExperimentConfig {
    let nr = FrameConfig::nr_fr2();
    let radar_arrays = ArrayConfig::half_wavelength(4, 32, 8, &nr);
    let targets = match kind {
        ExperimentKind::SsrRadar => crate::channel::closely_spaced_targets(&nr),
        _ => crate::channel::well_separated_targets(&nr),
    }
    .expect("preset targets are on the grid");
    let mut scenario = Scenario::new(nr, radar_arrays);
    scenario.snr_db = Some(20.0);
    scenario.seed = 2024;
    scenario.targets = targets;
    let mut spec = ScenarioSpec::from(&scenario);
    spec.arrays.tx_spacing_m = None;
    spec.arrays.rx_spacing_m = None;
    if kind == ExperimentKind::DetectMc {
        spec.targets.clear();
    }
    if kind == ExperimentKind::CommRate {
        spec.frame = FrameConfig::desk();
        spec.targets.clear();
        spec.comm_paths = Some(crate::channel::CommPathsSpec {
            paths: [(68.31, 57.95), (78.07, -104.31), (48.79, 81.13)]
                .into_iter()
                .map(|(r, v)| crate::channel::PathSpec { range_m: r, velocity_mps: v })
                .collect(),
            gains: None,
        });
    }
    ExperimentConfig {
        experiment: kind,
        scenario: spec,
        plan: default_plan(),
        coarse: CoarseParams::default(),
        detect: DetectParams::default(),
        monte_carlo: MonteCarloParams::default(),
        comm: CommParams { rate_frame: (kind == ExperimentKind::CommRate).then_some(nr), ..CommParams::default() },
        output: OutputParams::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_matches_printf_g() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_float(123456.789), "123456.789");
        assert_eq!(format_float(-2.5e-7), "-2.5e-07");
        assert_eq!(format_float(6.02214076e23), "6.02214076e+23");
        assert_eq!(format_float(999999999999.9), "1e+12");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn csv_has_header() {
        let mut t = ResultTable::new(&["a", "b"]);
        t.push(vec![1usize.into(), 0.5.into()]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
    }

    #[test]
    fn presets_validate() {
        for kind in [ExperimentKind::CoarseRadar, ExperimentKind::SsrRadar, ExperimentKind::DetectMc, ExperimentKind::CommRate] {
            let cfg = preset(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn target_draws_respect_separation() {
        let cfg = FrameConfig::nr_fr2();
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let t = draw_targets(&cfg, 3, [-60.0, 60.0], 2.0, &mut r).unwrap();
            for i in 0..3 {
                assert_eq!(t[i].theta_deg.fract(), 0.0);
                for j in 0..i {
                    assert!((t[i].theta_deg - t[j].theta_deg).abs() >= 2.0);
                }
            }
        }
        assert!(draw_targets(&cfg, 3, [0.0, 2.0], 2.0, &mut r).is_err());
    }
}
