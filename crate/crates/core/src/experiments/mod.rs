//! Complete experiments: sweeps, shot-noise readout, scan direction and
//! nuclear feedback.

pub mod analysis;
pub mod engine;

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::effective_rotation;
use crate::levels::{ChargeSpecies, SelectionRules, SpinSystem};
use crate::noise::{self, Drag, NoiseModel, OverhauserState};
use crate::pulses::{PowerCalibration, Pulse, Sequence, SequenceBuilder};
use crate::{Error, Result, TWO_PI};

pub use engine::{Affine, Engine, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rabi,
    Ramsey,
    BlochMap,
    EchoFine,
    EchoDecay,
    PumpScan,
    HysteresisRamsey,
    T1,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Rabi,
        ExperimentKind::Ramsey,
        ExperimentKind::BlochMap,
        ExperimentKind::EchoFine,
        ExperimentKind::EchoDecay,
        ExperimentKind::PumpScan,
        ExperimentKind::HysteresisRamsey,
        ExperimentKind::T1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::Ramsey => "ramsey",
            ExperimentKind::BlochMap => "bloch_map",
            ExperimentKind::EchoFine => "echo_fine",
            ExperimentKind::EchoDecay => "echo_decay",
            ExperimentKind::PumpScan => "pump_scan",
            ExperimentKind::HysteresisRamsey => "hysteresis_ramsey",
            ExperimentKind::T1 => "t1",
        }
    }

    /// Whether points are visited in order with carried nuclear state.
    pub fn has_feedback(self) -> bool {
        matches!(self, ExperimentKind::PumpScan | ExperimentKind::HysteresisRamsey)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScanDirection {
    #[default]
    Up,
    Down,
    Both,
}

impl ScanDirection {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            ScanDirection::Up => &[Direction::Up],
            ScanDirection::Down => &[Direction::Down],
            ScanDirection::Both => &[Direction::Up, Direction::Down],
        }
    }
}

impl FromStr for ScanDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(ScanDirection::Up),
            "down" => Ok(ScanDirection::Down),
            "both" => Ok(ScanDirection::Both),
            _ => Err(Error::Config(format!("unknown scan direction '{s}' (expected up, down or both)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// One sweep axis. Values are in SI units (s, Hz, rad) or relative power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, unit: &str, values: Vec<f64>) -> Axis {
        Axis { name: name.into(), unit: unit.into(), values }
    }

    pub fn linspace(name: &str, unit: &str, lo: f64, hi: f64, n: usize) -> Axis {
        let values = match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
        };
        Axis::new(name, unit, values)
    }
}

/// Photon counter: efficiency and dark counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    /// Detected fraction of emitted readout photons.
    pub efficiency: f64,
    /// Dark counts per shot.
    pub dark_rate: f64,
}

impl Default for Readout {
    fn default() -> Self {
        Readout { efficiency: 0.1, dark_rate: 1e-4 }
    }
}

/// How rotation pulses act in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum PulseModel {
    /// Rotation about the optical axis by the calibrated angle, with the Bloch
    /// vector contracted by `contrast` per π/2 of rotation.
    Ideal { contrast: f64 },
    /// Ground-manifold map reduced from the four-level dynamics, scattering included.
    Effective,
}

impl Default for PulseModel {
    fn default() -> Self {
        PulseModel::Ideal { contrast: 0.89 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesParams {
    /// Feedback suppression κ.
    pub suppression: f64,
    /// Spectral-diffusion FWHM of the optical line, rad/s.
    pub optical_linewidth_fwhm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub enabled: bool,
    /// Feedback strength g_fb.
    pub gain: f64,
    /// Nuclear relaxation rate, 1/s.
    pub relaxation_rate: f64,
    /// Largest Overhauser shift, rad/s.
    pub bound: f64,
    /// Pump-scan drag threshold as a fraction of the bright-state emission.
    pub pump_target: f64,
    /// Strength of the pump-scan drag relative to the Ramsey feedback.
    pub pump_drag: f64,
    /// Detuning scale of the pump-scan drag direction, rad/s.
    pub pull_width: f64,
    /// Wall-clock dwell per sweep point, s.
    pub dwell: f64,
    /// Feedback updates per point.
    pub updates_per_point: u32,
}

impl Default for Feedback {
    fn default() -> Self {
        Feedback {
            enabled: true,
            gain: 1.0,
            relaxation_rate: 10.0,
            bound: 3.0e10,
            pump_target: 0.1,
            pump_drag: 100.0,
            pull_width: TWO_PI * 1.0e9,
            dwell: 1.0,
            updates_per_point: 400,
        }
    }
}

impl Feedback {
    fn state(&self, suppression: f64) -> OverhauserState {
        OverhauserState {
            shift: 0.0,
            gain: if self.enabled { self.gain } else { 0.0 },
            suppression,
            relaxation_rate: self.relaxation_rate,
            bound: self.bound,
        }
    }
}

/// Relative powers of the calibrated π/2 and π pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub half_pi_power: f64,
    pub pi_power: f64,
}

impl Calibration {
    pub fn power_calibration(&self) -> Result<PowerCalibration> {
        PowerCalibration::from_knots(vec![(FRAC_PI_2, self.half_pi_power), (PI, self.pi_power)])
    }
}

/// Everything physical about a run: the dot, its noise, the optics and the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub system: SpinSystem,
    /// Light-hole admixture knob of the selection rules.
    pub imbalance: f64,
    pub noise: NoiseModel,
    pub feedback: Feedback,
    pub hole: SpeciesParams,
    pub electron: SpeciesParams,
    /// Pulse and pump templates, clock and power scale.
    pub builder: SequenceBuilder,
    /// Pump Rabi frequency used while scanning the pump detuning, rad/s.
    pub scan_pump_rabi: f64,
    pub readout: Readout,
    pub pulse_model: PulseModel,
    /// Fixed calibration; computed from the dynamics when absent.
    pub calibration: Option<Calibration>,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            system: SpinSystem::default(),
            imbalance: 0.0,
            noise: NoiseModel::default(),
            feedback: Feedback::default(),
            hole: SpeciesParams { suppression: 30.0, optical_linewidth_fwhm: TWO_PI * 6.7e9 },
            electron: SpeciesParams { suppression: 1.0, optical_linewidth_fwhm: TWO_PI * 2.2e9 },
            builder: SequenceBuilder::default(),
            scan_pump_rabi: 5.0e8,
            readout: Readout::default(),
            pulse_model: PulseModel::default(),
            calibration: None,
        }
    }
}

impl Setup {
    pub fn rules(&self) -> Result<SelectionRules> {
        SelectionRules::voigt(self.imbalance)
    }

    pub fn species(&self, s: ChargeSpecies) -> &SpeciesParams {
        match s {
            ChargeSpecies::Hole => &self.hole,
            ChargeSpecies::Electron => &self.electron,
        }
    }

    /// The setup with species-dependent parameters applied.
    pub fn for_species(&self, s: ChargeSpecies) -> Setup {
        let p = *self.species(s);
        let mut out = self.clone();
        out.system.species = s;
        out.noise.optical_linewidth_fwhm = p.optical_linewidth_fwhm;
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.noise.validate()?;
        self.rules()?;
        self.feedback.state(self.species(self.system.species).suppression).validate()?;
        for p in [self.hole, self.electron] {
            if !(p.suppression >= 1.0) || !(p.optical_linewidth_fwhm >= 0.0) {
                return Err(Error::Config("species suppression must be >= 1 and linewidth >= 0".into()));
            }
        }
        let f = &self.feedback;
        if !(f.dwell > 0.0) || f.updates_per_point == 0 || !(f.pull_width > 0.0) {
            return Err(Error::Config("feedback dwell, updates and pull width must be positive".into()));
        }
        let r = &self.readout;
        if !(0.0..=1.0).contains(&r.efficiency) || !(r.dark_rate >= 0.0) {
            return Err(Error::Config("readout efficiency must lie in [0, 1] and dark rate be >= 0".into()));
        }
        if let PulseModel::Ideal { contrast } = self.pulse_model {
            if !(0.0..=1.0).contains(&contrast) {
                return Err(Error::Config(format!("pulse contrast must lie in [0, 1], got {contrast}")));
            }
        }
        if !(self.scan_pump_rabi > 0.0) {
            return Err(Error::Config("scan_pump_rabi must be > 0".into()));
        }
        if !(self.builder.rabi_unit > 0.0) {
            return Err(Error::Config("rabi_unit must be > 0".into()));
        }
        if let Some(c) = self.calibration {
            c.power_calibration().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// The fixed calibration or, failing that, one computed from the dynamics.
    pub fn calibrated(&self) -> Result<Calibration> {
        if let Some(c) = self.calibration {
            return Ok(c);
        }
        Ok(Calibration { half_pi_power: calibrate_power(self, FRAC_PI_2)?, pi_power: calibrate_power(self, PI)? })
    }
}

/// Rotation angle of the pulse at relative power `power`, unfolded past π
/// using the low-power rotation axis as reference.
fn pulse_angle(setup: &Setup, power: f64, reference: &[f64; 3]) -> Result<f64> {
    let pulse = setup.builder.pulse.with_power(power, setup.builder.rabi_unit)?;
    let rot = effective_rotation(&pulse, &setup.system, &setup.rules()?)?;
    let dot: f64 = rot.axis.iter().zip(reference).map(|(a, b)| a * b).sum();
    Ok(if dot >= 0.0 { rot.angle } else { TWO_PI - rot.angle })
}

/// Relative power whose pulse rotates the spin by `target` ∈ [0, 2π), from the
/// reduced four-level dynamics; the first solution above zero power, within 1e−4 rad.
pub fn calibrate_power(setup: &Setup, target: f64) -> Result<f64> {
    if !(0.0..TWO_PI).contains(&target) {
        return Err(Error::Domain(format!("target angle must lie in [0, 2π), got {target}")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let key = calibration_key(setup, target);
    if let Some(p) = cache().lock().ok().and_then(|c| c.get(&key).copied()) {
        return Ok(p);
    }
    let probe = 1e-3;
    let weak = effective_rotation(
        &setup.builder.pulse.with_power(probe, setup.builder.rabi_unit)?,
        &setup.system,
        &setup.rules()?,
    )?;
    let reference = weak.axis;
    let slope = weak.angle / probe;
    if !(slope > 0.0) {
        return Err(Error::Calibration("pulse produces no rotation".into()));
    }
    let f = |p: f64| pulse_angle(setup, p, &reference).map(|a| a - target);

    let (mut lo, mut flo) = (0.0, -target);
    let mut hi = target / slope;
    let mut fhi = f(hi)?;
    let mut expansions = 0;
    while fhi < 0.0 {
        lo = hi;
        flo = fhi;
        hi *= 1.25;
        fhi = f(hi)?;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Calibration(format!("angle {target} not reached up to power {hi}")));
        }
    }
    // Illinois regula falsi.
    let mut side = 0i8;
    for _ in 0..60 {
        let p = (lo * fhi - hi * flo) / (fhi - flo);
        let fp = f(p)?;
        if fp.abs() < 1e-4 {
            if let Ok(mut c) = cache().lock() {
                c.insert(key, p);
            }
            return Ok(p);
        }
        if fp < 0.0 {
            lo = p;
            flo = fp;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = p;
            fhi = fp;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::Calibration(format!("no convergence for target angle {target}")))
}

fn calibration_key(setup: &Setup, target: f64) -> String {
    format!("{:?}|{:?}|{}|{:?}|{}", setup.builder.pulse, setup.system, setup.imbalance, setup.builder.rabi_unit, target)
}

fn cache() -> &'static std::sync::Mutex<std::collections::HashMap<String, f64>> {
    static CACHE: std::sync::OnceLock<std::sync::Mutex<std::collections::HashMap<String, f64>>> =
        std::sync::OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `Binomial(shots, prob·efficiency) + Poisson(dark_rate·shots)`.
pub fn photon_counts(prob: f64, shots: u64, efficiency: f64, dark_rate: f64, rng: &mut ChaCha8Rng) -> u64 {
    let p = (prob * efficiency).clamp(0.0, 1.0);
    let signal = if p > 0.0 && shots > 0 {
        Binomial::new(shots, p).map(|b| b.sample(rng)).unwrap_or(0)
    } else {
        0
    };
    let lambda = dark_rate * shots as f64;
    let dark = if lambda > 0.0 { Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0) } else { 0 };
    signal + dark
}

/// Independent, reproducible stream for one point of one scan direction.
pub fn point_rng(seed: u64, direction: Direction, point: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = match direction {
        Direction::Up => 0u64,
        Direction::Down => 1u64,
    };
    rng.set_stream((dir << 48) | point as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub axes: Vec<Axis>,
    pub shots_per_point: u64,
    /// Independent noise realizations per point; shots are split evenly among them.
    pub draws_per_point: u64,
    pub scan_direction: ScanDirection,
    pub charge_species: ChargeSpecies,
    pub seed: u64,
    /// Ramsey and Bloch-map pulse angle for kinds that use a fixed angle, rad.
    pub pulse_angle: f64,
    /// Total delay 2T of the fine echo scan, s.
    pub echo_delay: f64,
    /// Worker threads for sweeps without feedback; `None` uses all cores.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Default sweep for `kind` on the given setup.
    pub fn new(kind: ExperimentKind, setup: &Setup) -> ExperimentConfig {
        let omega = setup.for_species(ChargeSpecies::Hole).system.ground_splitting();
        ExperimentConfig {
            kind,
            axes: default_axes(kind, omega),
            shots_per_point: 10_000,
            draws_per_point: 10_000,
            scan_direction: if kind.has_feedback() { ScanDirection::Both } else { ScanDirection::Up },
            charge_species: ChargeSpecies::Hole,
            seed: 0,
            pulse_angle: FRAC_PI_2,
            echo_delay: 130e-9,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots_per_point == 0 {
            return Err(Error::Config("shots_per_point must be >= 1".into()));
        }
        if self.draws_per_point == 0 {
            return Err(Error::Config("draws_per_point must be >= 1".into()));
        }
        let want = expected_axes(self.kind);
        if self.axes.len() != want.len() && !(self.kind == ExperimentKind::Ramsey && self.axes.len() == 2) {
            return Err(Error::Config(format!(
                "{} expects axes {:?}, got {}",
                self.kind,
                want,
                self.axes.len()
            )));
        }
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(Error::Config(format!("axis '{}' is empty", a.name)));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("axis '{}' has non-finite values", a.name)));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Axis values of point `i` (row-major, last axis fastest).
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            let n = a.values.len();
            out[k] = a.values[i % n];
            i /= n;
        }
        out
    }
}

fn expected_axes(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Rabi => &["power"],
        ExperimentKind::Ramsey => &["tau"],
        ExperimentKind::BlochMap => &["theta", "tau"],
        ExperimentKind::EchoFine => &["fine_delay"],
        ExperimentKind::EchoDecay => &["two_t", "fine_delay"],
        ExperimentKind::PumpScan => &["detuning"],
        ExperimentKind::HysteresisRamsey => &["tau"],
        ExperimentKind::T1 => &["tau"],
    }
}

/// Fine delays covering one Larmor period in `n` equal steps.
pub fn one_period(omega: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| TWO_PI / omega * k as f64 / n as f64).collect()
}

fn default_axes(kind: ExperimentKind, omega: f64) -> Vec<Axis> {
    match kind {
        ExperimentKind::Rabi => vec![Axis::linspace("power", "relative", 0.0, 6.0, 61)],
        ExperimentKind::Ramsey => vec![Axis::linspace("tau", "s", 0.0, 300e-12, 151)],
        ExperimentKind::BlochMap => vec![
            Axis::linspace("theta", "rad", 0.0, PI, 9),
            Axis::linspace("tau", "s", 0.0, 100e-12, 51),
        ],
        ExperimentKind::EchoFine => vec![Axis::linspace("fine_delay", "s", -20e-12, 20e-12, 41)],
        ExperimentKind::EchoDecay => vec![
            Axis::linspace("two_t", "s", 20e-9, 3.0e-6, 16),
            Axis::new("fine_delay", "s", one_period(omega, 8)),
        ],
        ExperimentKind::PumpScan => vec![Axis::linspace("detuning", "Hz", -20e9, 20e9, 161)],
        ExperimentKind::HysteresisRamsey => vec![Axis::linspace("tau", "s", 0.9e-9, 1.1e-9, 101)],
        ExperimentKind::T1 => vec![Axis::linspace("tau", "s", 0.0, 500e-6, 26)],
    }
}

/// Counts of one scan direction, aligned with the result's axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub direction: Direction,
    /// Mean detected photons per shot.
    pub mean_counts: Vec<f64>,
    pub shots: Vec<u64>,
    pub std_err: Vec<f64>,
    /// Noise-free expectation of `mean_counts`.
    pub expected: Vec<f64>,
    /// Overhauser shift at each point after the dwell, rad/s.
    pub overhauser: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: ExperimentKind,
    pub axes: Vec<Axis>,
    pub series: Vec<Series>,
    pub manifest: serde_json::Value,
}

impl SweepResult {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn series(&self, d: Direction) -> Option<&Series> {
        self.series.iter().find(|s| s.direction == d)
    }

    /// Axis values of point `i`.
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            let n = a.values.len();
            out[k] = a.values[i % n];
            i /= n;
        }
        out
    }
}

fn sequence_for(kind: ExperimentKind, b: &SequenceBuilder, cfg: &ExperimentConfig, v: &[f64]) -> Result<Sequence> {
    match kind {
        ExperimentKind::Rabi => b.make_rabi(v[0]),
        ExperimentKind::Ramsey => b.make_ramsey(v[0] + v.get(1).copied().unwrap_or(0.0), cfg.pulse_angle),
        ExperimentKind::BlochMap => b.make_bloch_map(v[0], v[1]),
        ExperimentKind::EchoFine => b.make_echo(cfg.echo_delay, v[0]),
        ExperimentKind::EchoDecay => b.make_echo(v[0], v[1]),
        ExperimentKind::PumpScan => b.make_pump_scan(TWO_PI * v[0]),
        ExperimentKind::HysteresisRamsey => b.make_ramsey(v[0], cfg.pulse_angle),
        ExperimentKind::T1 => b.make_t1(v[0]),
    }
}

struct PointOutcome {
    counts: u64,
    std_err: f64,
    mean_prob: f64,
}

fn sample_point(
    engine: &Engine,
    prog: &Program,
    shots: u64,
    draws: u64,
    larmor_shift: f64,
    optical_shift: f64,
    readout: &Readout,
    rng: &mut ChaCha8Rng,
) -> PointOutcome {
    let batches = draws.min(shots).max(1);
    let base = shots / batches;
    let extra = shots % batches;
    let mut buf = Vec::new();
    let mut total = 0u64;
    let mut prob_sum = 0.0;
    let mut rates = Vec::with_capacity(batches as usize);
    for b in 0..batches {
        let n = base + u64::from(b < extra);
        let d = engine.draw(prog, larmor_shift, optical_shift, rng);
        let p = engine.emission(prog, &d, Some(rng), &mut buf);
        let c = photon_counts(p, n, readout.efficiency, readout.dark_rate, rng);
        total += c;
        prob_sum += p * n as f64;
        rates.push((c as f64, n as f64));
    }
    let mean = total as f64 / shots as f64;
    let std_err = if batches >= 2 {
        let b = batches as f64;
        let var: f64 = rates.iter().map(|(c, n)| (c - n * mean).powi(2)).sum::<f64>() / (b - 1.0);
        (var * b).sqrt() / shots as f64
    } else {
        (total.max(1) as f64).sqrt() / shots as f64
    };
    PointOutcome { counts: total, std_err, mean_prob: prob_sum / shots as f64 }
}

/// Runs one experiment.
pub fn run(setup: &Setup, cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let setup = setup.for_species(cfg.charge_species);
    setup.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(&setup, cfg))
}

fn run_in_pool(setup: &Setup, cfg: &ExperimentConfig) -> Result<SweepResult> {
    let cal = setup.calibrated()?;
    let scanning;
    let setup = if cfg.kind == ExperimentKind::PumpScan {
        let mut s = setup.clone();
        s.builder.pump.pump_rabi = s.scan_pump_rabi;
        scanning = s;
        &scanning
    } else {
        setup
    };
    let pcal = cal.power_calibration()?;
    let builder = sweep_builder(setup, cfg.kind, &pcal);
    let spectral = cfg.kind == ExperimentKind::PumpScan;
    let n = cfg.n_points();
    let programs = (0..n)
        .into_par_iter()
        .map(|i| sequence_for(cfg.kind, &builder, cfg, &cfg.point(i)).map(|s| Program::compile(&s, spectral)))
        .collect::<Result<Vec<_>>>()?;

    let mut engine = Engine::new(setup)?;
    if spectral {
        let det = &cfg.axes[0].values;
        let (lo, hi) = det.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let reach = 6.0 * setup.noise.optical_linewidth_fwhm / noise::GAUSSIAN_FWHM_PER_SIGMA
            + setup.feedback.bound
            + 20.0 * setup.builder.pump.pump_rabi.max(setup.system.gamma_sp);
        engine = engine.with_pump_table(TWO_PI * lo - reach, TWO_PI * hi + reach)?;
    }
    engine.prepare_pulses(&programs, &pcal)?;

    let feedback = cfg.kind.has_feedback() && setup.feedback.enabled;
    let mut series = Vec::new();
    for &dir in cfg.scan_direction.directions() {
        let s = if feedback {
            scan_with_feedback(&engine, setup, cfg, &programs, dir)?
        } else {
            scan_parallel(&engine, setup, cfg, &programs, dir)
        };
        series.push(s);
    }
    let manifest = serde_json::json!({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "code_version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg,
        "calibration": cal,
        "larmor_frequency_hz": engine.omega_l() / TWO_PI,
    });
    Ok(SweepResult { kind: cfg.kind, axes: cfg.axes.clone(), series, manifest })
}

fn sweep_builder(setup: &Setup, kind: ExperimentKind, pcal: &PowerCalibration) -> SequenceBuilder {
    let mut builder = SequenceBuilder { calibration: pcal.clone(), ..setup.builder.clone() };
    if kind == ExperimentKind::T1 {
        builder.max_periods = builder.max_periods.max(100_000);
    }
    builder
}

/// Builds every sequence of a sweep, reporting the first invalid point.
pub fn check_sequences(setup: &Setup, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let setup = setup.for_species(cfg.charge_species);
    setup.validate()?;
    let pcal = setup.calibrated()?.power_calibration()?;
    let builder = sweep_builder(&setup, cfg.kind, &pcal);
    for i in 0..cfg.n_points() {
        let p = cfg.point(i);
        sequence_for(cfg.kind, &builder, cfg, &p)
            .map_err(|e| Error::Sequence(format!("{} at {:?}: {e}", cfg.kind, p)))?;
    }
    Ok(())
}

fn scan_parallel(engine: &Engine, setup: &Setup, cfg: &ExperimentConfig, programs: &[Program], dir: Direction) -> Series {
    let outcomes: Vec<PointOutcome> = programs
        .par_iter()
        .enumerate()
        .map(|(i, prog)| {
            let mut rng = point_rng(cfg.seed, dir, i);
            sample_point(engine, prog, cfg.shots_per_point, cfg.draws_per_point, 0.0, 0.0, &setup.readout, &mut rng)
        })
        .collect();
    assemble(dir, cfg, setup, outcomes, vec![0.0; programs.len()], None)
}

fn assemble(
    dir: Direction,
    cfg: &ExperimentConfig,
    setup: &Setup,
    outcomes: Vec<PointOutcome>,
    overhauser: Vec<f64>,
    expected: Option<Vec<f64>>,
) -> Series {
    let r = &setup.readout;
    let shots = cfg.shots_per_point;
    let expected = expected
        .unwrap_or_else(|| outcomes.iter().map(|o| o.mean_prob).collect())
        .into_iter()
        .map(|p| p * r.efficiency + r.dark_rate)
        .collect();
    Series {
        direction: dir,
        mean_counts: outcomes.iter().map(|o| o.counts as f64 / shots as f64).collect(),
        shots: vec![shots; outcomes.len()],
        std_err: outcomes.iter().map(|o| o.std_err).collect(),
        expected,
        overhauser,
    }
}

/// Visits points in scan order, letting the nuclear state settle at each
/// point before sampling it.
fn scan_with_feedback(
    engine: &Engine,
    setup: &Setup,
    cfg: &ExperimentConfig,
    programs: &[Program],
    dir: Direction,
) -> Result<Series> {
    let n = programs.len();
    let fb = &setup.feedback;
    let mut state = fb.state(setup.species(setup.system.species).suppression);
    let dt = fb.dwell / f64::from(fb.updates_per_point);
    let pump = cfg.kind == ExperimentKind::PumpScan;
    let bright = engine.bright_emission();
    let midline = engine.midline_emission();
    let lasers: Vec<f64> = (0..n).map(|i| TWO_PI * cfg.point(i)[0]).collect();
    let profile = if pump && n > 0 {
        let (lo, hi) = lasers.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        Some(engine.spectral_profile(&programs[0], lasers[0], lo - fb.bound, hi + fb.bound))
    } else {
        None
    };
    let expect = |i: usize, s: f64| match &profile {
        Some(p) => p.at(lasers[i] - s),
        None => engine.expected(&programs[i], s, 0.0),
    };

    let mut outcomes: Vec<Option<PointOutcome>> = (0..n).map(|_| None).collect();
    let mut shifts = vec![0.0; n];
    let mut expected = vec![0.0; n];
    let order: Box<dyn Iterator<Item = usize>> = match dir {
        Direction::Up => Box::new(0..n),
        Direction::Down => Box::new((0..n).rev()),
    };
    for i in order {
        let prog = &programs[i];
        let laser = lasers[i];
        let shifted = |s: f64| if pump { (0.0, s) } else { (s, 0.0) };
        for _ in 0..fb.updates_per_point {
            let signal = expect(i, state.shift);
            let drag = if pump {
                Drag {
                    target: fb.pump_target * bright,
                    pull: fb.pump_drag * ((laser - state.shift) / fb.pull_width).tanh(),
                }
            } else {
                Drag { target: midline, pull: 1.0 }
            };
            state = noise::update_overhauser(&state, signal, drag, dt)?;
        }
        let (l, o) = shifted(state.shift);
        expected[i] = expect(i, state.shift);
        shifts[i] = state.shift;
        let mut rng = point_rng(cfg.seed, dir, i);
        outcomes[i] = Some(sample_point(engine, prog, cfg.shots_per_point, cfg.draws_per_point, l, o, &setup.readout, &mut rng));
    }
    let outcomes = outcomes.into_iter().map(|o| o.expect("every point visited")).collect();
    Ok(assemble(dir, cfg, setup, outcomes, shifts, Some(expected)))
}

/// Normalized L1 distance between two scans of the same axis.
pub fn hysteresis_metric(up: &[f64], down: &[f64], amplitude: f64) -> f64 {
    let n = up.len().min(down.len());
    if n == 0 || !(amplitude > 0.0) {
        return 0.0;
    }
    up.iter().zip(down).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64 / amplitude
}

/// Value of [`hysteresis_metric`] expected from shot noise alone.
pub fn hysteresis_noise_floor(up_err: &[f64], down_err: &[f64], amplitude: f64) -> f64 {
    let n = up_err.len().min(down_err.len());
    if n == 0 || !(amplitude > 0.0) {
        return 0.0;
    }
    let k = (2.0 / PI).sqrt();
    up_err.iter().zip(down_err).map(|(a, b)| k * (a * a + b * b).sqrt()).sum::<f64>() / n as f64 / amplitude
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hysteresis {
    /// Sampled metric.
    pub metric: f64,
    /// Three times the shot-noise expectation of the metric.
    pub threshold: f64,
    pub detected: bool,
    /// Metric of the noise-free expectations.
    pub model_metric: f64,
    /// Half the peak-to-peak swing of the direction-averaged signal.
    pub amplitude: f64,
}

/// Up/down comparison of a two-direction result.
pub fn hysteresis(result: &SweepResult) -> Option<Hysteresis> {
    let up = result.series(Direction::Up)?;
    let down = result.series(Direction::Down)?;
    let swing = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        0.5 * (hi - lo)
    };
    let avg = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>();
    let amplitude = swing(&avg(&up.expected, &down.expected));
    let sampled_amp = swing(&avg(&up.mean_counts, &down.mean_counts)).max(amplitude);
    let metric = hysteresis_metric(&up.mean_counts, &down.mean_counts, sampled_amp);
    let threshold = 3.0 * hysteresis_noise_floor(&up.std_err, &down.std_err, sampled_amp);
    let model_metric = hysteresis_metric(&up.expected, &down.expected, amplitude);
    Some(Hysteresis { metric, threshold, detected: metric > threshold, model_metric, amplitude })
}

/// A pulse at relative power `power` on the setup's template.
pub fn pulse_at_power(setup: &Setup, power: f64) -> Result<Pulse> {
    setup.builder.pulse.with_power(power, setup.builder.rabi_unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: ExperimentKind) -> (Setup, ExperimentConfig) {
        let setup = Setup { calibration: Some(Calibration { half_pi_power: 0.9, pi_power: 1.8 }), ..Default::default() };
        let mut cfg = ExperimentConfig::new(kind, &setup);
        cfg.shots_per_point = 2000;
        cfg.draws_per_point = 200;
        (setup, cfg)
    }

    #[test]
    fn photon_count_limits() {
        let mut rng = point_rng(1, Direction::Up, 0);
        assert_eq!(photon_counts(0.0, 1000, 0.5, 0.0, &mut rng), 0);
        assert_eq!(photon_counts(1.0, 1000, 1.0, 0.0, &mut rng), 1000);
    }

    #[test]
    fn photon_count_mean() {
        let n = 4000;
        let (shots, p, eff, dark) = (500u64, 0.3, 0.2, 0.01);
        let total: u64 = (0..n).map(|i| photon_counts(p, shots, eff, dark, &mut point_rng(9, Direction::Up, i))).sum();
        let mean = total as f64 / n as f64;
        let expect = shots as f64 * (p * eff + dark);
        let sd = (shots as f64 * (p * eff * (1.0 - p * eff) + dark)).sqrt() / (n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * sd, "{mean} vs {expect}");
    }

    #[test]
    fn streams_are_reproducible() {
        let a = photon_counts(0.4, 100, 0.5, 0.1, &mut point_rng(3, Direction::Down, 17));
        let b = photon_counts(0.4, 100, 0.5, 0.1, &mut point_rng(3, Direction::Down, 17));
        assert_eq!(a, b);
    }

    #[test]
    fn kinds_parse() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert_eq!("echo-decay".parse::<ExperimentKind>().unwrap(), ExperimentKind::EchoDecay);
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn point_indexing_is_row_major() {
        let (_, mut cfg) = quick(ExperimentKind::BlochMap);
        cfg.axes = vec![Axis::new("theta", "rad", vec![0.0, 1.0]), Axis::new("tau", "s", vec![5.0, 6.0, 7.0])];
        assert_eq!(cfg.point(0), vec![0.0, 5.0]);
        assert_eq!(cfg.point(2), vec![0.0, 7.0]);
        assert_eq!(cfg.point(4), vec![1.0, 6.0]);
    }

    #[test]
    fn rabi_zero_power_is_baseline() {
        let (setup, mut cfg) = quick(ExperimentKind::Rabi);
        cfg.axes = vec![Axis::new("power", "relative", vec![0.0, 1.8])];
        let r = run(&setup, &cfg).unwrap();
        let s = &r.series[0];
        assert!(s.expected[0] < 2e-3, "{}", s.expected[0]);
        assert!(s.expected[1] > 0.08, "{}", s.expected[1]);
    }

    #[test]
    fn config_rejects_empty_sweep() {
        let (setup, mut cfg) = quick(ExperimentKind::T1);
        cfg.axes[0].values.clear();
        assert!(matches!(run(&setup, &cfg), Err(Error::Config(_))));
        cfg.axes[0].values.push(0.0);
        cfg.shots_per_point = 0;
        assert!(matches!(run(&setup, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn hysteresis_metric_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(hysteresis_metric(&a, &a, 1.0), 0.0);
        assert!((hysteresis_metric(&a, &[1.0, 2.0, 4.0], 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!((hysteresis_noise_floor(&[0.3], &[0.4], 1.0) - 0.5 * (2.0 / PI).sqrt()).abs() < 1e-15);
    }
}
