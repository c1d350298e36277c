//! Run configuration: a strict TOML schema in lab units, converted to and
//! from [`Setup`] and [`ExperimentConfig`].
//!
//! Every table and key is optional and falls back to the built-in default;
//! unknown keys are errors. Cyclic frequencies are in GHz (or THz, MHz),
//! angular rates carry a `_per_ns` or `_per_us` suffix, times carry their unit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::experiments::{
    one_period, Axis, Calibration, ExperimentConfig, ExperimentKind, Feedback, PulseModel, Readout, ScanDirection,
    Setup, SpeciesParams,
};
use crate::levels::{ChargeSpecies, Polarization};
use crate::noise::{BiasModulation, OuProcess};
use crate::pulses::{PulseShape, PumpLeg, Time};
use crate::{Error, Result, TWO_PI};

const GHZ: f64 = TWO_PI * 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemTable {
    pub species: ChargeSpecies,
    pub b_field_t: f64,
    pub g_hole: f64,
    pub g_electron: f64,
    pub trion_frequency_thz: f64,
    pub gamma_sp_per_ns: f64,
    pub decay_branching: f64,
    pub larmor_bias_slope_ghz_per_v: f64,
    pub bias_ref_v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub larmor_ref_ghz: Option<f64>,
    pub bias_range_v: [f64; 2],
    pub bias_v: f64,
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseTable {
    /// Standard deviation of the quasi-static Larmor offset, MHz.
    pub sigma_quasistatic_mhz: f64,
    pub gamma_phi_per_us: f64,
    pub t1_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_modulation: Option<BiasModulationTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ou: Option<OuTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasModulationTable {
    pub amplitude_v: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuTable {
    pub sigma_mhz: f64,
    pub correlation_time_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackTable {
    pub enabled: bool,
    pub gain: f64,
    pub relaxation_rate_per_s: f64,
    pub bound_ghz: f64,
    pub pump_target: f64,
    pub pump_drag: f64,
    pub pull_width_ghz: f64,
    pub dwell_s: f64,
    pub updates_per_point: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesTable {
    pub suppression: f64,
    pub optical_linewidth_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeciesTables {
    pub hole: SpeciesTable,
    pub electron: SpeciesTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseModelName {
    Ideal,
    Effective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseTable {
    pub model: PulseModelName,
    /// Bloch-vector contraction per π/2 of rotation (ideal model only).
    pub contrast: f64,
    pub shape: PulseShape,
    pub fwhm_ps: f64,
    pub detuning_ghz: f64,
    pub polarization: Polarization,
    /// Peak Rabi frequency at unit relative power, GHz.
    pub rabi_unit_ghz: f64,
    /// Fixed relative powers; both or neither.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_pi_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpTable {
    pub target: PumpLeg,
    pub duration_ns: f64,
    pub rabi_per_ns: f64,
    pub scan_rabi_per_ns: f64,
    pub period_ns: f64,
    pub guard_ps: f64,
    pub max_periods: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutTable {
    pub efficiency: f64,
    pub dark_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentTable {
    pub seed: u64,
    pub shots_per_point: u64,
    pub draws_per_point: u64,
    /// Scan direction; kinds with feedback default to both when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<ScanDirection>,
    pub species: ChargeSpecies,
    /// Ramsey pulse angle in units of π.
    pub pulse_angle_pi: f64,
    pub echo_delay_ns: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub plot: bool,
}

/// One sweep axis in a `[sweep.<kind>]` table, values in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum AxisSpec {
    Range { start: f64, stop: f64, points: usize },
    Values { values: Vec<f64> },
    /// `larmor_steps` equal fine delays covering one Larmor period.
    LarmorPeriod { larmor_steps: usize },
}

/// The whole file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemTable,
    pub noise: NoiseTable,
    pub feedback: FeedbackTable,
    pub species: SpeciesTables,
    pub pulse: PulseTable,
    pub pump: PumpTable,
    pub readout: ReadoutTable,
    pub experiment: ExperimentTable,
    /// Axis overrides keyed by experiment kind, then axis name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, BTreeMap<String, AxisSpec>>,
}

impl Default for SystemTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).system
    }
}
impl Default for NoiseTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).noise
    }
}
impl Default for FeedbackTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).feedback
    }
}
impl Default for SpeciesTables {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).species
    }
}
impl Default for PulseTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).pulse
    }
}
impl Default for PumpTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).pump
    }
}
impl Default for ReadoutTable {
    fn default() -> Self {
        RunConfig::from_setup(&Setup::default()).readout
    }
}

impl Default for ExperimentTable {
    fn default() -> Self {
        ExperimentTable {
            seed: 0,
            shots_per_point: 10_000,
            draws_per_point: 10_000,
            direction: None,
            species: ChargeSpecies::Hole,
            pulse_angle_pi: 0.5,
            echo_delay_ns: 130.0,
            threads: None,
            out_dir: PathBuf::from("out"),
            plot: true,
        }
    }
}

fn species_table(p: &SpeciesParams) -> SpeciesTable {
    SpeciesTable { suppression: p.suppression, optical_linewidth_ghz: p.optical_linewidth_fwhm / GHZ }
}

fn species_params(t: &SpeciesTable) -> SpeciesParams {
    SpeciesParams { suppression: t.suppression, optical_linewidth_fwhm: t.optical_linewidth_ghz * GHZ }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// TOML echoed into artifacts; output location, plotting and threads are left out
    /// so they do not change the files' contents.
    pub fn echo(&self) -> Result<String> {
        let mut c = self.clone();
        c.experiment.out_dir = ExperimentTable::default().out_dir;
        c.experiment.plot = true;
        c.experiment.threads = None;
        c.to_toml()
    }

    /// The file that reproduces `setup` with default experiment settings.
    pub fn from_setup(s: &Setup) -> RunConfig {
        let sys = &s.system;
        let n = &s.noise;
        let fb = &s.feedback;
        let b = &s.builder;
        let (model, contrast) = match s.pulse_model {
            PulseModel::Ideal { contrast } => (PulseModelName::Ideal, contrast),
            PulseModel::Effective => (PulseModelName::Effective, 1.0),
        };
        RunConfig {
            system: SystemTable {
                species: sys.species,
                b_field_t: sys.b_field,
                g_hole: sys.g_hole,
                g_electron: sys.g_electron,
                trion_frequency_thz: sys.trion_frequency / (GHZ * 1e3),
                gamma_sp_per_ns: sys.gamma_sp * 1e-9,
                decay_branching: sys.decay_branching,
                larmor_bias_slope_ghz_per_v: sys.larmor_bias_slope / GHZ,
                bias_ref_v: sys.bias_ref,
                larmor_ref_ghz: sys.larmor_ref.map(|w| w / GHZ),
                bias_range_v: [sys.bias_range.0, sys.bias_range.1],
                bias_v: sys.bias,
                imbalance: s.imbalance,
            },
            noise: NoiseTable {
                sigma_quasistatic_mhz: n.sigma_quasistatic / GHZ * 1e3,
                gamma_phi_per_us: n.gamma_phi * 1e-6,
                t1_us: n.t1 * 1e6,
                bias_modulation: n
                    .bias_modulation
                    .map(|m| BiasModulationTable { amplitude_v: m.amplitude, frequency_hz: m.frequency }),
                ou: n.ou.map(|o| OuTable { sigma_mhz: o.sigma / GHZ * 1e3, correlation_time_ns: o.correlation_time * 1e9 }),
            },
            feedback: FeedbackTable {
                enabled: fb.enabled,
                gain: fb.gain,
                relaxation_rate_per_s: fb.relaxation_rate,
                bound_ghz: fb.bound / GHZ,
                pump_target: fb.pump_target,
                pump_drag: fb.pump_drag,
                pull_width_ghz: fb.pull_width / GHZ,
                dwell_s: fb.dwell,
                updates_per_point: fb.updates_per_point,
            },
            species: SpeciesTables { hole: species_table(&s.hole), electron: species_table(&s.electron) },
            pulse: PulseTable {
                model,
                contrast,
                shape: b.pulse.shape,
                fwhm_ps: b.pulse.fwhm.ps(),
                detuning_ghz: b.pulse.detuning / GHZ,
                polarization: b.pulse.polarization,
                rabi_unit_ghz: b.rabi_unit / GHZ,
                half_pi_power: s.calibration.map(|c| c.half_pi_power),
                pi_power: s.calibration.map(|c| c.pi_power),
            },
            pump: PumpTable {
                target: b.pump.target,
                duration_ns: b.pump.duration.ps() * 1e-3,
                rabi_per_ns: b.pump.pump_rabi * 1e-9,
                scan_rabi_per_ns: s.scan_pump_rabi * 1e-9,
                period_ns: b.period.ps() * 1e-3,
                guard_ps: b.guard.ps(),
                max_periods: b.max_periods,
            },
            readout: ReadoutTable { efficiency: s.readout.efficiency, dark_rate: s.readout.dark_rate },
            experiment: ExperimentTable::default(),
            sweep: BTreeMap::new(),
        }
    }

    /// The physical setup described by the file, validated.
    pub fn setup(&self) -> Result<Setup> {
        let d = Setup::default();
        let t = &self.system;
        let system = crate::levels::SpinSystem {
            species: t.species,
            b_field: t.b_field_t,
            g_hole: t.g_hole,
            g_electron: t.g_electron,
            trion_frequency: t.trion_frequency_thz * GHZ * 1e3,
            gamma_sp: t.gamma_sp_per_ns * 1e9,
            decay_branching: t.decay_branching,
            larmor_bias_slope: t.larmor_bias_slope_ghz_per_v * GHZ,
            bias_ref: t.bias_ref_v,
            larmor_ref: t.larmor_ref_ghz.map(|f| f * GHZ),
            bias_range: (t.bias_range_v[0], t.bias_range_v[1]),
            bias: t.bias_v,
        };
        let nt = &self.noise;
        let noise = crate::noise::NoiseModel {
            sigma_quasistatic: nt.sigma_quasistatic_mhz * GHZ * 1e-3,
            gamma_phi: nt.gamma_phi_per_us * 1e6,
            optical_linewidth_fwhm: self.species.hole.optical_linewidth_ghz * GHZ,
            bias_modulation: nt
                .bias_modulation
                .map(|m| BiasModulation { amplitude: m.amplitude_v, frequency: m.frequency_hz }),
            t1: nt.t1_us * 1e-6,
            ou: nt.ou.map(|o| OuProcess { sigma: o.sigma_mhz * GHZ * 1e-3, correlation_time: o.correlation_time_ns * 1e-9 }),
        };
        let f = &self.feedback;
        let feedback = Feedback {
            enabled: f.enabled,
            gain: f.gain,
            relaxation_rate: f.relaxation_rate_per_s,
            bound: f.bound_ghz * GHZ,
            pump_target: f.pump_target,
            pump_drag: f.pump_drag,
            pull_width: f.pull_width_ghz * GHZ,
            dwell: f.dwell_s,
            updates_per_point: f.updates_per_point,
        };
        let p = &self.pulse;
        let pulse_model = match p.model {
            PulseModelName::Ideal => {
                if !(p.contrast > 0.0 && p.contrast <= 1.0) {
                    return Err(Error::Config(format!("pulse contrast must lie in (0, 1], got {}", p.contrast)));
                }
                PulseModel::Ideal { contrast: p.contrast }
            }
            PulseModelName::Effective => PulseModel::Effective,
        };
        let calibration = match (p.half_pi_power, p.pi_power) {
            (Some(half_pi_power), Some(pi_power)) => Some(Calibration { half_pi_power, pi_power }),
            (None, None) => None,
            _ => return Err(Error::Config("set both pulse.half_pi_power and pulse.pi_power, or neither".into())),
        };
        if !(p.fwhm_ps > 0.0) || !(p.rabi_unit_ghz > 0.0) {
            return Err(Error::Config("pulse fwhm_ps and rabi_unit_ghz must be > 0".into()));
        }
        let pm = &self.pump;
        if !(pm.duration_ns > 0.0) || !(pm.rabi_per_ns > 0.0) || !(pm.period_ns > 0.0) || !(pm.guard_ps >= 0.0) {
            return Err(Error::Config("pump duration, Rabi frequency and period must be > 0, guard >= 0".into()));
        }
        if pm.max_periods == 0 {
            return Err(Error::Config("pump.max_periods must be >= 1".into()));
        }
        let mut builder = d.builder.clone();
        builder.pulse.shape = p.shape;
        builder.pulse.fwhm = Time::from_ps(p.fwhm_ps);
        builder.pulse.detuning = p.detuning_ghz * GHZ;
        builder.pulse.polarization = p.polarization;
        builder.rabi_unit = p.rabi_unit_ghz * GHZ;
        builder.pump.target = pm.target;
        builder.pump.duration = Time::from_ns(pm.duration_ns);
        builder.pump.pump_rabi = pm.rabi_per_ns * 1e9;
        builder.period = Time::from_ns(pm.period_ns);
        builder.guard = Time::from_ps(pm.guard_ps);
        builder.max_periods = pm.max_periods;
        let r = &self.readout;
        if !(0.0..=1.0).contains(&r.efficiency) || !(r.dark_rate >= 0.0) {
            return Err(Error::Config("readout efficiency must lie in [0, 1] and dark_rate >= 0".into()));
        }
        let setup = Setup {
            system,
            imbalance: t.imbalance,
            noise,
            feedback,
            hole: species_params(&self.species.hole),
            electron: species_params(&self.species.electron),
            builder,
            scan_pump_rabi: pm.scan_rabi_per_ns * 1e9,
            readout: Readout { efficiency: r.efficiency, dark_rate: r.dark_rate },
            pulse_model,
            calibration,
        };
        setup.for_species(setup.system.species).validate()?;
        Ok(setup)
    }

    /// Sweep for `kind` with the file's experiment settings and axis overrides.
    pub fn experiment(&self, kind: ExperimentKind, setup: &Setup) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let mut cfg = ExperimentConfig::new(kind, setup);
        cfg.seed = e.seed;
        cfg.shots_per_point = e.shots_per_point;
        cfg.draws_per_point = e.draws_per_point;
        if let Some(d) = e.direction {
            cfg.scan_direction = d;
        }
        cfg.charge_species = e.species;
        cfg.pulse_angle = e.pulse_angle_pi * std::f64::consts::PI;
        cfg.echo_delay = e.echo_delay_ns * 1e-9;
        cfg.threads = e.threads;
        if let Some(over) = self.sweep.get(kind.as_str()) {
            let omega = setup.for_species(e.species).system.ground_splitting();
            cfg.axes = axes_with_overrides(&cfg.axes, over, omega)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects override tables for unknown kinds.
    pub fn validate_sweeps(&self) -> Result<()> {
        for k in self.sweep.keys() {
            k.parse::<ExperimentKind>()?;
        }
        Ok(())
    }
}

fn axes_with_overrides(defaults: &[Axis], over: &BTreeMap<String, AxisSpec>, omega: f64) -> Result<Vec<Axis>> {
    let mut axes = defaults.to_vec();
    for (name, spec) in over {
        let values = match spec {
            AxisSpec::Range { start, stop, points } => Axis::linspace(name, "", *start, *stop, *points).values,
            AxisSpec::Values { values } => values.clone(),
            AxisSpec::LarmorPeriod { larmor_steps } => one_period(omega, *larmor_steps),
        };
        let ramsey_fine = name == "fine_delay" && axes.len() == 1 && axes[0].name == "tau";
        match axes.iter_mut().find(|a| &a.name == name) {
            Some(a) => a.values = values,
            // Ramsey accepts a second fine-delay axis for envelope scans.
            None if ramsey_fine => {
                axes.push(Axis::new("fine_delay", "s", values))
            }
            None => {
                let known: Vec<&str> = defaults.iter().map(|a| a.name.as_str()).collect();
                return Err(Error::Config(format!("unknown sweep axis '{name}' (expected one of {known:?})")));
            }
        }
    }
    Ok(axes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_setup() {
        let s = RunConfig::from_toml("").unwrap().setup().unwrap();
        let d = Setup::default();
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-14 * b.abs();
        assert!(rel(s.system.trion_frequency, d.system.trion_frequency));
        assert!(rel(s.noise.sigma_quasistatic, d.noise.sigma_quasistatic));
        assert!(rel(s.feedback.bound, d.feedback.bound));
        assert!(rel(s.builder.pulse.detuning, d.builder.pulse.detuning));
        assert_eq!(s.pulse_model, d.pulse_model);
        assert_eq!(s.builder.pump.target, d.builder.pump.target);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::from_setup(&Setup::default());
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        let s = back.setup().unwrap();
        let d = Setup::default();
        assert!((s.noise.sigma_quasistatic - d.noise.sigma_quasistatic).abs() <= 1e-9 * d.noise.sigma_quasistatic);
        assert!((s.system.g_hole - d.system.g_hole).abs() < 1e-15);
    }

    #[test]
    fn misspelled_keys_are_rejected() {
        let err = RunConfig::from_toml("[noise]\nsigma_quasistatc_mhz = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("sigma_quasistatc_mhz"), "{err}");
        assert!(RunConfig::from_toml("[sweep.rabi]\npower = { start = 0.0, stop = 1.0, points = 3, step = 2 }\n").is_err());
        assert!(RunConfig::from_toml("[nosie]\n").is_err());
        assert!(RunConfig::from_toml("[experiment]\nsed = 3\n").is_err());
    }

    #[test]
    fn negative_decay_rate_rejected() {
        let cfg = RunConfig::from_toml("[system]\ngamma_sp_per_ns = -1.0\n").unwrap();
        assert!(matches!(cfg.setup(), Err(Error::Config(_))));
    }

    #[test]
    fn half_calibration_rejected() {
        let cfg = RunConfig::from_toml("[pulse]\npi_power = 1.8\n").unwrap();
        assert!(cfg.setup().is_err());
    }

    #[test]
    fn sweep_overrides() {
        let text = r#"
            [experiment]
            seed = 7
            shots_per_point = 100
            [sweep.ramsey]
            tau = { start = 0.0, stop = 6e-9, points = 13 }
            fine_delay = { larmor_steps = 8 }
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let setup = cfg.setup().unwrap();
        let e = cfg.experiment(ExperimentKind::Ramsey, &setup).unwrap();
        assert_eq!(e.seed, 7);
        assert_eq!(e.axes.len(), 2);
        assert_eq!(e.axes[0].values.len(), 13);
        assert_eq!(e.axes[1].values.len(), 8);
        let bad = RunConfig::from_toml("[sweep.rabi]\ntau = { values = [1.0] }\n").unwrap();
        assert!(bad.experiment(ExperimentKind::Rabi, &setup).is_err());
        let unknown = RunConfig::from_toml("[sweep.rabbi]\npower = { values = [1.0] }\n").unwrap();
        assert!(unknown.validate_sweeps().is_err());
    }

    #[test]
    fn feedback_direction_default() {
        let cfg = RunConfig::default();
        let setup = cfg.setup().unwrap();
        let e = cfg.experiment(ExperimentKind::PumpScan, &setup).unwrap();
        assert_eq!(e.scan_direction, ScanDirection::Both);
        let e = cfg.experiment(ExperimentKind::Ramsey, &setup).unwrap();
        assert_eq!(e.scan_direction, ScanDirection::Up);
    }
}
