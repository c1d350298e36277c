//! Baked-in presets: each runs one or more sweeps with fixed ranges and
//! returns the results, their analyses and a summary.

use std::fmt;
use std::str::FromStr;

use serde_json::json;

use crate::config::RunConfig;
use crate::experiments::analysis::{analyze, fringe_amplitudes, Analysis, OPERATION_BUDGET};
use crate::experiments::{one_period, run, Axis, ExperimentKind, ScanDirection, Setup, SweepResult};
use crate::fitting::FitResult;
use crate::levels::ChargeSpecies;
use crate::output::{line_plot, Line};
use crate::{Error, Result, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    P2C,
    P2D,
    P2E,
    P3A,
    P3B,
    P3C,
    P3D,
    P4A,
    P4B,
    P4C,
    P4D,
    P4E,
    P4F,
}

impl Preset {
    pub const ALL: [Preset; 13] = [
        Preset::P2C,
        Preset::P2D,
        Preset::P2E,
        Preset::P3A,
        Preset::P3B,
        Preset::P3C,
        Preset::P3D,
        Preset::P4A,
        Preset::P4B,
        Preset::P4C,
        Preset::P4D,
        Preset::P4E,
        Preset::P4F,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Preset::P2C => "2C",
            Preset::P2D => "2D",
            Preset::P2E => "2E",
            Preset::P3A => "3A",
            Preset::P3B => "3B",
            Preset::P3C => "3C",
            Preset::P3D => "3D",
            Preset::P4A => "4A",
            Preset::P4B => "4B",
            Preset::P4C => "4C",
            Preset::P4D => "4D",
            Preset::P4E => "4E",
            Preset::P4F => "4F",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::P2C => "single-pulse Rabi oscillation versus relative power",
            Preset::P2D => "Ramsey fringes over 300 ps",
            Preset::P2E => "two-pulse map over pulse angle and delay",
            Preset::P3A => "electron Ramsey delay scan up and down with nuclear feedback",
            Preset::P3B => "hole Ramsey delay scan up and down with nuclear feedback",
            Preset::P3C => "electron pump-detuning scan up and down",
            Preset::P3D => "hole pump-detuning scan with Gaussian profile fit",
            Preset::P4A => "Ramsey fringes out to 6 ns",
            Preset::P4B => "Ramsey fringe envelope with Gaussian and exponential fits",
            Preset::P4C => "Ramsey fringes near T2* at two gate biases",
            Preset::P4D => "Larmor frequency versus gate bias",
            Preset::P4E => "spin-echo fringes versus fine delay at 2T = 130 ns",
            Preset::P4F => "spin-echo amplitude versus total delay with exponential fit",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Preset> {
        let id = s.trim().to_ascii_uppercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}' (expected one of 2C-2E, 3A-3D, 4A-4F)")))
    }
}

/// One sweep of a preset.
#[derive(Debug, Clone)]
pub struct PresetRun {
    /// File stem for the run's artifacts.
    pub stem: String,
    pub setup: Setup,
    pub result: SweepResult,
    pub analysis: Analysis,
    /// Replaces the default plot.
    pub svg: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub preset: Preset,
    pub runs: Vec<PresetRun>,
    pub summary: serde_json::Value,
}

impl Outcome {
    /// First failing fit across runs.
    pub fn require_fits(&self) -> Result<()> {
        self.runs.iter().try_for_each(|r| r.analysis.require_fits())
    }
}

struct Ctx<'a> {
    config: &'a RunConfig,
    setup: Setup,
    preset: Preset,
}

impl Ctx<'_> {
    fn sweep(
        &self,
        kind: ExperimentKind,
        species: ChargeSpecies,
        axes: Option<Vec<Axis>>,
        setup: Option<&Setup>,
        suffix: &str,
    ) -> Result<PresetRun> {
        let setup = setup.unwrap_or(&self.setup);
        let mut cfg = self.config.experiment(kind, setup)?;
        cfg.charge_species = species;
        if kind.has_feedback() {
            cfg.scan_direction = ScanDirection::Both;
        }
        if let Some(a) = axes {
            cfg.axes = a;
        }
        cfg.validate()?;
        let result = run(setup, &cfg)?;
        let analysis = analyze(&result, &setup.for_species(species))?;
        let stem = format!("{}{}_{}", self.preset.id(), suffix, cfg.seed);
        Ok(PresetRun { stem, setup: setup.clone(), result, analysis, svg: None })
    }
}

fn omega(setup: &Setup) -> f64 {
    setup.for_species(ChargeSpecies::Hole).system.ground_splitting()
}

fn long_ramsey_axes(setup: &Setup) -> Vec<Axis> {
    vec![Axis::linspace("tau", "s", 0.0, 6e-9, 25), Axis::new("fine_delay", "s", one_period(omega(setup), 8))]
}

/// Runs a preset on the configuration's setup.
pub fn reproduce(preset: Preset, config: &RunConfig) -> Result<Outcome> {
    let setup = config.setup()?;
    let ctx = Ctx { config, setup, preset };
    let hole = ChargeSpecies::Hole;
    let electron = ChargeSpecies::Electron;
    let (runs, summary) = match preset {
        Preset::P2C => {
            let r = ctx.sweep(ExperimentKind::Rabi, hole, None, None, "")?;
            let s = json!({ "first_max_power": r.analysis.get("first_max_power"), "visibility": r.analysis.get("visibility") });
            (vec![r], s)
        }
        Preset::P2D => {
            let r = ctx.sweep(ExperimentKind::Ramsey, hole, None, None, "")?;
            let s = json!({
                "frequency_hz": r.analysis.get("frequency_hz"),
                "visibility": r.analysis.get("visibility"),
                "fidelity": r.analysis.get("fidelity"),
            });
            (vec![r], s)
        }
        Preset::P2E => {
            let r = ctx.sweep(ExperimentKind::BlochMap, hole, None, None, "")?;
            let s = json!({ "surface_max_deviation": r.analysis.get("surface_max_deviation_expected") });
            (vec![r], s)
        }
        Preset::P3A | Preset::P3B | Preset::P3C | Preset::P3D => {
            let (kind, species) = match preset {
                Preset::P3A => (ExperimentKind::HysteresisRamsey, electron),
                Preset::P3B => (ExperimentKind::HysteresisRamsey, hole),
                Preset::P3C => (ExperimentKind::PumpScan, electron),
                _ => (ExperimentKind::PumpScan, hole),
            };
            let r = ctx.sweep(kind, species, None, None, "")?;
            let mut s = json!({
                "species": species,
                "hysteresis": r.analysis.hysteresis,
            });
            for key in ["fwhm_hz_up", "fwhm_hz_down", "residual_rms_up", "residual_rms_down"] {
                if let Some(v) = r.analysis.get(key) {
                    s[key] = json!(v);
                }
            }
            (vec![r], s)
        }
        Preset::P4A | Preset::P4B => {
            let mut r = ctx.sweep(ExperimentKind::Ramsey, hole, Some(long_ramsey_axes(&ctx.setup)), None, "")?;
            let s = json!({
                "t2star_s": r.analysis.get("t2star_s"),
                "envelope": r.analysis.envelope.as_ref().map(|e| e.choice),
                "rss_ratio": r.analysis.get("envelope_rss_ratio"),
            });
            if preset == Preset::P4B {
                r.svg = envelope_svg(&r, "Ramsey envelope");
            }
            (vec![r], s)
        }
        Preset::P4C => {
            let t2s = ctx.setup.noise.t2_star();
            let axes = vec![Axis::linspace("tau", "s", t2s - 50e-12, t2s + 50e-12, 101)];
            let mut runs = Vec::new();
            for bias in [1.55, 1.65] {
                let mut s = ctx.setup.clone();
                s.system = s.system.at_bias(bias)?;
                runs.push(ctx.sweep(ExperimentKind::Ramsey, hole, Some(axes.clone()), Some(&s), &format!("_{bias:.2}V"))?);
            }
            let phase = |r: &PresetRun| -> Option<f64> {
                let f = r.analysis.fits.get("fringes")?;
                Some(TWO_PI * f.value("frequency") * t2s + f.value("phase"))
            };
            let diff = match (phase(&runs[0]), phase(&runs[1])) {
                (Some(a), Some(b)) => Some((a - b).rem_euclid(TWO_PI)),
                _ => None,
            };
            let s = json!({
                "tau_star_s": t2s,
                "biases_v": [1.55, 1.65],
                "phase_difference_rad": diff,
                "anti_phase": diff.map(|d| (d - std::f64::consts::PI).abs() < 0.5),
            });
            (runs, s)
        }
        Preset::P4D => {
            let axes = vec![Axis::linspace("tau", "s", 0.0, 1e-9, 201)];
            let biases = [1.50, 1.55, 1.60, 1.65, 1.70];
            let mut runs = Vec::new();
            for bias in biases {
                let mut s = ctx.setup.clone();
                s.system = s.system.at_bias(bias)?;
                runs.push(ctx.sweep(ExperimentKind::Ramsey, hole, Some(axes.clone()), Some(&s), &format!("_{bias:.2}V"))?);
            }
            let freqs: Vec<f64> = runs.iter().map(|r| r.analysis.get("frequency_hz").unwrap_or(f64::NAN)).collect();
            let monotone = freqs.windows(2).all(|w| w[1] > w[0]) || freqs.windows(2).all(|w| w[1] < w[0]);
            let slope = fitting_slope(&biases, &freqs);
            let s = json!({ "biases_v": biases, "frequency_hz": freqs, "monotone": monotone, "slope_hz_per_v": slope });
            (runs, s)
        }
        Preset::P4E => {
            let r = ctx.sweep(ExperimentKind::EchoFine, hole, None, None, "")?;
            let s = json!({
                "two_t_s": ctx.config.experiment.echo_delay_ns * 1e-9,
                "frequency_hz": r.analysis.get("frequency_hz"),
                "visibility": r.analysis.get("visibility"),
            });
            (vec![r], s)
        }
        Preset::P4F => {
            let mut r = ctx.sweep(ExperimentKind::EchoDecay, hole, None, None, "")?;
            r.svg = envelope_svg(&r, "echo envelope");
            let pi = r.analysis.get("pi_duration_s");
            let t2 = r.analysis.get("t2_s");
            let s = json!({
                "t2_s": t2,
                "envelope": r.analysis.envelope.as_ref().map(|e| e.choice),
                "pi_duration_s": pi,
                "pi_within_budget": pi.map(|p| p <= OPERATION_BUDGET),
                "t2_over_budget": r.analysis.get("t2_over_budget"),
                "operations_ok": t2.map(|t| t / OPERATION_BUDGET >= 5e4),
                "operations_per_t2": r.analysis.get("operations_per_t2"),
            });
            (vec![r], s)
        }
    };
    Ok(Outcome { preset, runs, summary })
}

/// Least-squares slope of `y` against `x`.
fn fitting_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Envelope amplitudes with both fitted decays.
fn envelope_svg(r: &PresetRun, title: &str) -> Option<String> {
    let sel = r.analysis.envelope.as_ref()?;
    let t = &r.result.axes[0].values;
    let (_, amp, _) = fringe_amplitudes(&r.result, &r.result.series[0], omega(&r.setup));
    let dense: Vec<f64> = (0..=200).map(|k| t[0] + (t[t.len() - 1] - t[0]) * f64::from(k) / 200.0).collect();
    let curve = |f: &FitResult, tau: &str, gauss: bool| -> Vec<f64> {
        let (a0, tc) = (f.value("A0"), f.value(tau));
        dense.iter().map(|x| if gauss { a0 * (-(x / tc).powi(2)).exp() } else { a0 * (-x / tc).exp() }).collect()
    };
    let lines = [
        Line { label: "fringe amplitude".into(), x: t.clone(), y: amp, color: "#1f5fa8", dots: true },
        Line { label: "Gaussian fit".into(), x: dense.clone(), y: curve(&sel.gaussian, "t2star", true), color: "#c0392b", dots: false },
        Line { label: "exponential fit".into(), x: dense.clone(), y: curve(&sel.exponential, "t2", false), color: "#2e8b57", dots: false },
    ];
    let desc = format!("manifest {}", r.result.manifest);
    Some(line_plot(title, "delay [s]", "fringe amplitude / shot", &lines, &desc))
}
