//! Reference values computed independently and frozen here.

use std::f64::consts::PI;

use nalgebra::Vector4;
use qdhole::dynamics::{effective_rotation, optical_pump, DensityMatrix};
use qdhole::experiments::analysis::analyze;
use qdhole::experiments::{pulse_at_power, run, Axis, ExperimentConfig, ExperimentKind, Setup};
use qdhole::fitting::{fidelity_from_visibility, fit_exponential_decay, fit_gaussian_decay};
use qdhole::levels::{zeeman_splitting, ChargeSpecies, SpinSystem, DOWN, UP};
use qdhole::noise::{echo_envelope, fid_envelope, NoiseModel};
use qdhole::pulses::{Pulse, PumpWindow, SequenceBuilder};
use qdhole::C64;

const TWO_PI: f64 = 2.0 * PI;

// g = h·f/(μB·B) with CODATA h and μB, evaluated separately.
const G_HOLE: f64 = 0.269_715_200_210_557_4;
const G_ELECTRON: f64 = 0.312_583_841_303_626_1;
// √2/(2.3 ns)/2π in MHz.
const SIGMA_MHZ: f64 = 97.860_469_147_511_54;
// π/(2.3 ns · 0.1 V) in rad/s/V.
const BIAS_SLOPE: f64 = 13_659_098_493.868_666;
// exp(−130/1100).
const ECHO_130NS: f64 = 0.888_534_486_202_442_7;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn calibrated() -> Setup {
    let s = Setup::default();
    Setup { calibration: Some(s.calibrated().unwrap()), ..s }
}

#[test]
fn published_constants_are_the_defaults() {
    let sys = SpinSystem::default();
    assert_eq!(sys.b_field, 8.0);
    let p = Pulse::default();
    assert!(rel(p.detuning, TWO_PI * 340e9) < 1e-15);
    assert!(rel(p.fwhm.ps(), 3.67) < 1e-12);
    let b = SequenceBuilder::default();
    assert!(rel(b.period.secs(), 13e-9) < 1e-12);
    assert!(rel(b.pump.duration.secs(), 26e-9) < 1e-12);
    let n = NoiseModel::default();
    assert!(rel(n.t2_star(), 2.3e-9) < 1e-12);
    assert!(rel(1.0 / n.gamma_phi, 1.1e-6) < 1e-12);
    let s = Setup::default();
    assert!(rel(s.hole.optical_linewidth_fwhm, TWO_PI * 6.7e9) < 1e-12);
    assert!(s.hole.suppression >= 30.0 * s.electron.suppression);
}

#[test]
fn g_factors_reproduce_splittings() {
    let sys = SpinSystem::default();
    assert!(rel(sys.g_hole, G_HOLE) < 1e-12);
    assert!(rel(sys.g_electron, G_ELECTRON) < 1e-12);
    assert!(rel(zeeman_splitting(G_HOLE, 8.0), TWO_PI * 30.2e9) < 1e-12);
    assert!(rel(zeeman_splitting(G_ELECTRON, 8.0), TWO_PI * 35e9) < 1e-12);
}

#[test]
fn dephasing_and_bias_defaults() {
    let n = NoiseModel::default();
    assert!(rel(n.sigma_quasistatic / TWO_PI / 1e6, SIGMA_MHZ) < 1e-12);
    assert!(rel(fid_envelope(2.3e-9, n.t2_star()), (-1.0f64).exp()) < 1e-12);
    let sys = SpinSystem::default();
    assert!(rel(sys.larmor_bias_slope, BIAS_SLOPE) < 1e-12);
    let dw = sys.larmor_frequency(1.65).unwrap() - sys.larmor_frequency(1.55).unwrap();
    assert!((dw * 2.3e-9 - PI).abs() < 1e-9);
    assert!(rel(echo_envelope(130e-9, 1.1e-6), ECHO_130NS) < 1e-12);
    assert!(rel(echo_envelope(1.1e-6, 1.1e-6), (-1.0f64).exp()) < 1e-12);
}

#[test]
fn fidelity_convention_inverts_published_value() {
    assert!((fidelity_from_visibility(0.7921).unwrap() - 0.945).abs() < 1e-12);
}

#[test]
fn ramsey_grid_and_half_period_minimum() {
    let setup = calibrated();
    let cfg = ExperimentConfig::new(ExperimentKind::Ramsey, &setup);
    let tau = &cfg.axes[0].values;
    assert!((tau[tau.len() - 1] - tau[0]) * 30.2e9 >= 9.0);

    let half = 0.5 / 30.2e9;
    let mut quiet = setup.clone();
    quiet.noise = NoiseModel::quiet();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Ramsey, &quiet);
    cfg.axes = vec![Axis::new("tau", "s", vec![0.0, half, 2.0 * half])];
    let r = run(&quiet, &cfg).unwrap();
    let e = &r.series[0].expected;
    assert!(e[1] < e[0] && e[1] < e[2], "{e:?}");
    assert!((e[0] - e[2]).abs() < 1e-9 * e[0]);
}

#[test]
fn doubling_detuning_halves_weak_rotation() {
    let sys = SpinSystem::default();
    let rules = Setup::default().rules().unwrap();
    let p = Pulse { peak_rabi: 0.3 * TWO_PI * 340e9, ..Pulse::default() };
    let a = effective_rotation(&p, &sys, &rules).unwrap().angle;
    let b = effective_rotation(&Pulse { detuning: 2.0 * p.detuning, ..p }, &sys, &rules).unwrap().angle;
    assert!(rel(b / a, 0.5) < 0.05, "ratio {}", b / a);
}

#[test]
fn two_half_pi_pulses_make_a_pi_pulse() {
    let setup = calibrated();
    let cal = setup.calibration.unwrap();
    let rules = setup.rules().unwrap();
    let half = effective_rotation(&pulse_at_power(&setup, cal.half_pi_power).unwrap(), &setup.system, &rules).unwrap();
    let u = half.unitary * half.unitary;
    let angle = 2.0 * (u.trace().norm() / 2.0).min(1.0).acos();
    assert!((angle - PI).abs() < 1e-2, "angle {angle}");
}

#[test]
fn pumped_superposition_emits_half() {
    let sys = SpinSystem::default();
    let w = PumpWindow::default();
    let (after, bright) = optical_pump(&DensityMatrix::basis(UP), &w, &sys).unwrap();
    assert!(after.population(DOWN) >= 0.99);
    let s = 1.0 / 2f64.sqrt();
    let plus = DensityMatrix::pure(&Vector4::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    let (_, half) = optical_pump(&plus, &w, &sys).unwrap();
    assert!(rel(half, 0.5 * bright) < 1e-6, "{half} vs {bright}");
}

#[test]
fn rabi_first_maximum_at_pi_power() {
    let setup = calibrated();
    let cal = setup.calibration.unwrap();
    let cfg = ExperimentConfig::new(ExperimentKind::Rabi, &setup);
    let step = cfg.axes[0].values[1] - cfg.axes[0].values[0];
    let r = run(&setup, &cfg).unwrap();
    let a = analyze(&r, &setup).unwrap();
    assert!((a.get("first_max_power").unwrap() - cal.pi_power).abs() <= step, "{:?}", a.derived);
    assert!(a.get("visibility").unwrap() >= 0.85);
    assert!(r.series[0].expected[0] < r.series[0].expected[1]);
}

#[test]
fn bloch_surface_matches_two_pulse_formula() {
    let setup = calibrated();
    let cfg = ExperimentConfig::new(ExperimentKind::BlochMap, &setup);
    let r = run(&setup, &cfg).unwrap();
    let a = analyze(&r, &setup).unwrap();
    let scale = a.get("surface_scale_expected").unwrap();
    assert!(a.get("surface_max_deviation_expected").unwrap() < 0.01 * scale, "{:?}", a.derived);
    assert!(a.get("surface_rms_deviation").unwrap() < 0.25 * scale, "{:?}", a.derived);
}

#[test]
fn t1_fit_recovers_configured_value() {
    let setup = calibrated();
    let cfg = ExperimentConfig::new(ExperimentKind::T1, &setup);
    let r = run(&setup, &cfg).unwrap();
    let a = analyze(&r, &setup).unwrap();
    assert!(rel(a.get("t1_s").unwrap(), setup.noise.t1) <= 0.05, "{:?}", a.derived);
    assert!(a.get("t1_over_t2star").unwrap() >= 100.0);
}

#[test]
fn doubling_linewidth_doubles_fitted_width() {
    let mut setup = calibrated();
    let mut widths = Vec::new();
    for fwhm in [3.0e9, 6.0e9] {
        setup.hole.optical_linewidth_fwhm = TWO_PI * fwhm;
        let mut cfg = ExperimentConfig::new(ExperimentKind::PumpScan, &setup);
        cfg.scan_direction = qdhole::experiments::ScanDirection::Up;
        cfg.charge_species = ChargeSpecies::Hole;
        let r = run(&setup, &cfg).unwrap();
        let a = analyze(&r, &setup.for_species(ChargeSpecies::Hole)).unwrap();
        widths.push(a.get("fwhm_hz_up").unwrap());
    }
    assert!(rel(widths[1] / widths[0], 2.0) <= 0.05, "{widths:?}");
}

#[test]
fn envelope_model_selection_oracle() {
    let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1e-6).collect();
    let e: Vec<f64> = t.iter().map(|s| (-s / 1.1e-6).exp()).collect();
    let g: Vec<f64> = t.iter().map(|s| (-(s / 1.1e-6).powi(2)).exp()).collect();
    assert!(fit_gaussian_decay(&t, &e, None).unwrap().rss > fit_exponential_decay(&t, &e, None).unwrap().rss);
    assert!(fit_exponential_decay(&t, &g, None).unwrap().rss > fit_gaussian_decay(&t, &g, None).unwrap().rss);
}
