//! Fits and derived quantities for each experiment kind.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{hysteresis, ExperimentKind, Hysteresis, PulseModel, Series, Setup, SweepResult};
use crate::fitting::{self, EnvelopeChoice, EnvelopeSelection, FitResult};
use crate::{Error, Result, TWO_PI};

/// Longest π rotation compatible with the operations-per-coherence budget, s.
pub const OPERATION_BUDGET: f64 = 20e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub kind: ExperimentKind,
    /// Named fits, e.g. `"fringes"` or `"profile_up"`.
    pub fits: BTreeMap<String, FitResult>,
    /// Scalars derived from fits and data, SI units.
    pub derived: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hysteresis: Option<Hysteresis>,
    /// Fits that could not be attempted, with the reason.
    pub failures: Vec<String>,
}

impl Analysis {
    fn new(kind: ExperimentKind) -> Analysis {
        Analysis {
            kind,
            fits: BTreeMap::new(),
            derived: BTreeMap::new(),
            envelope: None,
            hysteresis: None,
            failures: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.derived.get(key).copied()
    }

    /// True when every fit converged unflagged and none failed outright.
    pub fn fits_ok(&self) -> bool {
        self.failures.is_empty() && self.fits.values().all(FitResult::ok)
    }

    /// Errors with the first problem unless [`Analysis::fits_ok`].
    pub fn require_fits(&self) -> Result<()> {
        if let Some(f) = self.failures.first() {
            return Err(Error::Fit(f.clone()));
        }
        match self.fits.iter().find(|(_, f)| !f.ok()) {
            Some((name, f)) => f.clone().require().map(|_| ()).map_err(|e| Error::Fit(format!("{name}: {e}"))),
            None => Ok(()),
        }
    }

    fn fit(&mut self, name: &str, f: Result<FitResult>) -> Option<FitResult> {
        match f {
            Ok(f) => {
                self.fits.insert(name.to_string(), f.clone());
                Some(f)
            }
            Err(e) => {
                self.failures.push(format!("{name}: {e}"));
                None
            }
        }
    }

    fn set(&mut self, key: &str, v: f64) {
        self.derived.insert(key.to_string(), v);
    }
}

/// Fits and derived numbers for a sweep.
pub fn analyze(result: &SweepResult, setup: &Setup) -> Result<Analysis> {
    let series = result.series.first().ok_or_else(|| Error::Domain("sweep has no series".into()))?;
    let mut a = Analysis::new(result.kind);
    let omega = result
        .manifest
        .get("larmor_frequency_hz")
        .and_then(serde_json::Value::as_f64)
        .map_or_else(|| setup.system.ground_splitting(), |f| TWO_PI * f);
    let dark = setup.readout.dark_rate;
    let x0 = || result.axes[0].values.as_slice();
    match result.kind {
        ExperimentKind::Rabi => rabi(&mut a, x0(), series, dark),
        ExperimentKind::Ramsey if result.axes.len() == 2 => {
            let (t, amp, w) = fringe_amplitudes(result, series, omega);
            envelope(&mut a, &t, &amp, &w, "t2star");
        }
        ExperimentKind::Ramsey | ExperimentKind::EchoFine => {
            fringes(&mut a, "fringes", x0(), series, dark);
        }
        ExperimentKind::EchoDecay => {
            let (t, amp, w) = fringe_amplitudes(result, series, omega);
            envelope(&mut a, &t, &amp, &w, "t2");
            operations(&mut a, setup);
        }
        ExperimentKind::BlochMap => bloch_surface(&mut a, result, series, setup, omega)?,
        ExperimentKind::PumpScan => {
            for s in &result.series {
                let tag = s.direction.as_str();
                if let Some(f) = a.fit(&format!("profile_{tag}"), fitting::fit_gaussian_profile(x0(), &s.mean_counts, Some(&weights(s)))) {
                    a.set(&format!("fwhm_hz_{tag}"), f.value("fwhm"));
                    a.set(&format!("center_hz_{tag}"), f.value("center"));
                }
            }
            hysteresis_entry(&mut a, result);
        }
        ExperimentKind::HysteresisRamsey => {
            for s in &result.series {
                fringes(&mut a, &format!("fringes_{}", s.direction.as_str()), x0(), s, dark);
            }
            hysteresis_entry(&mut a, result);
        }
        ExperimentKind::T1 => {
            if let Some(f) = a.fit("population", fitting::fit_exponential_offset(x0(), &series.mean_counts, Some(&weights(series)))) {
                a.set("t1_s", f.value("tau"));
                a.set("t1_over_t2star", f.value("tau") / setup.noise.t2_star());
            }
        }
    }
    Ok(a)
}

fn weights(s: &Series) -> Vec<f64> {
    let floor = s.std_err.iter().copied().filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    s.std_err.iter().map(|e| 1.0 / e.max(floor).powi(2)).collect()
}

fn rabi(a: &mut Analysis, power: &[f64], s: &Series, dark: f64) {
    let y = &s.expected;
    let Some(peak) = (1..y.len().saturating_sub(1)).find(|&i| y[i] >= y[i - 1] && y[i] > y[i + 1]) else {
        a.failures.push("rabi: no maximum inside the power range".into());
        return;
    };
    let floor = y[..peak].iter().copied().fold(f64::INFINITY, f64::min);
    a.set("first_max_power", power[peak]);
    a.set("visibility", (y[peak] - floor) / (y[peak] + floor - 2.0 * dark));
}

fn fringes(a: &mut Analysis, name: &str, x: &[f64], s: &Series, dark: f64) {
    let Some(f) = a.fit(name, fitting::fit_sinusoid(x, &s.mean_counts, Some(&weights(s)))) else { return };
    let amp = f.value("amplitude").abs();
    let base = f.value("offset") - dark;
    let tag = name.strip_prefix("fringes").unwrap_or_default();
    a.set(&format!("frequency_hz{tag}"), f.value("frequency"));
    let n = x.len().max(1) as f64;
    let rms = (f.rss / n).sqrt();
    a.set(&format!("residual_rms{tag}"), if amp > 0.0 { rms / amp } else { f64::INFINITY });
    if base > 0.0 {
        let v = amp / base;
        a.set(&format!("visibility{tag}"), v);
        if let Ok(fid) = fitting::fidelity_from_visibility(v.min(1.0)) {
            a.set(&format!("fidelity{tag}"), fid);
        }
    }
}

/// Fringe amplitude per row of a `(delay, fine_delay)` grid by projection on
/// `{1, cos ωt, sin ωt}`.
pub fn fringe_amplitudes(result: &SweepResult, s: &Series, omega: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = &result.axes[0].values;
    let fine = &result.axes[1].values;
    let m = fine.len();
    let mut t = Vec::with_capacity(rows.len());
    let mut amp = Vec::with_capacity(rows.len());
    let mut w = Vec::with_capacity(rows.len());
    for (r, &row) in rows.iter().enumerate() {
        let y = &s.mean_counts[r * m..(r + 1) * m];
        let err = &s.std_err[r * m..(r + 1) * m];
        let (a, sigma) = lockin(fine, y, err, omega);
        t.push(row);
        amp.push(a);
        w.push(1.0 / sigma.max(1e-300).powi(2));
    }
    (t, amp, w)
}

fn lockin(x: &[f64], y: &[f64], err: &[f64], omega: f64) -> (f64, f64) {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (xi, yi) in x.iter().zip(y) {
        let (s, c) = (omega * xi).sin_cos();
        let b = Vector3::new(1.0, c, s);
        normal += b * b.transpose();
        rhs += b * *yi;
    }
    let Some(inv) = normal.try_inverse() else { return (0.0, f64::INFINITY) };
    let p = inv * rhs;
    let amp = p[1].hypot(p[2]);
    let noise = (err.iter().map(|e| e * e).sum::<f64>() / err.len().max(1) as f64).sqrt();
    (amp, noise * (0.5 * (inv[(1, 1)] + inv[(2, 2)])).sqrt())
}

fn envelope(a: &mut Analysis, t: &[f64], amp: &[f64], w: &[f64], key: &str) {
    let gauss = a.fit("gaussian_envelope", fitting::fit_gaussian_decay(t, amp, Some(w)));
    let expo = a.fit("exponential_envelope", fitting::fit_exponential_decay(t, amp, Some(w)));
    let (Some(g), Some(e)) = (gauss, expo) else { return };
    match fitting::select_envelope_model(t, amp, Some(w)) {
        Ok(sel) => {
            let v = match (key, sel.choice) {
                ("t2star", _) => g.value("t2star"),
                (_, EnvelopeChoice::Gaussian) => g.value("t2star"),
                _ => e.value("t2"),
            };
            a.set(&format!("{key}_s"), v);
            a.set("envelope_rss_ratio", sel.rss_ratio);
            a.envelope = Some(sel);
        }
        Err(err) => a.failures.push(format!("envelope selection: {err}")),
    }
}

fn operations(a: &mut Analysis, setup: &Setup) {
    let pi = setup.builder.pulse.duration_99();
    a.set("pi_duration_s", pi);
    if let Some(t2) = a.get("t2_s") {
        a.set("operations_per_t2", t2 / pi);
        a.set("t2_over_budget", t2 / OPERATION_BUDGET);
    }
}

fn hysteresis_entry(a: &mut Analysis, result: &SweepResult) {
    if let Some(h) = hysteresis(result) {
        a.set("hysteresis_metric", h.metric);
        a.set("hysteresis_threshold", h.threshold);
        a.set("hysteresis_model_metric", h.model_metric);
        a.hysteresis = Some(h);
    }
}

/// Ground-state readout probability of θ – τ – θ with ideal rotations, each
/// contracting the Bloch vector by `s`, and transverse decay `coherence`.
pub fn bloch_surface_probability(theta: f64, phase: f64, s: f64, coherence: f64) -> f64 {
    let (sn, cs) = theta.sin_cos();
    let x = s * s * (cs * cs - sn * sn * phase.cos() * coherence);
    0.5 * (1.0 - x)
}

fn bloch_surface(a: &mut Analysis, result: &SweepResult, s: &Series, setup: &Setup, omega: f64) -> Result<()> {
    if result.axes.len() != 2 {
        return Err(Error::Domain("Bloch map needs (theta, tau) axes".into()));
    }
    let contrast = match setup.pulse_model {
        PulseModel::Ideal { contrast } => contrast,
        PulseModel::Effective => 1.0,
    };
    let sigma = setup.noise.sigma_quasistatic;
    let model: Vec<f64> = (0..result.n_points())
        .map(|i| {
            let p = result.point(i);
            let (theta, tau) = (p[0], p[1]);
            let s = contrast.powf(theta.abs() / std::f64::consts::FRAC_PI_2);
            let coherence = (-0.5 * (sigma * tau).powi(2) - setup.noise.gamma_phi * tau).exp();
            bloch_surface_probability(theta, omega * tau, s, coherence)
        })
        .collect();
    for (key, y) in [("", &s.mean_counts), ("_expected", &s.expected)] {
        let (offset, scale, max, rms) = affine_deviation(&model, y);
        a.set(&format!("surface_offset{key}"), offset);
        a.set(&format!("surface_scale{key}"), scale);
        a.set(&format!("surface_max_deviation{key}"), max);
        a.set(&format!("surface_rms_deviation{key}"), rms);
    }
    Ok(())
}

/// Least-squares `y ≈ offset + scale·model`; deviations in units of `scale`.
fn affine_deviation(model: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = model.len() as f64;
    let (mx, my) = (model.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = model.iter().map(|m| (m - mx).powi(2)).sum();
    let sxy: f64 = model.iter().zip(y).map(|(m, v)| (m - mx) * (v - my)).sum();
    let scale = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let offset = my - scale * mx;
    if scale == 0.0 {
        return (offset, 0.0, f64::INFINITY, f64::INFINITY);
    }
    let dev: Vec<f64> = model.iter().zip(y).map(|(m, v)| ((v - offset) / scale - m).abs()).collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    let rms = (dev.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    (offset, scale, max, rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn surface_corners() {
        assert!((bloch_surface_probability(0.0, 1.3, 1.0, 1.0) - 0.0).abs() < 1e-15);
        assert!((bloch_surface_probability(PI, 0.4, 1.0, 1.0) - 0.0).abs() < 1e-15);
        assert!((bloch_surface_probability(FRAC_PI_2, PI, 1.0, 1.0) - 0.0).abs() < 1e-15);
        assert!((bloch_surface_probability(FRAC_PI_2, 0.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((bloch_surface_probability(FRAC_PI_2, 0.0, 0.9, 1.0) - 0.905).abs() < 1e-12);
    }

    #[test]
    fn lockin_recovers_amplitude() {
        let omega = TWO_PI * 30.2e9;
        let x: Vec<f64> = (0..8).map(|k| k as f64 / 8.0 / 30.2e9).collect();
        let y: Vec<f64> = x.iter().map(|t| 0.3 + 0.12 * (omega * t + 0.7).cos()).collect();
        let (amp, sigma) = lockin(&x, &y, &[0.01; 8], omega);
        assert!((amp - 0.12).abs() < 1e-12);
        // uniform one-period grid: Var = 2σ²/N
        assert!((sigma - 0.01 * (2.0f64 / 8.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn affine_deviation_exact() {
        let m = [0.0, 0.25, 0.5, 1.0];
        let y: Vec<f64> = m.iter().map(|v| 0.01 + 0.04 * v).collect();
        let (o, s, max, rms) = affine_deviation(&m, &y);
        assert!((o - 0.01).abs() < 1e-15 && (s - 0.04).abs() < 1e-15);
        assert!(max < 1e-12 && rms < 1e-12);
    }
}
