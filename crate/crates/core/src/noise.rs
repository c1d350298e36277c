//! Dephasing, spectral diffusion, bias modulation and nuclear feedback.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::levels::SpinSystem;
use crate::{Error, Result, TWO_PI};

/// FWHM of a Gaussian in units of its standard deviation.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Sinusoidal modulation of the gate bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasModulation {
    /// Volts.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
}

/// Ornstein–Uhlenbeck wandering of ω_L, an alternative to Markovian dephasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuProcess {
    /// Stationary standard deviation, rad/s.
    pub sigma: f64,
    /// Correlation time, s.
    pub correlation_time: f64,
}

impl OuProcess {
    /// Exact one-step update over `dt`.
    pub fn step<R: Rng + ?Sized>(&self, x: f64, dt: f64, rng: &mut R) -> f64 {
        let a = (-dt / self.correlation_time).exp();
        let n: f64 = StandardNormal.sample(rng);
        x * a + self.sigma * (1.0 - a * a).max(0.0).sqrt() * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the shot-to-shot Larmor offset, rad/s.
    pub sigma_quasistatic: f64,
    /// Markovian dephasing rate of the ground coherence, 1/s.
    pub gamma_phi: f64,
    /// Gaussian FWHM of the optical transition's spectral diffusion, rad/s.
    pub optical_linewidth_fwhm: f64,
    pub bias_modulation: Option<BiasModulation>,
    /// Ground-state population relaxation time, s.
    pub t1: f64,
    pub ou: Option<OuProcess>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        let t2 = 1.1e-6;
        NoiseModel {
            sigma_quasistatic: std::f64::consts::SQRT_2 / 2.3e-9,
            gamma_phi: 1.0 / t2,
            optical_linewidth_fwhm: TWO_PI * 6.7e9,
            bias_modulation: None,
            t1: 100.0 * t2,
            ou: None,
        }
    }
}

impl NoiseModel {
    /// No dephasing, no spectral diffusion, effectively infinite T1.
    pub fn quiet() -> NoiseModel {
        NoiseModel {
            sigma_quasistatic: 0.0,
            gamma_phi: 0.0,
            optical_linewidth_fwhm: 0.0,
            bias_modulation: None,
            t1: f64::INFINITY,
            ou: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("sigma_quasistatic", self.sigma_quasistatic),
            ("gamma_phi", self.gamma_phi),
            ("optical_linewidth_fwhm", self.optical_linewidth_fwhm),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.t1 > 0.0) {
            return Err(Error::Config(format!("t1 must be > 0, got {}", self.t1)));
        }
        if let Some(m) = self.bias_modulation {
            if !(m.amplitude >= 0.0) || !(m.frequency >= 0.0) {
                return Err(Error::Config("bias modulation amplitude and frequency must be >= 0".into()));
            }
        }
        if let Some(ou) = self.ou {
            if !(ou.sigma >= 0.0) || !(ou.correlation_time > 0.0) {
                return Err(Error::Config("OU sigma must be >= 0 and correlation time > 0".into()));
            }
        }
        Ok(())
    }

    /// T₂* implied by the quasi-static width, `√2/σ`.
    pub fn t2_star(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.sigma_quasistatic
    }
}

/// One shot-batch Larmor offset, `δω ~ N(0, σ²)`.
pub fn sample_quasistatic<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> f64 {
    gaussian(model.sigma_quasistatic, rng)
}

/// One shot-batch offset of the optical transition, Gaussian with the model's FWHM.
pub fn optical_detuning_sample<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> f64 {
    gaussian(model.optical_linewidth_fwhm / GAUSSIAN_FWHM_PER_SIGMA, rng)
}

fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite non-negative sigma").sample(rng)
}

/// `exp(−(t/T₂*)²)`.
pub fn fid_envelope(t: f64, t2star: f64) -> f64 {
    (-(t / t2star).powi(2)).exp()
}

/// `exp(−2T/T₂)`.
pub fn echo_envelope(two_t: f64, t2: f64) -> f64 {
    (-two_t / t2).exp()
}

/// Bias-modulation contribution to ω_L at time `t` (modulation phase `phase`).
pub fn modulation_shift(sys: &SpinSystem, model: &NoiseModel, t: f64, phase: f64) -> f64 {
    match model.bias_modulation {
        Some(m) => sys.larmor_bias_slope * m.amplitude * (TWO_PI * m.frequency * t + phase).cos(),
        None => 0.0,
    }
}

/// Phase picked up from the bias modulation between `t0` and `t1`.
pub fn modulation_phase(sys: &SpinSystem, model: &NoiseModel, t0: f64, t1: f64, phase: f64) -> f64 {
    match model.bias_modulation {
        Some(m) if m.frequency > 0.0 => {
            let w = TWO_PI * m.frequency;
            sys.larmor_bias_slope * m.amplitude * ((w * t1 + phase).sin() - (w * t0 + phase).sin()) / w
        }
        Some(m) => sys.larmor_bias_slope * m.amplitude * phase.cos() * (t1 - t0),
        None => 0.0,
    }
}

/// Total Larmor frequency seen by one shot at time `t`.
pub fn effective_larmor(
    sys: &SpinSystem,
    model: &NoiseModel,
    over: &OverhauserState,
    bias: f64,
    t: f64,
    shot_draw: f64,
) -> Result<f64> {
    Ok(sys.larmor_frequency(bias)? + shot_draw + over.shift + modulation_shift(sys, model, t, 0.0))
}

/// Phenomenological nuclear-polarization state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverhauserState {
    /// Current shift, rad/s.
    #[serde(default)]
    pub shift: f64,
    /// Feedback strength g_fb (dimensionless).
    pub gain: f64,
    /// Suppression κ ≥ 1.
    pub suppression: f64,
    /// 1/s.
    pub relaxation_rate: f64,
    /// Saturation |shift| ≤ bound, rad/s.
    pub bound: f64,
}

impl OverhauserState {
    pub fn validate(&self) -> Result<()> {
        if !(self.suppression >= 1.0) {
            return Err(Error::Config(format!("suppression must be >= 1, got {}", self.suppression)));
        }
        if !(self.relaxation_rate >= 0.0) || !(self.bound >= 0.0) || !(self.gain >= 0.0) {
            return Err(Error::Config("feedback gain, relaxation rate and bound must be >= 0".into()));
        }
        Ok(())
    }

    pub fn reset(&self) -> OverhauserState {
        OverhauserState { shift: 0.0, ..*self }
    }
}

/// Signed drag: pump activity above `target` pushes the shift in the direction `pull`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drag {
    pub target: f64,
    pub pull: f64,
}

impl Drag {
    pub fn eta(&self, pump_signal: f64) -> f64 {
        (pump_signal - self.target).max(0.0) * self.pull
    }
}

/// Advances the shift over `dwell`. The shift relaxes at `relaxation_rate`
/// toward `(g/κ)·bound·η`, so small steps reduce to
/// `shift + (g/κ)·r·bound·η·dwell − r·shift·dwell`; the result is clamped to ±bound.
pub fn update_overhauser(state: &OverhauserState, pump_signal: f64, drag: Drag, dwell: f64) -> Result<OverhauserState> {
    if !(dwell > 0.0) {
        return Err(Error::Domain(format!("dwell must be > 0, got {dwell}")));
    }
    let eta = drag.eta(pump_signal);
    let target = state.gain / state.suppression * state.bound * eta;
    let decay = (-state.relaxation_rate * dwell).exp();
    let shift = target + (state.shift - target) * decay;
    Ok(OverhauserState { shift: shift.clamp(-state.bound, state.bound), ..*state })
}
