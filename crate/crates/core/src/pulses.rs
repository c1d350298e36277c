//! Optical events and the timed sequences that make up one experimental shot.
//!
//! Times are kept in picoseconds ([`Time`]) so a sequence survives the JSON
//! manifest bit-for-bit.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::levels::{Polarization, DOWN, TRION_DOWN, TRION_UP, UP};
use crate::{Error, Result, TWO_PI};

/// A point or span in time, stored in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(f64);

impl Time {
    pub const ZERO: Time = Time(0.0);

    pub fn from_ps(ps: f64) -> Time {
        Time(ps)
    }

    pub fn from_ns(ns: f64) -> Time {
        Time(ns * 1e3)
    }

    pub fn from_secs(s: f64) -> Time {
        Time(s * 1e12)
    }

    pub fn ps(self) -> f64 {
        self.0
    }

    pub fn secs(self) -> f64 {
        self.0 * 1e-12
    }

    pub fn total_cmp(&self, other: &Time) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, rhs: Time) -> Time {
        Time(self.0 + rhs.0)
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, rhs: Time) -> Time {
        Time(self.0 - rhs.0)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ps", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Gaussian,
    #[default]
    Sech,
}

/// Sech scale time t0 relative to the intensity FWHM.
const SECH_FWHM_OVER_T0: f64 = 1.762_747_174_039_086;
/// Integration half-window in units of the envelope scale.
const GAUSSIAN_WINDOW_SIGMAS: f64 = 9.0;
const SECH_WINDOW_T0S: f64 = 20.0;

impl PulseShape {
    /// Field envelope normalized to 1 at the center; `fwhm` refers to the intensity profile.
    pub fn envelope(self, t: f64, fwhm: f64) -> f64 {
        match self {
            PulseShape::Gaussian => {
                let s = field_sigma(fwhm);
                (-0.5 * (t / s).powi(2)).exp()
            }
            PulseShape::Sech => 1.0 / (t / sech_t0(fwhm)).cosh(),
        }
    }

    /// Half-width of the interval outside which the envelope is treated as zero.
    pub fn half_window(self, fwhm: f64) -> f64 {
        match self {
            PulseShape::Gaussian => GAUSSIAN_WINDOW_SIGMAS * field_sigma(fwhm),
            PulseShape::Sech => SECH_WINDOW_T0S * sech_t0(fwhm),
        }
    }
}

fn field_sigma(fwhm: f64) -> f64 {
    // Intensity σ is FWHM/(2√(2 ln 2)); the field is √2 wider.
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) * std::f64::consts::SQRT_2
}

fn sech_t0(fwhm: f64) -> f64 {
    fwhm / SECH_FWHM_OVER_T0
}

/// A detuned picosecond rotation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub center: Time,
    pub fwhm: Time,
    /// Δ, rad/s: mean trion frequency minus carrier.
    pub detuning: f64,
    /// Ω₀, rad/s.
    pub peak_rabi: f64,
    pub polarization: Polarization,
    pub shape: PulseShape,
}

impl Default for Pulse {
    fn default() -> Self {
        Pulse {
            center: Time::ZERO,
            fwhm: Time::from_ps(3.67),
            detuning: TWO_PI * 340e9,
            peak_rabi: 0.0,
            polarization: Polarization::SigmaPlus,
            shape: PulseShape::Sech,
        }
    }
}

impl Pulse {
    pub fn rabi_at(&self, t: f64) -> f64 {
        let dt = t - self.center.secs();
        if dt.abs() > self.half_window() {
            return 0.0;
        }
        self.peak_rabi * self.shape.envelope(dt, self.fwhm.secs())
    }

    /// Half-width of the pulse's integration window, s.
    pub fn half_window(&self) -> f64 {
        self.shape.half_window(self.fwhm.secs())
    }

    pub fn start(&self) -> Time {
        self.center - Time::from_secs(self.half_window())
    }

    pub fn end(&self) -> Time {
        self.center + Time::from_secs(self.half_window())
    }

    pub fn at(self, center: Time) -> Pulse {
        Pulse { center, ..self }
    }

    pub fn with_power(self, power: f64, rabi_unit: f64) -> Result<Pulse> {
        if !(power >= 0.0) {
            return Err(Error::Domain(format!("relative power must be >= 0, got {power}")));
        }
        Ok(Pulse { peak_rabi: rabi_unit * power.sqrt(), ..self })
    }

    /// Time containing 99% of the pulse energy, s.
    pub fn duration_99(&self) -> f64 {
        let fwhm = self.fwhm.secs();
        match self.shape {
            // erf(x) = 0.99 at x = 1.821386; intensity σ_I = σ_E/√2.
            PulseShape::Gaussian => 2.0 * 1.821_386_367_718_449 * field_sigma(fwhm),
            // ∫sech² = tanh; tanh(x) = 0.99 at x = atanh(0.99).
            PulseShape::Sech => 2.0 * 0.99_f64.atanh() * sech_t0(fwhm),
        }
    }
}

/// θ = cal·p: rotation angle of the effective two-photon coupling at relative power `p`.
pub fn rotation_angle_from_power(p: f64, cal: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::Domain(format!("relative power must be >= 0, got {p}")));
    }
    Ok(cal * p)
}

/// The Λ leg a pump window drives resonantly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PumpLeg {
    #[default]
    UpTrionDown,
    DownTrionUp,
    DownTrionDown,
    UpTrionUp,
}

impl PumpLeg {
    pub fn ground(self) -> usize {
        match self {
            PumpLeg::UpTrionDown | PumpLeg::UpTrionUp => UP,
            PumpLeg::DownTrionUp | PumpLeg::DownTrionDown => DOWN,
        }
    }

    pub fn trion(self) -> usize {
        match self {
            PumpLeg::UpTrionDown | PumpLeg::DownTrionDown => TRION_DOWN,
            PumpLeg::DownTrionUp | PumpLeg::UpTrionUp => TRION_UP,
        }
    }

    /// Ground state the pump accumulates population in; emission into it is the readout photon.
    pub fn dark_ground(self) -> usize {
        1 - self.ground()
    }
}

/// Narrowband resonant pump, used both to initialize and to read out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpWindow {
    pub start: Time,
    pub duration: Time,
    /// Ω_p on the target leg, rad/s.
    pub pump_rabi: f64,
    pub target: PumpLeg,
    /// Pump frequency minus target-leg resonance, rad/s.
    #[serde(default)]
    pub detuning: f64,
    /// Whether photons from this window are counted.
    #[serde(default)]
    pub readout: bool,
}

impl Default for PumpWindow {
    fn default() -> Self {
        PumpWindow {
            start: Time::ZERO,
            duration: Time::from_ns(26.0),
            pump_rabi: 2.0e9,
            target: PumpLeg::UpTrionDown,
            detuning: 0.0,
            readout: false,
        }
    }
}

impl PumpWindow {
    pub fn end(&self) -> Time {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Pulse(Pulse),
    Pump(PumpWindow),
}

impl Event {
    /// Ordering key: pulse center or pump start.
    pub fn time(&self) -> Time {
        match self {
            Event::Pulse(p) => p.center,
            Event::Pump(w) => w.start,
        }
    }

    pub fn end(&self) -> Time {
        match self {
            Event::Pulse(p) => p.end(),
            Event::Pump(w) => w.end(),
        }
    }

    fn begin(&self) -> Time {
        match self {
            Event::Pulse(p) => p.start(),
            Event::Pump(w) => w.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sequence {
    pub period: Time,
    pub events: Vec<Event>,
    pub repetitions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Unordered { index: usize },
    Overlap { pulse: usize, pump: usize },
    OutOfBounds { index: usize, end: Time, limit: Time },
    Invalid { index: usize, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unordered { index } => write!(f, "event {index} starts before its predecessor"),
            Violation::Overlap { pulse, pump } => {
                write!(f, "rotation pulse {pulse} overlaps pump window {pump}")
            }
            Violation::OutOfBounds { index, end, limit } => {
                write!(f, "event {index} ends at {end}, beyond period x repetitions = {limit}")
            }
            Violation::Invalid { index, reason } => write!(f, "event {index}: {reason}"),
        }
    }
}

impl Sequence {
    pub fn limit(&self) -> Time {
        Time::from_ps(self.period.ps() * f64::from(self.repetitions))
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, ev) in self.events.iter().enumerate() {
            match ev {
                Event::Pulse(p) if !(p.fwhm.ps() > 0.0) => {
                    out.push(Violation::Invalid { index: i, reason: "pulse fwhm must be > 0".into() })
                }
                Event::Pump(w) if !(w.duration.ps() > 0.0) => {
                    out.push(Violation::Invalid { index: i, reason: "pump duration must be > 0".into() })
                }
                _ => {}
            }
            if i > 0 && ev.time() < self.events[i - 1].time() {
                out.push(Violation::Unordered { index: i });
            }
            if ev.begin() < Time::ZERO || ev.end() > self.limit() {
                out.push(Violation::OutOfBounds { index: i, end: ev.end(), limit: self.limit() });
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            let Event::Pulse(p) = a else { continue };
            for (j, b) in self.events.iter().enumerate() {
                let Event::Pump(w) = b else { continue };
                if p.start() < w.end() && w.start < p.end() {
                    out.push(Violation::Overlap { pulse: i, pump: j });
                }
            }
        }
        out
    }

    pub fn pulses(&self) -> impl Iterator<Item = &Pulse> {
        self.events.iter().filter_map(|e| match e {
            Event::Pulse(p) => Some(p),
            _ => None,
        })
    }

    pub fn to_manifest(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("sequence serializes")
    }

    pub fn from_manifest(v: &serde_json::Value) -> Result<Sequence> {
        serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("bad sequence manifest: {e}")))
    }
}

/// Angle-to-power lookup, piecewise linear through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    /// (θ, relative power), strictly increasing in both.
    knots: Vec<(f64, f64)>,
}

impl PowerCalibration {
    /// θ = cal·p.
    pub fn linear(cal: f64) -> PowerCalibration {
        PowerCalibration { knots: vec![(cal, 1.0)] }
    }

    pub fn from_knots(mut knots: Vec<(f64, f64)>) -> Result<PowerCalibration> {
        knots.retain(|&(t, _)| t > 0.0);
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.is_empty() || knots.windows(2).any(|w| !(w[1].1 > w[0].1) || w[1].0 == w[0].0) {
            return Err(Error::Calibration("calibration knots must be monotone".into()));
        }
        Ok(PowerCalibration { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Inverse of [`PowerCalibration::power_for`].
    pub fn angle_for(&self, power: f64) -> Result<f64> {
        if !(power >= 0.0) {
            return Err(Error::Domain(format!("relative power must be >= 0, got {power}")));
        }
        let mut prev = (0.0, 0.0);
        for &k in &self.knots {
            if power <= k.1 {
                return Ok(prev.0 + (power - prev.1) * (k.0 - prev.0) / (k.1 - prev.1));
            }
            prev = k;
        }
        let n = self.knots.len();
        let (a, b) = if n >= 2 { (self.knots[n - 2], self.knots[n - 1]) } else { ((0.0, 0.0), self.knots[0]) };
        Ok(b.0 + (power - b.1) * (b.0 - a.0) / (b.1 - a.1))
    }

    pub fn power_for(&self, theta: f64) -> Result<f64> {
        if !(theta >= 0.0) {
            return Err(Error::Domain(format!("rotation angle must be >= 0, got {theta}")));
        }
        let mut prev = (0.0, 0.0);
        for &k in &self.knots {
            if theta <= k.0 {
                return Ok(prev.1 + (theta - prev.0) * (k.1 - prev.1) / (k.0 - prev.0));
            }
            prev = k;
        }
        // Extrapolate with the last segment's slope.
        let n = self.knots.len();
        let (a, b) = if n >= 2 { (self.knots[n - 2], self.knots[n - 1]) } else { ((0.0, 0.0), self.knots[0]) };
        Ok(b.1 + (theta - b.0) * (b.1 - a.1) / (b.0 - a.0))
    }
}

/// Sequence builders sharing one pulse template, pump template and clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBuilder {
    pub pulse: Pulse,
    pub pump: PumpWindow,
    pub period: Time,
    /// Spacing between a pump edge and the nearest pulse window edge.
    pub guard: Time,
    /// Relative power → Ω₀ conversion, rad/s.
    pub rabi_unit: f64,
    pub calibration: PowerCalibration,
    /// Longest sequence, in periods.
    pub max_periods: u32,
}

impl Default for SequenceBuilder {
    fn default() -> Self {
        SequenceBuilder {
            pulse: Pulse::default(),
            pump: PumpWindow::default(),
            period: Time::from_ns(13.0),
            guard: Time::from_ps(50.0),
            rabi_unit: TWO_PI * 340e9,
            calibration: PowerCalibration::linear(1.0),
            max_periods: 1000,
        }
    }
}

impl SequenceBuilder {
    fn pulse_at(&self, center: Time, power: f64) -> Result<Pulse> {
        self.pulse.at(center).with_power(power, self.rabi_unit)
    }

    fn angle_pulse(&self, center: Time, theta: f64) -> Result<Pulse> {
        let p = self.calibration.power_for(theta)?;
        self.pulse_at(center, p)
    }

    fn first_center(&self) -> Time {
        self.pump.duration + self.guard + Time::from_secs(self.pulse.half_window())
    }

    /// Closes a sequence: readout window after `last_center`, repetitions to fit.
    fn finish(&self, mut events: Vec<Event>, last_center: Time) -> Result<Sequence> {
        events.insert(0, Event::Pump(PumpWindow { start: Time::ZERO, readout: false, ..self.pump }));
        let start = last_center + Time::from_secs(self.pulse.half_window()) + self.guard;
        let readout = PumpWindow { start, readout: true, ..self.pump };
        let total = readout.end().ps();
        events.push(Event::Pump(readout));
        let reps = (total / self.period.ps()).ceil().max(1.0);
        if reps > f64::from(self.max_periods) {
            return Err(Error::Sequence(format!(
                "sequence needs {reps} periods, more than the maximum {}",
                self.max_periods
            )));
        }
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let seq = Sequence { period: self.period, events, repetitions: reps as u32 };
        match seq.validate().first() {
            Some(v) => Err(Error::Sequence(v.to_string())),
            None => Ok(seq),
        }
    }

    /// init → θ → τ → θ → readout.
    pub fn make_ramsey(&self, tau: f64, theta: f64) -> Result<Sequence> {
        if !(tau >= 0.0) || tau > self.period.secs() {
            return Err(Error::Sequence(format!("Ramsey delay {tau:e} s outside [0, period]")));
        }
        let c1 = self.first_center();
        let c2 = c1 + Time::from_secs(tau);
        let events = vec![Event::Pulse(self.angle_pulse(c1, theta)?), Event::Pulse(self.angle_pulse(c2, theta)?)];
        self.finish(events, c2)
    }

    /// init → π/2 → T → π → T + fine → π/2 → readout.
    pub fn make_echo(&self, two_t: f64, fine_delay: f64) -> Result<Sequence> {
        let max = self.period.secs() * f64::from(self.max_periods);
        if !(two_t > 0.0) || two_t > max {
            return Err(Error::Sequence(format!("echo total delay {two_t:e} s outside (0, {max:e}]")));
        }
        let half = 0.5 * two_t;
        if !(fine_delay.abs() < half) {
            return Err(Error::Sequence(format!("fine delay {fine_delay:e} s not small relative to T = {half:e} s")));
        }
        let c1 = self.first_center();
        let c2 = c1 + Time::from_secs(half);
        let c3 = c2 + Time::from_secs(half + fine_delay);
        let quarter = std::f64::consts::FRAC_PI_2;
        let events = vec![
            Event::Pulse(self.angle_pulse(c1, quarter)?),
            Event::Pulse(self.angle_pulse(c2, std::f64::consts::PI)?),
            Event::Pulse(self.angle_pulse(c3, quarter)?),
        ];
        self.finish(events, c3)
    }

    /// init → one pulse at relative power `power` → readout.
    pub fn make_rabi(&self, power: f64) -> Result<Sequence> {
        let c = self.first_center();
        self.finish(vec![Event::Pulse(self.pulse_at(c, power)?)], c)
    }

    /// init → θ → τ → θ → readout. Zero-angle pulses are omitted.
    pub fn make_bloch_map(&self, theta: f64, tau: f64) -> Result<Sequence> {
        if theta == 0.0 {
            if !(tau >= 0.0) || tau > self.period.secs() {
                return Err(Error::Sequence(format!("delay {tau:e} s outside [0, period]")));
            }
            let c = self.first_center() + Time::from_secs(tau);
            return self.finish(Vec::new(), c);
        }
        self.make_ramsey(tau, theta)
    }

    /// Pump windows offset by `pump_detuning` around a single π rotation.
    pub fn make_pump_scan(&self, pump_detuning: f64) -> Result<Sequence> {
        if !pump_detuning.is_finite() {
            return Err(Error::Domain("pump detuning must be finite".into()));
        }
        let shifted = SequenceBuilder { pump: PumpWindow { detuning: pump_detuning, ..self.pump }, ..self.clone() };
        let c = shifted.first_center();
        let pi = shifted.angle_pulse(c, std::f64::consts::PI)?;
        shifted.finish(vec![Event::Pulse(pi)], c)
    }

    /// init → dark wait τ → readout.
    pub fn make_t1(&self, tau: f64) -> Result<Sequence> {
        let max = self.period.secs() * f64::from(self.max_periods);
        if !(tau >= 0.0) || tau > max {
            return Err(Error::Sequence(format!("wait {tau:e} s outside [0, {max:e}]")));
        }
        let c = self.first_center() + Time::from_secs(tau);
        self.finish(Vec::new(), c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn builder() -> SequenceBuilder {
        SequenceBuilder { calibration: PowerCalibration::linear(PI / 1.8), ..Default::default() }
    }

    #[test]
    fn angle_from_power_is_linear() {
        assert_eq!(rotation_angle_from_power(0.0, 2.0).unwrap(), 0.0);
        assert!((rotation_angle_from_power(PI / 2.0, 2.0).unwrap() - PI).abs() < 1e-15);
        let one = rotation_angle_from_power(0.7, 1.3).unwrap();
        assert!((rotation_angle_from_power(1.4, 1.3).unwrap() - 2.0 * one).abs() < 1e-15);
        assert!(matches!(rotation_angle_from_power(-1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn envelopes_have_requested_fwhm() {
        let fwhm = 3.67e-12;
        for shape in [PulseShape::Gaussian, PulseShape::Sech] {
            let half = shape.envelope(0.5 * fwhm, fwhm).powi(2);
            assert!((half - 0.5).abs() < 1e-9, "{shape:?}: {half}");
            assert_eq!(shape.envelope(0.0, fwhm), 1.0);
        }
    }

    #[test]
    fn sech_pulse_fits_in_twenty_ps() {
        let p = Pulse::default();
        assert!(p.duration_99() < 20e-12);
    }

    #[test]
    fn builders_are_clean() {
        let b = builder();
        for seq in [
            b.make_ramsey(0.0, FRAC_PI_2).unwrap(),
            b.make_ramsey(150e-12, FRAC_PI_2).unwrap(),
            b.make_echo(130e-9, 10e-12).unwrap(),
            b.make_echo(3e-6, -10e-12).unwrap(),
            b.make_rabi(1.0).unwrap(),
            b.make_bloch_map(0.0, 0.0).unwrap(),
            b.make_bloch_map(PI, 200e-12).unwrap(),
            b.make_pump_scan(1e10).unwrap(),
            b.make_t1(1e-6).unwrap(),
        ] {
            assert_eq!(seq.validate(), vec![], "{seq:?}");
        }
    }

    #[test]
    fn ramsey_layout() {
        let seq = builder().make_ramsey(100e-12, FRAC_PI_2).unwrap();
        assert_eq!(seq.events.len(), 4);
        let centers: Vec<f64> = seq.pulses().map(|p| p.center.ps()).collect();
        assert!((centers[1] - centers[0] - 100.0).abs() < 1e-9);
        assert!(matches!(seq.events[0], Event::Pump(PumpWindow { readout: false, .. })));
        assert!(matches!(seq.events[3], Event::Pump(PumpWindow { readout: true, .. })));
        assert_eq!(seq.repetitions, 5);
    }

    #[test]
    fn ramsey_rejects_long_delay() {
        assert!(matches!(builder().make_ramsey(14e-9, FRAC_PI_2), Err(Error::Sequence(_))));
        assert!(matches!(builder().make_ramsey(-1e-12, FRAC_PI_2), Err(Error::Sequence(_))));
    }

    #[test]
    fn zero_angle_ramsey_has_empty_pulses() {
        let seq = builder().make_ramsey(50e-12, 0.0).unwrap();
        assert!(seq.pulses().all(|p| p.peak_rabi == 0.0));
    }

    #[test]
    fn pulse_inside_pump_is_flagged() {
        let mut seq = builder().make_rabi(1.0).unwrap();
        if let Event::Pulse(p) = &mut seq.events[1] {
            p.center = Time::from_ns(10.0);
        }
        seq.events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        assert!(seq.validate().iter().any(|v| matches!(v, Violation::Overlap { .. })));
    }

    #[test]
    fn event_past_end_is_flagged() {
        let mut seq = builder().make_rabi(1.0).unwrap();
        seq.repetitions = 1;
        assert!(seq.validate().iter().any(|v| matches!(v, Violation::OutOfBounds { .. })));
    }

    #[test]
    fn unsorted_events_are_flagged() {
        let mut seq = builder().make_ramsey(100e-12, 1.0).unwrap();
        seq.events.swap(1, 2);
        assert!(seq.validate().iter().any(|v| matches!(v, Violation::Unordered { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let seq = builder().make_echo(130e-9, 7.3e-12).unwrap();
        let text = serde_json::to_string(&seq.to_manifest()).unwrap();
        let back = Sequence::from_manifest(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn calibration_interpolates() {
        let cal = PowerCalibration::from_knots(vec![(FRAC_PI_2, 0.8), (PI, 1.9)]).unwrap();
        assert_eq!(cal.power_for(0.0).unwrap(), 0.0);
        assert!((cal.power_for(FRAC_PI_2).unwrap() - 0.8).abs() < 1e-15);
        assert!((cal.power_for(PI).unwrap() - 1.9).abs() < 1e-15);
        assert!(cal.power_for(0.75 * PI).unwrap() > 0.8);
        assert!(PowerCalibration::from_knots(vec![(1.0, 2.0), (2.0, 1.0)]).is_err());
    }
}
