//! Shot-level evaluation on the ground manifold.
//!
//! Every element of a sequence becomes an affine map on the lab Bloch vector.
//! A shot is the steady state of the repeated cycle followed up to the
//! readout window, whose emission functional gives the photon probability.

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix3, Matrix4, RowVector4, SymmetricEigen, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{PulseModel, Setup};
use crate::dynamics::{bloch_of_ground, effective_rotation, ground_from_bloch, superop, PumpMap};
use crate::noise::{self, modulation_phase};
use crate::pulses::{Event, PowerCalibration, PumpWindow, Sequence};
use crate::{Result, C64, TWO_PI};

/// `r ↦ A r + b` on the ground Bloch vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
}

impl Affine {
    pub fn identity() -> Affine {
        Affine { a: Matrix3::identity(), b: Vector3::zeros() }
    }

    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.a * r + self.b
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &Affine) -> Affine {
        Affine { a: next.a * self.a, b: next.a * self.b + next.b }
    }

    /// From a trace-preserving superoperator on column-stacked 2×2 states.
    pub fn from_superop(s: &Matrix4<C64>) -> Affine {
        let image = |r: [f64; 3]| Vector3::from(bloch_of_ground(&superop::apply(s, &ground_from_bloch(r))));
        let b = image([0.0; 3]);
        let mut a = Matrix3::zeros();
        for j in 0..3 {
            let mut r = [0.0; 3];
            r[j] = 1.0;
            a.set_column(j, &(image(r) - b));
        }
        Affine { a, b }
    }

    /// Rotation by `angle` about the unit `axis`, followed by uniform contraction `contrast`.
    pub fn rotation(axis: [f64; 3], angle: f64, contrast: f64) -> Affine {
        let n = Vector3::from(axis);
        let k = n.cross_matrix();
        let r = Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos());
        Affine { a: r * contrast, b: Vector3::zeros() }
    }

    /// Free evolution: precession by `phase` about x, coherence damped by
    /// `coherence`, population difference by `population`.
    pub fn precession(phase: f64, coherence: f64, population: f64) -> Affine {
        let (s, c) = phase.sin_cos();
        #[rustfmt::skip]
        let a = Matrix3::new(
            population, 0.0, 0.0,
            0.0, coherence * c, coherence * s,
            0.0, -coherence * s, coherence * c,
        );
        Affine { a, b: Vector3::zeros() }
    }

    /// Fixed point `r = A r + b`, if unique.
    pub fn fixed_point(&self) -> Option<Vector3<f64>> {
        (Matrix3::identity() - self.a).try_inverse().map(|m| m * self.b)
    }

    fn lerp(&self, other: &Affine, w: f64) -> Affine {
        Affine { a: self.a * (1.0 - w) + other.a * w, b: self.b * (1.0 - w) + other.b * w }
    }
}

/// `r ↦ c + v·r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functional {
    pub c: f64,
    pub v: Vector3<f64>,
}

impl Functional {
    pub fn eval(&self, r: &Vector3<f64>) -> f64 {
        self.c + self.v.dot(r)
    }

    fn from_row(e: &RowVector4<f64>) -> Functional {
        let at = |r: [f64; 3]| {
            let v = superop::vec(&ground_from_bloch(r));
            (0..4).map(|k| e[k] * v[k].re).sum::<f64>()
        };
        let c = at([0.0; 3]);
        let mut v = Vector3::zeros();
        for j in 0..3 {
            let mut r = [0.0; 3];
            r[j] = 1.0;
            v[j] = at(r) - c;
        }
        Functional { c, v }
    }

    fn lerp(&self, other: &Functional, w: f64) -> Functional {
        Functional { c: self.c * (1.0 - w) + other.c * w, v: self.v * (1.0 - w) + other.v * w }
    }
}

/// A pump window as a ground map plus its emission functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpAction {
    pub map: Affine,
    pub emission: Functional,
}

impl PumpAction {
    pub fn new(window: &PumpWindow, setup: &Setup) -> Result<PumpAction> {
        let (s, e) = PumpMap::new(window, &setup.system, &[])?.ground_response();
        Ok(PumpAction { map: Affine::from_superop(&s), emission: Functional::from_row(&e) })
    }
}

/// Pump actions on a uniform detuning grid, linearly interpolated.
#[derive(Debug, Clone)]
pub struct PumpTable {
    lo: f64,
    step: f64,
    nodes: Vec<PumpAction>,
}

impl PumpTable {
    pub fn new(window: &PumpWindow, setup: &Setup, lo: f64, hi: f64, step: f64) -> Result<PumpTable> {
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let nodes = (0..n)
            .into_par_iter()
            .map(|k| PumpAction::new(&PumpWindow { detuning: lo + k as f64 * step, ..*window }, setup))
            .collect::<Result<Vec<_>>>()?;
        Ok(PumpTable { lo, step, nodes })
    }

    pub fn at(&self, detuning: f64) -> PumpAction {
        let u = ((detuning - self.lo) / self.step).clamp(0.0, (self.nodes.len() - 1) as f64);
        let k = (u.floor() as usize).min(self.nodes.len().saturating_sub(2));
        let w = u - k as f64;
        match self.nodes.get(k + 1) {
            Some(next) => {
                let a = &self.nodes[k];
                PumpAction { map: a.map.lerp(&next.map, w), emission: a.emission.lerp(&next.emission, w) }
            }
            None => self.nodes[k],
        }
    }
}

/// Tabulated line profile of a spectral program.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl SpectralProfile {
    pub fn at(&self, x: f64) -> f64 {
        let last = self.values.len() - 1;
        let u = ((x - self.lo) / self.step).clamp(0.0, last as f64);
        let k = (u.floor() as usize).min(last.saturating_sub(1));
        let w = u - k as f64;
        match self.values.get(k + 1) {
            Some(next) => self.values[k] * (1.0 - w) + next * w,
            None => self.values[k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Pump { detuning: f64, readout: bool },
    Pulse(u64),
    Free { t0: f64, dt: f64 },
}

/// A sequence reduced to the steps the engine evaluates.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    steps: Vec<Step>,
    /// Pump windows see spectral diffusion and the optical Overhauser shift.
    spectral: bool,
}

impl Program {
    pub fn compile(seq: &Sequence, spectral: bool) -> Program {
        let mut steps = Vec::new();
        let mut cursor = 0.0;
        let free = |steps: &mut Vec<Step>, cursor: &mut f64, until: f64| {
            if until > *cursor {
                steps.push(Step::Free { t0: *cursor, dt: until - *cursor });
                *cursor = until;
            }
        };
        for ev in &seq.events {
            match ev {
                Event::Pump(w) => {
                    free(&mut steps, &mut cursor, w.start.secs());
                    steps.push(Step::Pump { detuning: w.detuning, readout: w.readout });
                    cursor = cursor.max(w.end().secs());
                }
                Event::Pulse(p) => {
                    free(&mut steps, &mut cursor, p.center.secs());
                    steps.push(Step::Pulse(p.peak_rabi.to_bits()));
                }
            }
        }
        free(&mut steps, &mut cursor, seq.limit().secs());
        Program { steps, spectral }
    }

    pub fn pulse_keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.steps.iter().filter_map(|s| match s {
            Step::Pulse(k) => Some(*k),
            _ => None,
        })
    }
}

/// Per-shot-batch realization of the noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Draw {
    /// Larmor offset (quasi-static draw plus Overhauser shift), rad/s.
    pub larmor: f64,
    /// Optical offset of the pumped transition, rad/s.
    pub optical: f64,
    /// Bias-modulation phase at t = 0.
    pub modulation: f64,
    /// Initial value of the OU process, if present.
    pub ou: f64,
}

pub struct Engine<'a> {
    setup: &'a Setup,
    omega_l: f64,
    pump: PumpAction,
    table: Option<PumpTable>,
    pulses: HashMap<u64, Affine>,
}

impl<'a> Engine<'a> {
    pub fn new(setup: &'a Setup) -> Result<Engine<'a>> {
        let pump = PumpAction::new(&setup.builder.pump, setup)?;
        Ok(Engine {
            setup,
            omega_l: setup.system.ground_splitting(),
            pump,
            table: None,
            pulses: HashMap::new(),
        })
    }

    pub fn omega_l(&self) -> f64 {
        self.omega_l
    }

    /// Resonant readout emission from |⇑⟩.
    pub fn bright_emission(&self) -> f64 {
        self.pump.emission.eval(&Vector3::new(-1.0, 0.0, 0.0))
    }

    /// Resonant readout emission halfway between |⇓⟩ and |⇑⟩.
    pub fn midline_emission(&self) -> f64 {
        self.pump.emission.c
    }

    /// Tabulates pump actions over `[lo, hi]` (pump detuning, rad/s).
    pub fn with_pump_table(mut self, lo: f64, hi: f64) -> Result<Engine<'a>> {
        let step = 0.02 * self.setup.builder.pump.pump_rabi.max(self.setup.system.gamma_sp);
        self.table = Some(PumpTable::new(&self.setup.builder.pump, self.setup, lo, hi, step)?);
        Ok(self)
    }

    /// Prepares the maps of every pulse the programs use.
    pub fn prepare_pulses<'p>(&mut self, programs: impl IntoIterator<Item = &'p Program>, cal: &PowerCalibration) -> Result<()> {
        let mut keys: Vec<u64> = programs.into_iter().flat_map(|p| p.pulse_keys()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.retain(|k| !self.pulses.contains_key(k));
        let setup = self.setup;
        let maps = keys
            .par_iter()
            .map(|&k| pulse_map(setup, f64::from_bits(k), cal).map(|m| (k, m)))
            .collect::<Result<Vec<_>>>()?;
        self.pulses.extend(maps);
        Ok(())
    }

    fn pump_action(&self, prog: &Program, detuning: f64, draw: &Draw) -> PumpAction {
        match (&self.table, prog.spectral) {
            (Some(t), true) => t.at(detuning - draw.optical),
            _ => self.pump,
        }
    }

    fn free_map(&self, t0: f64, dt: f64, draw: &Draw, ou: &mut Option<(f64, &mut ChaCha8Rng)>) -> Affine {
        let n = &self.setup.noise;
        let mut phase = (self.omega_l + draw.larmor) * dt;
        if n.bias_modulation.is_some() {
            phase += modulation_phase(&self.setup.system, n, t0, t0 + dt, draw.modulation);
        }
        if let (Some(p), Some((x, rng))) = (n.ou, ou.as_mut()) {
            let sub = ((dt / (0.05 * p.correlation_time)).ceil() as usize).clamp(1, 2000);
            let h = dt / sub as f64;
            for _ in 0..sub {
                let next = p.step(*x, h, *rng);
                phase += 0.5 * (*x + next) * h;
                *x = next;
            }
        }
        let coherence = (-n.gamma_phi * dt - 0.5 * dt / n.t1).exp();
        Affine::precession(phase, coherence, (-dt / n.t1).exp())
    }

    /// Readout photon probability per shot for one noise realization.
    pub fn emission(&self, prog: &Program, draw: &Draw, rng: Option<&mut ChaCha8Rng>, buf: &mut Vec<Affine>) -> f64 {
        buf.clear();
        let mut ou = match (self.setup.noise.ou, rng) {
            (Some(_), Some(r)) => Some((draw.ou, r)),
            _ => None,
        };
        let mut readout: Option<(usize, Functional)> = None;
        let mut cycle = Affine::identity();
        for step in &prog.steps {
            let m = match *step {
                Step::Pump { detuning, readout: counted } => {
                    let act = self.pump_action(prog, detuning, draw);
                    if counted && readout.is_none() {
                        readout = Some((buf.len(), act.emission));
                    }
                    act.map
                }
                Step::Pulse(k) => self.pulses[&k],
                Step::Free { t0, dt } => self.free_map(t0, dt, draw, &mut ou),
            };
            cycle = cycle.then(&m);
            buf.push(m);
        }
        let Some((at, functional)) = readout else { return 0.0 };
        let mut r = cycle.fixed_point().unwrap_or_else(Vector3::zeros);
        for m in &buf[..at] {
            r = m.apply(&r);
        }
        functional.eval(&r).clamp(0.0, 1.0)
    }

    /// Noise-averaged photon probability by Gauss–Hermite quadrature over the
    /// quasi-static Larmor offset, or over the optical offset for spectral programs.
    pub fn expected(&self, prog: &Program, larmor_shift: f64, optical_shift: f64) -> f64 {
        let n = &self.setup.noise;
        let mut buf = Vec::with_capacity(prog.steps.len());
        let (sigma, spectral) = if prog.spectral {
            (n.optical_linewidth_fwhm / noise::GAUSSIAN_FWHM_PER_SIGMA, true)
        } else {
            (n.sigma_quasistatic, false)
        };
        let base = Draw { larmor: larmor_shift, optical: optical_shift, ..Default::default() };
        if sigma == 0.0 {
            return self.emission(prog, &base, None, &mut buf);
        }
        if spectral {
            // The homogeneous line is far narrower than the spectral wander, so a
            // dense uniform grid replaces the Hermite nodes.
            let h = 0.1 * self.setup.builder.pump.pump_rabi.max(self.setup.system.gamma_sp) / sigma;
            let n = ((12.0 / h).ceil() as usize).max(2);
            let h = 12.0 / n as f64;
            let (mut acc, mut norm) = (0.0, 0.0);
            for k in 0..=n {
                let z = -6.0 + k as f64 * h;
                let w = (-0.5 * z * z).exp();
                let d = Draw { optical: base.optical + sigma * z, ..base };
                acc += w * self.emission(prog, &d, None, &mut buf);
                norm += w;
            }
            return acc / norm;
        }
        gauss_hermite()
            .iter()
            .map(|&(z, w)| {
                let d = Draw { larmor: base.larmor + sigma * z, ..base };
                w * self.emission(prog, &d, None, &mut buf)
            })
            .sum()
    }

    /// Noise-averaged emission of a spectral program against the offset
    /// `x = detuning - optical shift`, tabulated over `[lo, hi]`.
    pub fn spectral_profile(&self, prog: &Program, detuning: f64, lo: f64, hi: f64) -> SpectralProfile {
        let n = &self.setup.noise;
        let step = 0.1 * self.setup.builder.pump.pump_rabi.max(self.setup.system.gamma_sp);
        let sigma = n.optical_linewidth_fwhm / noise::GAUSSIAN_FWHM_PER_SIGMA;
        let reach = (6.0 * sigma / step).ceil() as isize;
        let lo_ext = lo - reach as f64 * step;
        let len = ((hi - lo) / step).ceil() as usize + 1;
        let mut buf = Vec::with_capacity(prog.steps.len());
        let raw: Vec<f64> = (0..len + 2 * reach as usize)
            .map(|k| {
                let x = lo_ext + k as f64 * step;
                self.emission(prog, &Draw { optical: detuning - x, ..Default::default() }, None, &mut buf)
            })
            .collect();
        let kernel: Vec<f64> = (-reach..=reach)
            .map(|j| if sigma > 0.0 { (-0.5 * (j as f64 * step / sigma).powi(2)).exp() } else { f64::from(u8::from(j == 0)) })
            .collect();
        let norm: f64 = kernel.iter().sum();
        let values = (0..len)
            .map(|k| kernel.iter().enumerate().map(|(j, w)| w * raw[k + j]).sum::<f64>() / norm)
            .collect();
        SpectralProfile { lo, step, values }
    }

    /// One noise realization for a shot batch.
    pub fn draw(&self, prog: &Program, larmor_shift: f64, optical_shift: f64, rng: &mut ChaCha8Rng) -> Draw {
        let n = &self.setup.noise;
        let mut d = Draw {
            larmor: larmor_shift + noise::sample_quasistatic(n, rng),
            optical: optical_shift,
            ..Default::default()
        };
        if prog.spectral {
            d.optical += noise::optical_detuning_sample(n, rng);
        }
        if n.bias_modulation.is_some() {
            d.modulation = rng.random::<f64>() * TWO_PI;
        }
        if let Some(p) = n.ou {
            let z: f64 = StandardNormal.sample(rng);
            d.ou = p.sigma * z;
        }
        d
    }
}

/// Map of one pulse of peak Rabi frequency `rabi` under the setup's pulse model.
pub fn pulse_map(setup: &Setup, rabi: f64, cal: &PowerCalibration) -> Result<Affine> {
    match setup.pulse_model {
        PulseModel::Ideal { contrast } => {
            let power = (rabi / setup.builder.rabi_unit).powi(2);
            let theta = cal.angle_for(power)?;
            let s = contrast.powf(theta.abs() / std::f64::consts::FRAC_PI_2);
            Ok(Affine::rotation([0.0, 0.0, -1.0], theta, s))
        }
        PulseModel::Effective => {
            let pulse = crate::pulses::Pulse { peak_rabi: rabi, ..setup.builder.pulse };
            let rot = effective_rotation(&pulse, &setup.system, &setup.rules()?)?;
            Ok(Affine::from_superop(&fold_scatter(&rot.superop)))
        }
    }
}

/// Returns population lost to the trion during a pulse to the ground states,
/// unpolarized.
fn fold_scatter(s: &Matrix4<C64>) -> Matrix4<C64> {
    let tr = Vector4::new(C64::new(1.0, 0.0), C64::default(), C64::default(), C64::new(1.0, 0.0)).transpose();
    let lost = tr - tr * s;
    let half = superop::vec(&(Matrix2::identity() * C64::new(0.5, 0.0)));
    s + half * lost
}

const QUADRATURE_NODES: usize = 48;

/// Nodes and weights for expectations over a standard normal variable.
fn gauss_hermite() -> &'static [(f64, f64)] {
    static NODES: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    NODES.get_or_init(|| {
        let n = QUADRATURE_NODES;
        let mut j = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k, k - 1)] = b;
            j[(k - 1, k)] = b;
        }
        let e = SymmetricEigen::new(j);
        let mut out: Vec<(f64, f64)> =
            (0..n).map(|k| (e.eigenvalues[k], e.eigenvectors[(0, k)].powi(2))).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    })
}
