//! Master-equation dynamics of the four-level system.
//!
//! [`evolve`] integrates the full Lindblad equation and is the reference for
//! everything else. [`effective_rotation`] reduces a detuned pulse to a map on
//! the ground manifold, [`free_precession`] is the analytic Larmor rotation
//! and [`optical_pump`] / [`PumpMap`] handle the resonant pump windows.

mod effective;
pub mod integrator;
mod pump;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};

use crate::levels::{
    hamiltonian_unchecked, DriveField, SelectionRules, SpinSystem, DOWN, TRION_DOWN, TRION_UP, UP,
};
use crate::pulses::Pulse;
use crate::{Error, Result, C64};

pub use effective::{effective_rotation, EffectiveRotation};
pub use integrator::{Method, StepControl};
pub use pump::{optical_pump, optical_pump_with, PumpMap};

/// Tolerances used when checking density-matrix invariants.
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub rho: Matrix4<C64>,
}

impl DensityMatrix {
    pub fn new(rho: Matrix4<C64>) -> Result<DensityMatrix> {
        let dm = DensityMatrix { rho };
        dm.check()?;
        Ok(dm)
    }

    /// Basis state `|i⟩⟨i|`.
    pub fn basis(i: usize) -> DensityMatrix {
        let mut rho = Matrix4::zeros();
        rho[(i, i)] = C64::new(1.0, 0.0);
        DensityMatrix { rho }
    }

    pub fn pure(psi: &Vector4<C64>) -> DensityMatrix {
        let psi = psi / C64::new(psi.norm(), 0.0);
        DensityMatrix { rho: psi * psi.adjoint() }
    }

    /// Ground-manifold state with lab-frame Bloch vector `r` (|r| ≤ 1).
    pub fn from_bloch(r: [f64; 3]) -> DensityMatrix {
        DensityMatrix::from_ground(&ground_from_bloch(r))
    }

    pub fn from_ground(g: &Matrix2<C64>) -> DensityMatrix {
        let mut rho = Matrix4::zeros();
        rho.fixed_view_mut::<2, 2>(0, 0).copy_from(g);
        DensityMatrix { rho }
    }

    pub fn ground(&self) -> Matrix2<C64> {
        self.rho.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn population(&self, i: usize) -> f64 {
        self.rho[(i, i)].re
    }

    pub fn trion_population(&self) -> f64 {
        self.population(TRION_DOWN) + self.population(TRION_UP)
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (self.rho - self.rho.adjoint()).norm()
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        SymmetricEigen::new(hermitian_part(&self.rho)).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// Lab-frame Bloch vector of the ground manifold (x along the field, z optical).
    pub fn ground_bloch(&self) -> [f64; 3] {
        bloch_of_ground(&self.ground())
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = hermitian_part(&(self.rho - other.rho));
        0.5 * SymmetricEigen::new(d).eigenvalues.iter().map(|e| e.abs()).sum::<f64>()
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn check(&self) -> Result<()> {
        let h = self.hermiticity_residual();
        if h > HERMITIAN_TOL {
            return Err(Error::Domain(format!("density matrix not Hermitian (residual {h:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Domain(format!("density matrix trace {tr} != 1")));
        }
        let m = self.min_eigenvalue();
        if m < -POSITIVITY_TOL {
            return Err(Error::Domain(format!("density matrix not positive (min eigenvalue {m:e})")));
        }
        Ok(())
    }
}

fn hermitian_part(m: &Matrix4<C64>) -> Matrix4<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// 2×2 ground density matrix with lab Bloch vector `r`.
pub fn ground_from_bloch(r: [f64; 3]) -> Matrix2<C64> {
    let [x, y, z] = r;
    Matrix2::new(
        C64::new(0.5 * (1.0 + x), 0.0),
        C64::new(0.5 * z, 0.5 * y),
        C64::new(0.5 * z, -0.5 * y),
        C64::new(0.5 * (1.0 - x), 0.0),
    )
}

/// Lab Bloch vector of a 2×2 ground block: x = ρ⇓⇓ − ρ⇑⇑, z = 2 Re ρ⇓⇑, y = 2 Im ρ⇓⇑.
pub fn bloch_of_ground(g: &Matrix2<C64>) -> [f64; 3] {
    let c = g[(0, 1)];
    [(g[(0, 0)] - g[(1, 1)]).re, 2.0 * c.im, 2.0 * c.re]
}

/// A collapse channel `√rate · L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladTerm {
    pub operator: Matrix4<C64>,
    pub rate: f64,
}

impl LindbladTerm {
    pub fn new(operator: Matrix4<C64>, rate: f64) -> Result<LindbladTerm> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("Lindblad rate must be finite and >= 0, got {rate}")));
        }
        Ok(LindbladTerm { operator, rate })
    }

    fn jump(from: usize, to: usize, rate: f64) -> LindbladTerm {
        let mut op = Matrix4::zeros();
        op[(to, from)] = C64::new(1.0, 0.0);
        LindbladTerm { operator: op, rate }
    }
}

/// Decay rate from `trion` into `ground`: the H (vertical) leg takes the
/// `decay_branching` share, the diagonal leg the rest.
pub fn decay_rate(sys: &SpinSystem, trion: usize, ground: usize) -> f64 {
    let vertical = (trion == TRION_DOWN && ground == DOWN) || (trion == TRION_UP && ground == UP);
    let share = if vertical { sys.decay_branching } else { 1.0 - sys.decay_branching };
    share * sys.gamma_sp
}

/// Four radiative channels, two per trion, totalling Γ per trion.
pub fn spontaneous_emission(sys: &SpinSystem) -> Vec<LindbladTerm> {
    let mut out = Vec::with_capacity(4);
    for t in [TRION_DOWN, TRION_UP] {
        for g in [DOWN, UP] {
            out.push(LindbladTerm::jump(t, g, decay_rate(sys, t, g)));
        }
    }
    out
}

/// Pure dephasing of the ground coherence at rate `gamma_phi` (|ρ⇓⇑| ∝ e^{−γ_φ t}).
pub fn ground_dephasing(gamma_phi: f64) -> Result<LindbladTerm> {
    let mut op = Matrix4::zeros();
    op[(DOWN, DOWN)] = C64::new(1.0, 0.0);
    op[(UP, UP)] = C64::new(-1.0, 0.0);
    LindbladTerm::new(op, 0.5 * gamma_phi)
}

/// Symmetric ground spin flips with population relaxation time `t1`.
pub fn ground_relaxation(t1: f64) -> Result<Vec<LindbladTerm>> {
    if !(t1 > 0.0) {
        return Err(Error::Domain(format!("T1 must be > 0, got {t1}")));
    }
    let r = 0.5 / t1;
    Ok(vec![LindbladTerm::jump(DOWN, UP, r), LindbladTerm::jump(UP, DOWN, r)])
}

/// Hamiltonian source for [`evolve`].
#[derive(Debug, Clone, Copy)]
pub enum Drive<'a> {
    /// No optical field; ground levels split by the operating ω_L.
    Free,
    /// Rotation pulses sharing one carrier, in the carrier's rotating frame.
    Pulses { pulses: &'a [Pulse], rules: &'a SelectionRules },
    /// A resonant pump window in its own co-rotating frame.
    Pump(&'a crate::pulses::PumpWindow),
}

impl Drive<'_> {
    fn hamiltonian(&self, sys: &SpinSystem, t: f64) -> Matrix4<C64> {
        let (wl, de) = (sys.ground_splitting(), sys.trion_splitting());
        match self {
            Drive::Free => Matrix4::from_diagonal(&Vector4::new(
                C64::new(-0.5 * wl, 0.0),
                C64::new(0.5 * wl, 0.0),
                C64::new(-0.5 * de, 0.0),
                C64::new(0.5 * de, 0.0),
            )),
            Drive::Pulses { pulses, rules } => {
                let detuning = pulses.first().map_or(0.0, |p| p.detuning);
                let mut h = hamiltonian_unchecked(wl, de, rules, &DriveField::off(detuning));
                for p in pulses.iter() {
                    let om = p.rabi_at(t);
                    if om != 0.0 {
                        h += rules.coupling(p.polarization) * C64::new(0.5 * om, 0.0);
                    }
                }
                h
            }
            Drive::Pump(w) => pump::pump_hamiltonian(w),
        }
    }

    /// Interval ends the integrator must land on, each with the step cap for the interval it closes.
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let pulses: &[Pulse] = match self {
            Drive::Pulses { pulses, .. } => pulses,
            _ => &[],
        };
        let mut ends: Vec<f64> = pulses
            .iter()
            .flat_map(|p| [p.start().secs(), p.end().secs()])
            .filter(|&x| x > t0 && x < t1)
            .chain(std::iter::once(t1))
            .collect();
        ends.sort_by(f64::total_cmp);
        ends.dedup();
        let mut prev = t0;
        ends.into_iter()
            .map(|b| {
                let mid = 0.5 * (prev + b);
                prev = b;
                let cap = pulses
                    .iter()
                    .filter(|p| mid >= p.start().secs() && mid <= p.end().secs())
                    .map(|p| 0.25 * p.fwhm.secs())
                    .fold(f64::INFINITY, f64::min);
                (b, cap)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Relative tolerance.
    pub tol: f64,
    pub atol: f64,
    /// Number of equally spaced output points including both ends (≥ 2).
    pub outputs: usize,
    pub method: Method,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { tol: 1e-9, atol: 1e-12, outputs: 2, method: Method::Adaptive, max_steps: 5_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Accumulated local error estimate (max-abs element norm).
    pub error_estimate: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Precomputed dissipator pieces: `Σ Lₖ ρ Lₖ†` and `½ Σ Lₖ†Lₖ`.
#[derive(Debug, Clone)]
pub(crate) struct Dissipator {
    ops: Vec<Matrix4<C64>>,
    half_sum: Matrix4<C64>,
}

impl Dissipator {
    pub(crate) fn new(terms: &[LindbladTerm]) -> Dissipator {
        let ops: Vec<Matrix4<C64>> = terms
            .iter()
            .filter(|t| t.rate > 0.0)
            .map(|t| t.operator * C64::new(t.rate.sqrt(), 0.0))
            .collect();
        let half_sum = ops.iter().fold(Matrix4::zeros(), |acc, l| acc + l.adjoint() * l) * C64::new(0.5, 0.0);
        Dissipator { ops, half_sum }
    }

    /// `−i[H, ρ] + Σ D[L]ρ`, written as `−i(Kρ − ρK†) + Σ LρL†` with `K = H − i·½ΣL†L`.
    pub(crate) fn rhs(&self, h: &Matrix4<C64>, rho: &Matrix4<C64>) -> Matrix4<C64> {
        let k = h - self.half_sum * C64::new(0.0, 1.0);
        let kr = k * rho;
        let mut out = (kr - kr.adjoint()) * C64::new(0.0, -1.0);
        for l in &self.ops {
            out += l * rho * l.adjoint();
        }
        // Exactly Hermitian in floating point.
        hermitian_part(&out)
    }
}

/// Integrates `dρ/dt = −i[H(t), ρ] + Σ D[Lₖ]ρ` over `t_span`.
pub fn evolve(
    rho0: &DensityMatrix,
    sys: &SpinSystem,
    drive: &Drive<'_>,
    terms: &[LindbladTerm],
    t_span: (f64, f64),
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(opts.tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    if !(t1 >= t0) {
        return Err(Error::Domain(format!("empty time span ({t0:e}, {t1:e})")));
    }
    rho0.check()?;
    if let Drive::Pulses { pulses, .. } = drive {
        if pulses.windows(2).any(|w| w[0].detuning != w[1].detuning) {
            return Err(Error::Domain("pulses in one drive must share a carrier".into()));
        }
    }
    let n = opts.outputs.max(2);
    let times: Vec<f64> = (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect();
    let diss = Dissipator::new(terms);
    let rhs = |t: f64, rho: &Matrix4<C64>| diss.rhs(&drive.hamiltonian(sys, t), rho);

    let mut states = vec![*rho0];
    let mut rho = rho0.rho;
    let mut t = t0;
    let mut error_estimate = 0.0;
    let mut steps = 0;
    let mut next_out = 1;
    for (bp, cap) in drive.breakpoints(t0, t1) {
        if bp <= t {
            continue;
        }
        let mut outs: Vec<f64> = Vec::new();
        let first_out = next_out;
        while next_out < n && times[next_out] <= bp {
            outs.push(times[next_out]);
            next_out += 1;
        }
        let captured = outs.len();
        if outs.last().is_none_or(|&l| l < bp) {
            outs.push(bp);
        }
        let ctl = StepControl {
            method: opts.method,
            rtol: opts.tol,
            atol: opts.atol,
            h_max: cap.min(bp - t),
            max_steps: opts.max_steps,
            ..Default::default()
        };
        let (ys, stats) = integrator::integrate(rhs, t, rho, &outs, &ctl).map_err(|f| Error::Integration {
            t: f.t,
            reason: f.reason,
            last_good: Box::new(DensityMatrix { rho: f.last_good }),
        })?;
        error_estimate += stats.error_estimate;
        steps += stats.accepted;
        for (k, y) in ys.iter().take(captured).enumerate() {
            let dm = DensityMatrix { rho: *y };
            dm.check().map_err(|e| Error::Integration {
                t: times[first_out + k],
                reason: e.to_string(),
                last_good: Box::new(*states.last().expect("non-empty")),
            })?;
            states.push(dm);
        }
        rho = *ys.last().expect("at least one output");
        t = bp;
    }
    Ok(Trajectory { times, states, error_estimate, steps })
}

/// Optional decoherence applied during [`free_precession`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dephasing {
    /// Markovian coherence decay rate, 1/s.
    pub rate: f64,
    /// Quasi-static Larmor offset for this shot, rad/s.
    pub offset: f64,
}

/// Analytic free evolution: rotation of the ground Bloch vector about x by
/// `(ω_L + offset)·τ`, ground coherence damped by `e^{−rate·τ}`. Trion
/// coherences pick up their Zeeman phases; populations are untouched.
pub fn free_precession(
    rho: &DensityMatrix,
    tau: f64,
    omega_l: f64,
    trion_splitting: f64,
    dephasing: Option<Dephasing>,
) -> Result<DensityMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("precession time must be >= 0, got {tau}")));
    }
    let d = dephasing.unwrap_or_default();
    let w = omega_l + d.offset;
    let energies = [-0.5 * w, 0.5 * w, -0.5 * trion_splitting, 0.5 * trion_splitting];
    let damp = (-d.rate * tau).exp();
    let mut out = rho.rho;
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let mut z = out[(i, j)] * C64::from_polar(1.0, -(energies[i] - energies[j]) * tau);
            if (i, j) == (DOWN, UP) || (i, j) == (UP, DOWN) {
                z *= damp;
            }
            out[(i, j)] = z;
        }
    }
    Ok(DensityMatrix { rho: out })
}

/// Column-stacking superoperator helpers for 2×2 ground maps.
pub mod superop {
    use nalgebra::{Matrix2, Matrix4, Vector4};

    use crate::C64;

    pub fn vec(m: &Matrix2<C64>) -> Vector4<C64> {
        Vector4::new(m[(0, 0)], m[(1, 0)], m[(0, 1)], m[(1, 1)])
    }

    pub fn unvec(v: &Vector4<C64>) -> Matrix2<C64> {
        Matrix2::new(v[0], v[2], v[1], v[3])
    }

    /// Superoperator of `ρ ↦ A ρ B`.
    pub fn sandwich(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
        b.transpose().kronecker(a)
    }

    /// Superoperator of `ρ ↦ U ρ U†`.
    pub fn unitary(u: &Matrix2<C64>) -> Matrix4<C64> {
        sandwich(u, &u.adjoint())
    }

    pub fn apply(s: &Matrix4<C64>, m: &Matrix2<C64>) -> Matrix2<C64> {
        unvec(&(s * vec(m)))
    }

    /// Lindblad generator on the ground manifold.
    pub fn generator(h: &Matrix2<C64>, jumps: &[Matrix2<C64>]) -> Matrix4<C64> {
        let id = Matrix2::<C64>::identity();
        let i = C64::new(0.0, 1.0);
        let mut g = (sandwich(h, &id) - sandwich(&id, h)) * (-i);
        for l in jumps {
            let ldl = l.adjoint() * l;
            g += sandwich(l, &l.adjoint()) - (sandwich(&ldl, &id) + sandwich(&id, &ldl)) * C64::new(0.5, 0.0);
        }
        g
    }
}
