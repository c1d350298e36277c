use nalgebra::{Matrix1, Matrix2, Matrix4, RowVector4, SMatrix};

use super::integrator::{self, StepControl};
use super::{decay_rate, spontaneous_emission, superop, DensityMatrix, Dissipator, LindbladTerm};
use crate::levels::{SpinSystem, DOWN, TRION_DOWN, TRION_UP, UP};
use crate::pulses::PumpWindow;
use crate::{Error, Result, C64};

/// Pump-frame Hamiltonian: only the target leg is coupled; the trion sits at
/// minus the pump detuning.
pub(crate) fn pump_hamiltonian(w: &PumpWindow) -> Matrix4<C64> {
    let (g, t) = (w.target.ground(), w.target.trion());
    let mut h = Matrix4::zeros();
    h[(t, t)] = C64::new(-w.detuning, 0.0);
    h[(t, g)] = C64::new(0.5 * w.pump_rabi, 0.0);
    h[(g, t)] = C64::new(0.5 * w.pump_rabi, 0.0);
    h
}

fn check_window(w: &PumpWindow) -> Result<()> {
    if !(w.duration.secs() > 0.0) {
        return Err(Error::Domain(format!("pump duration must be > 0, got {}", w.duration)));
    }
    if !w.pump_rabi.is_finite() || !w.detuning.is_finite() {
        return Err(Error::Domain("pump Rabi frequency and detuning must be finite".into()));
    }
    Ok(())
}

/// Multiplies the ground coherence by the Larmor phase accumulated over the
/// window, returning from the pump frame to the precessing frame.
fn restore_frame(rho: &mut Matrix4<C64>, omega_l: f64, duration: f64) {
    let phase = C64::from_polar(1.0, omega_l * duration);
    rho[(DOWN, UP)] *= phase;
    rho[(UP, DOWN)] *= phase.conj();
}

/// Resonant pumping with radiative decay only.
pub fn optical_pump(rho: &DensityMatrix, window: &PumpWindow, sys: &SpinSystem) -> Result<(DensityMatrix, f64)> {
    optical_pump_with(rho, window, sys, &[], 1e-9)
}

/// Resonant pumping with additional collapse channels. Returns the final state
/// and the integrated emission probability on the readout leg.
pub fn optical_pump_with(
    rho: &DensityMatrix,
    window: &PumpWindow,
    sys: &SpinSystem,
    extra: &[LindbladTerm],
    tol: f64,
) -> Result<(DensityMatrix, f64)> {
    check_window(window)?;
    rho.check()?;
    let mut terms = spontaneous_emission(sys);
    terms.extend_from_slice(extra);
    let diss = Dissipator::new(&terms);
    let h = pump_hamiltonian(window);
    let t = window.target.trion();
    let r = decay_rate(sys, t, window.target.dark_ground());
    let rhs = |_: f64, y: &(Matrix4<C64>, Matrix1<C64>)| (diss.rhs(&h, &y.0), Matrix1::new(y.0[(t, t)] * r));
    let d = window.duration.secs();
    let ctl = StepControl { rtol: tol, atol: 1e-13, ..Default::default() };
    let (ys, _) = integrator::integrate(rhs, 0.0, (rho.rho, Matrix1::zeros()), &[d], &ctl).map_err(|f| {
        Error::Integration { t: f.t, reason: f.reason, last_good: Box::new(DensityMatrix { rho: f.last_good.0 }) }
    })?;
    let (mut out, emitted) = ys[0];
    restore_frame(&mut out, sys.ground_splitting(), d);
    Ok((DensityMatrix { rho: out }, emitted[0].re))
}

type Aug = SMatrix<C64, 17, 17>;

/// Exact propagator of a pump window, built from the matrix exponential of the
/// Liouvillian augmented with one row that accumulates readout emission.
#[derive(Debug, Clone)]
pub struct PumpMap {
    propagator: Aug,
    omega_l: f64,
    duration: f64,
    /// Branching of leftover trion population back into the ground states.
    trion_return: [[f64; 2]; 2],
}

fn idx(row: usize, col: usize) -> usize {
    col * 4 + row
}

impl PumpMap {
    pub fn new(window: &PumpWindow, sys: &SpinSystem, extra: &[LindbladTerm]) -> Result<PumpMap> {
        check_window(window)?;
        let mut terms = spontaneous_emission(sys);
        terms.extend_from_slice(extra);
        let diss = Dissipator::new(&terms);
        let h = pump_hamiltonian(window);
        let i = C64::new(0.0, 1.0);
        let k = h - diss.half_sum * i;
        let id = Matrix4::<C64>::identity();
        let mut liou = Aug::zeros();
        let mut core = id.kronecker(&k) * (-i) + k.conjugate().kronecker(&id) * i;
        for l in &diss.ops {
            core += l.conjugate().kronecker(l);
        }
        liou.fixed_view_mut::<16, 16>(0, 0).copy_from(&core);
        let t = window.target.trion();
        liou[(16, idx(t, t))] = C64::new(decay_rate(sys, t, window.target.dark_ground()), 0.0);
        let d = window.duration.secs();
        let propagator = (liou * C64::new(d, 0.0)).exp();
        let g = sys.gamma_sp;
        let back = |trion: usize| [decay_rate(sys, trion, DOWN) / g, decay_rate(sys, trion, UP) / g];
        Ok(PumpMap {
            propagator,
            omega_l: sys.ground_splitting(),
            duration: d,
            trion_return: [back(TRION_DOWN), back(TRION_UP)],
        })
    }

    pub fn apply(&self, rho: &DensityMatrix) -> (DensityMatrix, f64) {
        let mut v = SMatrix::<C64, 17, 1>::zeros();
        for c in 0..4 {
            for r in 0..4 {
                v[idx(r, c)] = rho.rho[(r, c)];
            }
        }
        let w = self.propagator * v;
        let mut out = Matrix4::zeros();
        for c in 0..4 {
            for r in 0..4 {
                out[(r, c)] = w[idx(r, c)];
            }
        }
        restore_frame(&mut out, self.omega_l, self.duration);
        (DensityMatrix { rho: out }, w[16].re)
    }

    /// Action on a ground-manifold state: a 4×4 superoperator (column-stacked
    /// 2×2 blocks) and the emission functional. Trion population left at the
    /// end of the window is returned to the ground states by branching.
    pub fn ground_response(&self) -> (Matrix4<C64>, RowVector4<f64>) {
        let mut s = Matrix4::zeros();
        let mut e = RowVector4::zeros();
        for col in 0..4 {
            let mut unit = Matrix2::zeros();
            unit[(col % 2, col / 2)] = C64::new(1.0, 0.0);
            let (out, emitted) = self.apply(&DensityMatrix::from_ground(&unit));
            let mut g = out.ground();
            for (k, trion) in [TRION_DOWN, TRION_UP].into_iter().enumerate() {
                let p = out.rho[(trion, trion)];
                g[(0, 0)] += p * self.trion_return[k][0];
                g[(1, 1)] += p * self.trion_return[k][1];
            }
            s.set_column(col, &superop::vec(&g));
            e[col] = if col == 0 || col == 3 { emitted } else { 0.0 };
        }
        (s, e)
    }
}
