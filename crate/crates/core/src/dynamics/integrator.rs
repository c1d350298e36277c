//! Dormand–Prince 5(4) with adaptive step control, plus a fixed-step RK4
//! fallback, over any state that supports `y += a·x`.

use nalgebra::SMatrix;

use crate::C64;

pub trait OdeState: Clone {
    /// `self += a·x`.
    fn axpy(&mut self, a: f64, x: &Self);
    /// Largest `|err_i| / (atol + rtol·max(|y0_i|, |y1_i|))`.
    fn error_ratio(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64;
    /// Largest absolute component.
    fn max_abs(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl<const R: usize, const C: usize> OdeState for SMatrix<C64, R, C> {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x.iter()) {
            *s += v * a;
        }
    }

    fn error_ratio(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        let mut worst = 0.0_f64;
        for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
            worst = worst.max(e.norm() / (atol + rtol * a.norm().max(b.norm())));
        }
        worst
    }

    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl<A: OdeState, B: OdeState> OdeState for (A, B) {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.0.axpy(a, &x.0);
        self.1.axpy(a, &x.1);
    }

    fn error_ratio(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        A::error_ratio(&err.0, &y0.0, &y1.0, rtol, atol).max(B::error_ratio(&err.1, &y0.1, &y1.1, rtol, atol))
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs().max(self.1.max_abs())
    }

    fn is_finite(&self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Embedded 5(4) pair with error control.
    Adaptive,
    /// Classical RK4 with a fixed step, s.
    Fixed { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            method: Method::Adaptive,
            rtol: 1e-9,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_min: 1e-24,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Sum of the local error estimates of accepted steps (max-abs norm).
    pub error_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct Failure<S> {
    pub t: f64,
    pub reason: String,
    pub last_good: S,
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂ for the error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combo<S: OdeState>(y: &S, h: f64, terms: &[(f64, &S)]) -> S {
    let mut out = y.clone();
    for &(a, k) in terms {
        if a != 0.0 {
            out.axpy(h * a, k);
        }
    }
    out
}

/// Integrates `dy/dt = f(t, y)` from `t0` and returns the state at each of
/// `outputs` (which must be non-decreasing and ≥ `t0`).
pub fn integrate<S, F>(
    mut f: F,
    t0: f64,
    y0: S,
    outputs: &[f64],
    ctl: &StepControl,
) -> Result<(Vec<S>, Stats), Failure<S>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    let mut stats = Stats::default();
    let mut t = t0;
    let mut y = y0;
    let mut out = Vec::with_capacity(outputs.len());
    let mut h = match ctl.method {
        Method::Adaptive => initial_step(&mut f, t0, &y, outputs.last().copied().unwrap_or(t0) - t0, ctl),
        Method::Fixed { step } => step,
    };
    let mut k1 = f(t, &y);
    stats.rhs_evals += 1;
    for &target in outputs {
        if target < t {
            return Err(Failure { t, reason: format!("output time {target:e} precedes {t:e}"), last_good: y });
        }
        while t < target {
            let remaining = target - t;
            let mut last = false;
            let unclipped = h;
            if h >= remaining {
                h = remaining;
                last = true;
            }
            match ctl.method {
                Method::Fixed { .. } => {
                    let hh = h;
                    let k2 = f(t + 0.5 * hh, &combo(&y, hh, &[(0.5, &k1)]));
                    let k3 = f(t + 0.5 * hh, &combo(&y, hh, &[(0.5, &k2)]));
                    let k4 = f(t + hh, &combo(&y, hh, &[(1.0, &k3)]));
                    y = combo(&y, hh, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]);
                    t = if last { target } else { t + hh };
                    k1 = f(t, &y);
                    stats.rhs_evals += 4;
                    stats.accepted += 1;
                    h = unclipped;
                }
                Method::Adaptive => {
                    let k2 = f(t + C2 * h, &combo(&y, h, &[(A21, &k1)]));
                    let k3 = f(t + C3 * h, &combo(&y, h, &[(A31, &k1), (A32, &k2)]));
                    let k4 = f(t + C4 * h, &combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
                    let k5 = f(t + C5 * h, &combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
                    let k6 =
                        f(t + h, &combo(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
                    let y_new = combo(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
                    let k7 = f(t + h, &y_new);
                    stats.rhs_evals += 6;
                    let mut err = k1.clone();
                    err.axpy(-1.0, &k1);
                    let err = combo(&err, h, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);
                    let ratio = S::error_ratio(&err, &y, &y_new, ctl.rtol, ctl.atol);
                    if !ratio.is_finite() || !y_new.is_finite() {
                        return Err(Failure { t, reason: "non-finite state".into(), last_good: y });
                    }
                    if ratio <= 1.0 {
                        stats.accepted += 1;
                        stats.error_estimate += err.max_abs();
                        t = if last { target } else { t + h };
                        y = y_new;
                        k1 = k7;
                        let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                        h = if last { unclipped.max(h * grow) } else { h * grow }.min(ctl.h_max);
                    } else {
                        stats.rejected += 1;
                        h *= (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
                        if h < ctl.h_min {
                            return Err(Failure { t, reason: format!("step size underflow (h = {h:e})"), last_good: y });
                        }
                    }
                }
            }
            if stats.accepted + stats.rejected > ctl.max_steps {
                return Err(Failure { t, reason: "step budget exhausted".into(), last_good: y });
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

fn initial_step<S: OdeState, F: FnMut(f64, &S) -> S>(f: &mut F, t0: f64, y0: &S, span: f64, ctl: &StepControl) -> f64 {
    let d0 = y0.max_abs();
    let d1 = f(t0, y0).max_abs();
    let guess = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 * span.abs().max(1e-15) } else { 0.01 * d0 / d1 };
    guess.min(ctl.h_max).max(ctl.h_min).min(if span > 0.0 { span } else { guess })
}
