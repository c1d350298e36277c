//! Weighted nonlinear least squares for fringes, decay envelopes and line profiles.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TWO_PI};

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    /// One standard deviation.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<Parameter>,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Problems with the data or the solution that do not stop the fit.
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; NaN if absent.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |p| p.value)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |p| p.sigma)
    }

    /// Converged and unflagged.
    pub fn ok(&self) -> bool {
        self.converged && self.flags.is_empty()
    }

    /// Errors unless [`FitResult::ok`].
    pub fn require(self) -> Result<FitResult> {
        if self.ok() {
            Ok(self)
        } else {
            let why = if self.converged { self.flags.join("; ") } else { "did not converge".to_string() };
            Err(Error::Fit(format!("{} fit: {why}", self.model)))
        }
    }
}

struct Solution {
    p: DVector<f64>,
    cov: DMatrix<f64>,
    rss: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg–Marquardt on `model(x, p, grad) -> value`, where the model
/// writes ∂value/∂p into `grad`.
fn levenberg_marquardt<F>(model: F, x: &[f64], y: &[f64], w: &[f64], p0: DVector<f64>) -> Solution
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let np = p0.len();
    let mut grad = vec![0.0; np];
    let eval = |p: &DVector<f64>, grad: &mut [f64], jac: Option<&mut DMatrix<f64>>| -> (DVector<f64>, f64) {
        let mut r = DVector::zeros(n);
        let mut rss = 0.0;
        let mut jac = jac;
        for i in 0..n {
            let sw = w[i].sqrt();
            let v = model(x[i], p.as_slice(), grad);
            r[i] = sw * (y[i] - v);
            rss += r[i] * r[i];
            if let Some(j) = jac.as_deref_mut() {
                for k in 0..np {
                    j[(i, k)] = sw * grad[k];
                }
            }
        }
        (r, rss)
    };

    let mut p = p0;
    let mut jac = DMatrix::zeros(n, np);
    let (mut r, mut rss) = eval(&p, &mut grad, Some(&mut jac));
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if rss == 0.0 || !rss.is_finite() {
            converged = rss == 0.0;
            break;
        }
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let floor = a.diagonal().max() * 1e-15;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for k in 0..np {
                damped[(k, k)] += lambda * a[(k, k)].max(floor);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &p + &step;
            let (_, trial_rss) = eval(&trial, &mut grad, None);
            if trial_rss.is_finite() && trial_rss <= rss {
                let rel = step.iter().zip(trial.iter()).map(|(d, v)| d.abs() / (v.abs() + 1e-12)).fold(0.0, f64::max);
                p = trial;
                (r, rss) = eval(&p, &mut grad, Some(&mut jac));
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step exists at any damping: a numerical minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let dof = n.saturating_sub(np).max(1);
    let info = jac.transpose() * &jac;
    let cov = info
        .clone()
        .try_inverse()
        .or_else(|| info.pseudo_inverse(1e-14).ok())
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::INFINITY))
        * (rss / dof as f64);
    Solution { p, cov, rss, converged, iterations }
}

fn check_inputs(x: &[f64], y: &[f64], weights: Option<&[f64]>, min_points: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("x and y lengths differ ({} vs {})", x.len(), y.len())));
    }
    if x.len() < min_points {
        return Err(Error::Domain(format!("need at least {min_points} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite data".into()));
    }
    match weights {
        None => Ok(vec![1.0; x.len()]),
        Some(w) if w.len() == x.len() && w.iter().all(|v| v.is_finite() && *v >= 0.0) => {
            let max = w.iter().cloned().fold(0.0, f64::max);
            if max == 0.0 {
                return Err(Error::Domain("all weights are zero".into()));
            }
            Ok(w.iter().map(|v| v / max).collect())
        }
        Some(_) => Err(Error::Domain("weights must match the data length and be finite and >= 0".into())),
    }
}

fn span(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

fn y_scale(y: &[f64]) -> f64 {
    let m = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn param(name: &str, value: f64, sigma: f64) -> Parameter {
    Parameter { name: name.to_string(), value, sigma: sigma.abs() }
}

/// Ordinary least squares of `y` on the given basis columns.
fn linear_fit(cols: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let m = DMatrix::from_fn(n, cols.len(), |i, k| cols[k][i] * w[i].sqrt());
    let b = DVector::from_fn(n, |i, _| y[i] * w[i].sqrt());
    let coef = m.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let rss = (&m * &coef - &b).norm_squared();
    Some((coef.iter().cloned().collect(), rss))
}

/// Dominant frequency of `y − mean` from a dense discrete spectrum over
/// `[0.5/span, n/(2·span)]` in units of `1/x`.
pub fn spectral_peak(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (lo, hi) = span(x);
    let len = (hi - lo).max(f64::MIN_POSITIVE);
    let mean = y.iter().sum::<f64>() / n as f64;
    let df = 0.1 / len;
    let steps = ((n as f64 / 2.0) / (len * df)).ceil() as usize;
    let mut best = (0.0, 0.5 / len);
    for k in 5..=steps.max(5) {
        let f = k as f64 * df;
        let (mut re, mut im) = (0.0, 0.0);
        for i in 0..n {
            let (s, c) = (TWO_PI * f * (x[i] - lo)).sin_cos();
            re += (y[i] - mean) * c;
            im += (y[i] - mean) * s;
        }
        let p = re * re + im * im;
        if p > best.0 {
            best = (p, f);
        }
    }
    best.1
}

/// `amplitude·cos(2π·frequency·x + phase) + offset`, with amplitude ≥ 0 and
/// phase in (−π, π].
pub fn fit_sinusoid(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    let w = check_inputs(x, y, weights, 8)?;
    let names = ["amplitude", "frequency", "phase", "offset"];
    let (lo, hi) = span(x);
    let xs = (hi - lo).max(f64::MIN_POSITIVE);
    let ys = y_scale(y);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * ys {
        let rss = y.iter().zip(&w).map(|(v, wi)| wi * (v - mean).powi(2)).sum();
        return Ok(FitResult {
            model: "sinusoid".into(),
            parameters: vec![
                param(names[0], 0.0, 0.0),
                param(names[1], f64::NAN, f64::INFINITY),
                param(names[2], 0.0, f64::INFINITY),
                param(names[3], mean, 0.0),
            ],
            rss,
            converged: false,
            iterations: 0,
            flags: vec!["flat data: no oscillation to fit".into()],
        });
    }
    let xn: Vec<f64> = x.iter().map(|v| (v - lo) / xs).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / ys).collect();
    let f0 = spectral_peak(&xn, &yn);
    let cols = vec![
        xn.iter().map(|t| (TWO_PI * f0 * t).cos()).collect(),
        xn.iter().map(|t| (TWO_PI * f0 * t).sin()).collect(),
        vec![1.0; xn.len()],
    ];
    let (c, _) = linear_fit(&cols, &yn, &w).ok_or_else(|| Error::Fit("sinusoid seed failed".into()))?;
    let p0 = DVector::from_vec(vec![c[0].hypot(c[1]), f0, (-c[1]).atan2(c[0]), c[2]]);
    let model = |t: f64, p: &[f64], g: &mut [f64]| {
        let arg = TWO_PI * p[1] * t + p[2];
        let (s, c) = arg.sin_cos();
        g[0] = c;
        g[1] = -p[0] * s * TWO_PI * t;
        g[2] = -p[0] * s;
        g[3] = 1.0;
        p[0] * c + p[3]
    };
    let sol = levenberg_marquardt(model, &xn, &yn, &w, p0);
    let sd = |k: usize| sol.cov[(k, k)].max(0.0).sqrt();
    let (mut amp, freq, mut phase, offset) = (sol.p[0], sol.p[1], sol.p[2], sol.p[3]);
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    // Undo the origin shift so that the phase refers to x = 0.
    let f = freq / xs;
    phase -= TWO_PI * f * lo;
    phase = wrap_phase(phase);
    let mut flags = Vec::new();
    if f * (hi - lo) < 1.0 {
        flags.push("less than one period spanned".into());
    }
    Ok(FitResult {
        model: "sinusoid".into(),
        parameters: vec![
            param(names[0], amp * ys, sd(0) * ys),
            param(names[1], f, sd(1) / xs),
            param(names[2], phase, sd(2)),
            param(names[3], offset * ys, sd(3) * ys),
        ],
        rss: sol.rss * ys * ys,
        converged: sol.converged,
        iterations: sol.iterations,
        flags,
    })
}

fn wrap_phase(p: f64) -> f64 {
    let r = p.rem_euclid(TWO_PI);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Gaussian,
    Exponential,
}

impl Envelope {
    fn shape(self, u: f64) -> f64 {
        match self {
            Envelope::Gaussian => u * u,
            Envelope::Exponential => u,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Envelope::Gaussian => "gaussian_decay",
            Envelope::Exponential => "exponential_decay",
        }
    }
}

/// Shared decay fitter on `A0·exp(−k·s(t/ts)) [+ c]`; the rate `k` keeps the
/// problem smooth through the non-decaying limit.
fn fit_decay(kind: Envelope, t: &[f64], y: &[f64], weights: Option<&[f64]>, with_offset: bool) -> Result<FitResult> {
    let w = check_inputs(t, y, weights, if with_offset { 6 } else { 5 })?;
    let ts = span(t).1.abs().max(f64::MIN_POSITIVE);
    let ys = y_scale(y);
    let tn: Vec<f64> = t.iter().map(|v| v / ts).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / ys).collect();

    // Seed by scanning the rate with the linear parameters solved exactly.
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for j in 0..=120 {
        let k = 10f64.powf(-2.0 + 4.5 * j as f64 / 120.0);
        let mut cols = vec![tn.iter().map(|u| (-k * kind.shape(*u)).exp()).collect::<Vec<_>>()];
        if with_offset {
            cols.push(vec![1.0; tn.len()]);
        }
        if let Some((c, rss)) = linear_fit(&cols, &yn, &w) {
            if best.as_ref().is_none_or(|b| rss < b.2) {
                best = Some((k, c, rss));
            }
        }
    }
    let (k0, c0, _) = best.ok_or_else(|| Error::Fit("decay seed failed".into()))?;
    let mut p0 = vec![c0[0], k0];
    if with_offset {
        p0.push(c0[1]);
    }
    let model = |u: f64, p: &[f64], g: &mut [f64]| {
        let s = kind.shape(u);
        let e = (-p[1] * s).exp();
        g[0] = e;
        g[1] = -p[0] * s * e;
        if g.len() > 2 {
            g[2] = 1.0;
        }
        p[0] * e + p.get(2).copied().unwrap_or(0.0)
    };
    let sol = levenberg_marquardt(model, &tn, &yn, &w, DVector::from_vec(p0));
    let sd = |k: usize| sol.cov[(k, k)].max(0.0).sqrt();
    let (a0, k) = (sol.p[0], sol.p[1]);
    let mut flags = Vec::new();
    let (tau, tau_sigma) = if k > 0.0 {
        match kind {
            Envelope::Gaussian => {
                let tau = ts / k.sqrt();
                (tau, tau * sd(1) / (2.0 * k))
            }
            Envelope::Exponential => {
                let tau = ts / k;
                (tau, tau * sd(1) / k)
            }
        }
    } else {
        flags.push("data do not decay".into());
        (f64::INFINITY, f64::INFINITY)
    };
    let time_name = match (kind, with_offset) {
        (Envelope::Gaussian, _) => "t2star",
        (Envelope::Exponential, false) => "t2",
        (Envelope::Exponential, true) => "tau",
    };
    let mut parameters = vec![param("A0", a0 * ys, sd(0) * ys), param(time_name, tau, tau_sigma)];
    if with_offset {
        parameters.push(param("offset", sol.p[2] * ys, sd(2) * ys));
    }
    Ok(FitResult {
        model: if with_offset { "exponential_offset".into() } else { kind.label().into() },
        parameters,
        rss: sol.rss * ys * ys,
        converged: sol.converged,
        iterations: sol.iterations,
        flags,
    })
}

/// `A0·exp(−(t/T₂*)²)`.
pub fn fit_gaussian_decay(t: &[f64], amp: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    fit_decay(Envelope::Gaussian, t, amp, weights, false)
}

/// `A0·exp(−t/T₂)`.
pub fn fit_exponential_decay(t: &[f64], amp: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    fit_decay(Envelope::Exponential, t, amp, weights, false)
}

/// `A0·exp(−t/tau) + offset`.
pub fn fit_exponential_offset(t: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    fit_decay(Envelope::Exponential, t, y, weights, true)
}

/// `height·exp(−4ln2·(x − center)²/fwhm²) + baseline`.
pub fn fit_gaussian_profile(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    let w = check_inputs(x, y, weights, 5)?;
    let (lo, hi) = span(x);
    let mid = 0.5 * (lo + hi);
    let xs = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let ys = y_scale(y);
    let xn: Vec<f64> = x.iter().map(|v| (v - mid) / xs).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / ys).collect();

    let imax = (0..yn.len()).max_by(|a, b| yn[*a].total_cmp(&yn[*b])).unwrap_or(0);
    let mut flags = Vec::new();
    if xn[imax] <= -1.0 + 1e-12 || xn[imax] >= 1.0 - 1e-12 {
        flags.push("peak at scan boundary".to_string());
    }
    // Seed the width by a scan with the linear parameters solved exactly.
    let c0 = xn[imax];
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for j in 0..=80 {
        let fw = 10f64.powf(-2.0 + 2.5 * j as f64 / 80.0);
        let cols = vec![xn.iter().map(|u| (-4.0 * LN_2 * ((u - c0) / fw).powi(2)).exp()).collect(), vec![1.0; xn.len()]];
        if let Some((c, rss)) = linear_fit(&cols, &yn, &w) {
            if best.as_ref().is_none_or(|b| rss < b.2) {
                best = Some((fw, c, rss));
            }
        }
    }
    let (fw0, lin, _) = best.ok_or_else(|| Error::Fit("profile seed failed".into()))?;
    let model = |u: f64, p: &[f64], g: &mut [f64]| {
        let d = u - p[1];
        let q = 4.0 * LN_2 / (p[2] * p[2]);
        let e = (-q * d * d).exp();
        g[0] = e;
        g[1] = p[0] * e * 2.0 * q * d;
        g[2] = p[0] * e * 2.0 * q * d * d / p[2];
        g[3] = 1.0;
        p[0] * e + p[3]
    };
    let sol = levenberg_marquardt(model, &xn, &yn, &w, DVector::from_vec(vec![lin[0], c0, fw0, lin[1]]));
    let sd = |k: usize| sol.cov[(k, k)].max(0.0).sqrt();
    let center = mid + sol.p[1] * xs;
    if !(lo..=hi).contains(&center) && flags.is_empty() {
        flags.push("fitted center outside scan range".into());
    }
    Ok(FitResult {
        model: "gaussian_profile".into(),
        parameters: vec![
            param("center", center, sd(1) * xs),
            param("fwhm", sol.p[2].abs() * xs, sd(2) * xs),
            param("height", sol.p[0] * ys, sd(0) * ys),
            param("baseline", sol.p[3] * ys, sd(3) * ys),
        ],
        rss: sol.rss * ys * ys,
        converged: sol.converged,
        iterations: sol.iterations,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeChoice {
    Gaussian,
    Exponential,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSelection {
    pub choice: EnvelopeChoice,
    /// RSS of the worse model over RSS of the better one (≥ 1).
    pub rss_ratio: f64,
    pub gaussian: FitResult,
    pub exponential: FitResult,
}

/// Fits both envelopes and keeps the lower-RSS one; within 1% is a tie.
pub fn select_envelope_model(t: &[f64], amp: &[f64], weights: Option<&[f64]>) -> Result<EnvelopeSelection> {
    let gaussian = fit_gaussian_decay(t, amp, weights)?;
    let exponential = fit_exponential_decay(t, amp, weights)?;
    for f in [&gaussian, &exponential] {
        if !f.converged {
            return Err(Error::Fit(format!("{} fit did not converge", f.model)));
        }
    }
    let (g, e) = (gaussian.rss, exponential.rss);
    let (lo, hi) = (g.min(e), g.max(e));
    let rss_ratio = if lo > 0.0 { hi / lo } else if hi > 0.0 { f64::INFINITY } else { 1.0 };
    let choice = if rss_ratio < 1.01 {
        EnvelopeChoice::Inconclusive
    } else if g < e {
        EnvelopeChoice::Gaussian
    } else {
        EnvelopeChoice::Exponential
    };
    Ok(EnvelopeSelection { choice, rss_ratio, gaussian, exponential })
}

/// Per-pulse fidelity from two-pulse fringe visibility, `F = (1 + √V)/2`.
pub fn fidelity_from_visibility(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("visibility must lie in [0, 1], got {v}")));
    }
    Ok(0.5 * (1.0 + v.sqrt()))
}

/// Inverse of [`fidelity_from_visibility`].
pub fn visibility_for_fidelity(f: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&f) {
        return Err(Error::Domain(format!("fidelity must lie in [0.5, 1], got {f}")));
    }
    Ok((2.0 * f - 1.0).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize, t1: f64) -> Vec<f64> {
        (0..n).map(|i| t1 * i as f64 / (n - 1) as f64).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn exact_sinusoid() {
        let x = grid(120, 0.2e-9);
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (TWO_PI * 30.2e9 * t + 0.7).cos() + 5.0).collect();
        let f = fit_sinusoid(&x, &y, None).unwrap();
        assert!(f.ok());
        assert!(rel(f.value("amplitude"), 3.0) < 1e-6);
        assert!(rel(f.value("frequency"), 30.2e9) < 1e-6);
        assert!((f.value("phase") - 0.7).abs() < 1e-6);
        assert!(rel(f.value("offset"), 5.0) < 1e-6);
    }

    #[test]
    fn sinusoid_with_offset_origin() {
        let x: Vec<f64> = (0..60).map(|i| 2.0 + 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 1.5 * (TWO_PI * 1.3 * t - 2.0).cos()).collect();
        let f = fit_sinusoid(&x, &y, None).unwrap();
        assert!(rel(f.value("frequency"), 1.3) < 1e-6);
        assert!((f.value("phase") + 2.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_fringes_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let x = grid(200, 0.3e-9);
        let y: Vec<f64> = x.iter().map(|t| (TWO_PI * 30.2e9 * t).cos() + noise.sample(&mut rng)).collect();
        let f = fit_sinusoid(&x, &y, None).unwrap();
        assert!(f.ok());
        assert!(rel(f.value("frequency"), 30.2e9) < 1e-3);
    }

    #[test]
    fn flat_data_is_flagged() {
        let x = grid(20, 1.0);
        let f = fit_sinusoid(&x, &[2.0; 20], None).unwrap();
        assert!(!f.converged && !f.ok());
        assert_eq!(f.value("amplitude"), 0.0);
        assert!(f.require().is_err());
    }

    #[test]
    fn exact_decays() {
        let t = grid(40, 6e-9);
        let g: Vec<f64> = t.iter().map(|v| 0.8 * (-(v / 2.3e-9).powi(2)).exp()).collect();
        let f = fit_gaussian_decay(&t, &g, None).unwrap();
        assert!(f.ok());
        assert!(rel(f.value("t2star"), 2.3e-9) < 1e-6 && rel(f.value("A0"), 0.8) < 1e-6);

        let t = grid(40, 3e-6);
        let e: Vec<f64> = t.iter().map(|v| 0.6 * (-v / 1.1e-6).exp()).collect();
        let f = fit_exponential_decay(&t, &e, None).unwrap();
        assert!(f.ok());
        assert!(rel(f.value("t2"), 1.1e-6) < 1e-6 && rel(f.value("A0"), 0.6) < 1e-6);

        let o: Vec<f64> = t.iter().map(|v| 0.6 * (-v / 1.1e-6).exp() + 0.25).collect();
        let f = fit_exponential_offset(&t, &o, None).unwrap();
        assert!(rel(f.value("tau"), 1.1e-6) < 1e-6 && rel(f.value("offset"), 0.25) < 1e-6);
    }

    #[test]
    fn rising_data_is_flagged() {
        let t = grid(20, 1.0);
        let y: Vec<f64> = t.iter().map(|v| 1.0 + 0.3 * v).collect();
        let f = fit_exponential_decay(&t, &y, None).unwrap();
        assert!(!f.ok());
    }

    #[test]
    fn model_selection() {
        let t = grid(50, 6e-9);
        let g: Vec<f64> = t.iter().map(|v| (-(v / 2.3e-9).powi(2)).exp()).collect();
        let s = select_envelope_model(&t, &g, None).unwrap();
        assert_eq!(s.choice, EnvelopeChoice::Gaussian);
        let e: Vec<f64> = t.iter().map(|v| (-v / 2.3e-9).exp()).collect();
        let s = select_envelope_model(&t, &e, None).unwrap();
        assert_eq!(s.choice, EnvelopeChoice::Exponential);
        assert!(s.rss_ratio > 1.01);
    }

    #[test]
    fn noise_is_inconclusive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let t = grid(2000, 1.0);
        let y: Vec<f64> = t.iter().map(|_| 1.0 + noise.sample(&mut rng)).collect();
        let s = select_envelope_model(&t, &y, None).unwrap();
        assert_eq!(s.choice, EnvelopeChoice::Inconclusive, "{}", s.rss_ratio);
    }

    #[test]
    fn exact_profile_and_symmetry() {
        let x: Vec<f64> = (0..81).map(|i| -20e9 + 0.5e9 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|d| 40.0 * (-4.0 * LN_2 * ((d - 1e9) / 6.7e9).powi(2)).exp() + 3.0).collect();
        let f = fit_gaussian_profile(&x, &y, None).unwrap();
        assert!(f.ok());
        assert!(rel(f.value("fwhm"), 6.7e9) < 1e-6);
        assert!((f.value("center") - 1e9).abs() < 1e-3);
        assert!(rel(f.value("height"), 40.0) < 1e-6 && rel(f.value("baseline"), 3.0) < 1e-6);

        let sym: Vec<f64> = x.iter().map(|d| (-4.0 * LN_2 * (d / 6.7e9).powi(2)).exp()).collect();
        let f = fit_gaussian_profile(&x, &sym, None).unwrap();
        assert!(f.value("center").abs() <= f.sigma("center").max(1.0));
    }

    #[test]
    fn boundary_peak_is_flagged() {
        let x = grid(30, 10.0);
        let y: Vec<f64> = x.iter().map(|d| (-(d / 3.0).powi(2)).exp()).collect();
        assert!(!fit_gaussian_profile(&x, &y, None).unwrap().ok());
    }

    #[test]
    fn fidelity_convention() {
        assert_eq!(fidelity_from_visibility(1.0).unwrap(), 1.0);
        assert_eq!(fidelity_from_visibility(0.0).unwrap(), 0.5);
        assert!((fidelity_from_visibility(0.7921).unwrap() - 0.945).abs() < 1e-12);
        assert!(fidelity_from_visibility(1.1).is_err());
        assert!((visibility_for_fidelity(0.945).unwrap() - 0.7921).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(fit_sinusoid(&[0.0; 4], &[0.0; 4], None).is_err());
        assert!(fit_gaussian_decay(&[0.0, 1.0], &[1.0], None).is_err());
        let x = grid(10, 1.0);
        assert!(fit_exponential_decay(&x, &x, Some(&[1.0; 3])).is_err());
    }
}
