//! Four-level double-Λ structure of a charged dot in Voigt geometry.
//!
//! Basis ordering is fixed: `|⇓⟩, |⇑⟩, |⇓⇑,↓⟩, |⇓⇑,↑⟩` (two ground pseudo-spin
//! states followed by the two trion states). The magnetic field lies along x,
//! the optical axis along z.

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64, TWO_PI};

/// Bohr magneton, J/T (CODATA 2022).
pub const BOHR_MAGNETON: f64 = 9.274_010_065_7e-24;
/// Planck constant, J·s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / TWO_PI;

pub const DOWN: usize = 0;
pub const UP: usize = 1;
pub const TRION_DOWN: usize = 2;
pub const TRION_UP: usize = 3;

/// Which carrier forms the qubit. The other carrier's g-factor sets the
/// trion splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChargeSpecies {
    #[default]
    Hole,
    Electron,
}

impl ChargeSpecies {
    pub fn as_str(self) -> &'static str {
        match self {
            ChargeSpecies::Hole => "hole",
            ChargeSpecies::Electron => "electron",
        }
    }
}

impl std::str::FromStr for ChargeSpecies {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hole" => Ok(ChargeSpecies::Hole),
            "electron" => Ok(ChargeSpecies::Electron),
            other => Err(Error::Config(format!("unknown species `{other}`"))),
        }
    }
}

/// Angular Zeeman splitting `g·μ_B·B/ħ` in rad/s.
pub fn zeeman_splitting(g: f64, b: f64) -> f64 {
    debug_assert!(b >= 0.0);
    g * BOHR_MAGNETON * b / HBAR
}

/// Inverse of [`zeeman_splitting`] for a splitting given in Hz.
pub fn g_factor_for_splitting(splitting_hz: f64, b: f64) -> f64 {
    PLANCK * splitting_hz / (BOHR_MAGNETON * b)
}

/// Physical constants of one dot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub species: ChargeSpecies,
    /// Tesla.
    pub b_field: f64,
    pub g_hole: f64,
    pub g_electron: f64,
    /// Mean optical transition, rad/s. Only enters through detunings.
    pub trion_frequency: f64,
    /// Spontaneous emission rate of each trion state, 1/s.
    pub gamma_sp: f64,
    /// Fraction of each trion's decay into the ground state on its H (vertical) leg.
    pub decay_branching: f64,
    /// dω_L/dV, rad/s per volt.
    pub larmor_bias_slope: f64,
    /// Calibration anchor voltage.
    pub bias_ref: f64,
    /// ω_L at `bias_ref`; `None` uses the ground Zeeman splitting.
    pub larmor_ref: Option<f64>,
    /// Allowed bias interval, volts.
    pub bias_range: (f64, f64),
    /// Operating bias, volts.
    pub bias: f64,
}

impl Default for SpinSystem {
    fn default() -> Self {
        let b = 8.0;
        SpinSystem {
            species: ChargeSpecies::Hole,
            b_field: b,
            g_hole: g_factor_for_splitting(30.2e9, b),
            g_electron: g_factor_for_splitting(35.0e9, b),
            trion_frequency: TWO_PI * 325.9e12,
            gamma_sp: 1.0e9,
            decay_branching: 0.5,
            // π phase difference between 1.55 V and 1.65 V after 2.3 ns.
            larmor_bias_slope: std::f64::consts::PI / 2.3e-9 / 0.1,
            bias_ref: 1.60,
            larmor_ref: None,
            bias_range: (1.0, 2.2),
            bias: 1.60,
        }
    }
}

impl SpinSystem {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_field >= 0.0) {
            return Err(Error::Config(format!("b_field must be >= 0, got {}", self.b_field)));
        }
        if !(self.gamma_sp > 0.0) {
            return Err(Error::Config(format!("gamma_sp must be > 0, got {}", self.gamma_sp)));
        }
        if !(0.0..=1.0).contains(&self.decay_branching) {
            return Err(Error::Config(format!(
                "decay_branching must lie in [0, 1], got {}",
                self.decay_branching
            )));
        }
        let (lo, hi) = self.bias_range;
        if !(lo <= hi) {
            return Err(Error::Config(format!("empty bias range [{lo}, {hi}]")));
        }
        self.larmor_frequency(self.bias)?;
        Ok(())
    }

    /// g-factor of the qubit carrier.
    pub fn ground_g(&self) -> f64 {
        match self.species {
            ChargeSpecies::Hole => self.g_hole,
            ChargeSpecies::Electron => self.g_electron,
        }
    }

    /// g-factor of the unpaired carrier in the trion.
    pub fn trion_g(&self) -> f64 {
        match self.species {
            ChargeSpecies::Hole => self.g_electron,
            ChargeSpecies::Electron => self.g_hole,
        }
    }

    /// Ground Zeeman splitting at zero bias offset (δ_HH for holes).
    pub fn ground_zeeman(&self) -> f64 {
        zeeman_splitting(self.ground_g(), self.b_field)
    }

    /// Trion Zeeman splitting (δ_e for holes).
    pub fn trion_splitting(&self) -> f64 {
        zeeman_splitting(self.trion_g(), self.b_field)
    }

    /// Larmor frequency at the operating bias; this is the ground splitting
    /// used by the Hamiltonian.
    pub fn ground_splitting(&self) -> f64 {
        self.larmor_at(self.bias)
    }

    fn larmor_at(&self, bias: f64) -> f64 {
        let anchor = self.larmor_ref.unwrap_or_else(|| self.ground_zeeman());
        anchor + self.larmor_bias_slope * (bias - self.bias_ref)
    }

    /// Bias-dependent Larmor frequency, linear about the calibration anchor.
    pub fn larmor_frequency(&self, bias: f64) -> Result<f64> {
        let (min, max) = self.bias_range;
        if !(bias >= min && bias <= max) {
            return Err(Error::Range { quantity: "bias", value: bias, min, max });
        }
        Ok(self.larmor_at(bias))
    }

    /// Same system with the operating bias moved.
    pub fn at_bias(&self, bias: f64) -> Result<SpinSystem> {
        self.larmor_frequency(bias)?;
        Ok(SpinSystem { bias, ..self.clone() })
    }
}

/// Free function form used by the experiment layer.
pub fn larmor_frequency(sys: &SpinSystem, bias: f64) -> Result<f64> {
    sys.larmor_frequency(bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Polarization {
    #[default]
    #[serde(rename = "sigma+")]
    SigmaPlus,
    #[serde(rename = "sigma-")]
    SigmaMinus,
    H,
    V,
}

impl Polarization {
    pub const ALL: [Polarization; 4] =
        [Polarization::SigmaPlus, Polarization::SigmaMinus, Polarization::H, Polarization::V];

    fn index(self) -> usize {
        match self {
            Polarization::SigmaPlus => 0,
            Polarization::SigmaMinus => 1,
            Polarization::H => 2,
            Polarization::V => 3,
        }
    }
}

/// Optical coupling operators `V_p = Σ c_gt |t⟩⟨g| + h.c.` for each polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRules {
    coupling: [Matrix4<C64>; 4],
}

impl SelectionRules {
    /// Idealized Voigt rules: H drives the vertical legs (`⇓–T↓`, `⇑–T↑`),
    /// V the diagonal legs, and circular light is their equal superposition so
    /// that σ± couple one optical-axis ground state to one optical-axis trion.
    /// `imbalance` scales the diagonal legs by `1 - imbalance` as a
    /// phenomenological stand-in for heavy/light-hole mixing.
    pub fn voigt(imbalance: f64) -> Result<SelectionRules> {
        if !(0.0..=1.0).contains(&imbalance) {
            return Err(Error::SelectionRules(format!("imbalance {imbalance} outside [0, 1]")));
        }
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let d = a * (1.0 - imbalance);
        let h = Matrix2::new(C64::new(a, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(a, 0.0));
        let v = Matrix2::new(C64::new(0.0, 0.0), C64::new(d, 0.0), C64::new(d, 0.0), C64::new(0.0, 0.0));
        let plus = (h + v) * C64::new(a, 0.0);
        let minus = (h - v) * C64::new(a, 0.0);
        SelectionRules::from_blocks([plus, minus, h, v])
    }

    /// Build from ground×trion amplitude blocks, indexed `[ground][trion]`,
    /// in the order σ+, σ−, H, V.
    pub fn from_blocks(blocks: [Matrix2<C64>; 4]) -> Result<SelectionRules> {
        let mut coupling = [Matrix4::zeros(); 4];
        for (op, block) in coupling.iter_mut().zip(blocks.iter()) {
            for g in 0..2 {
                for t in 0..2 {
                    let c = block[(g, t)];
                    op[(2 + t, g)] = c;
                    op[(g, 2 + t)] = c.conj();
                }
            }
        }
        SelectionRules::from_matrices(coupling)
    }

    /// Build from full 4×4 coupling operators, checking the double-Λ structure.
    pub fn from_matrices(coupling: [Matrix4<C64>; 4]) -> Result<SelectionRules> {
        for op in &coupling {
            let residual = (op - op.adjoint()).norm();
            if residual > 1e-12 {
                return Err(Error::NonHermitian(residual));
            }
            for i in 0..4 {
                for j in 0..4 {
                    let same_manifold = (i < 2) == (j < 2);
                    let amp = op[(i, j)].norm();
                    if same_manifold && amp != 0.0 {
                        return Err(Error::SelectionRules(format!(
                            "direct coupling between states {i} and {j} within one manifold"
                        )));
                    }
                    if amp > 1.0 + 1e-12 {
                        return Err(Error::SelectionRules(format!("amplitude {amp} exceeds 1")));
                    }
                }
            }
        }
        let rules = SelectionRules { coupling };
        // Every trion must be reachable from both ground states with some polarization.
        for t in 2..4 {
            for g in 0..2 {
                if rules.coupling.iter().all(|op| op[(t, g)].norm() == 0.0) {
                    return Err(Error::SelectionRules(format!(
                        "trion {t} does not couple to ground state {g}"
                    )));
                }
            }
        }
        Ok(rules)
    }

    pub fn coupling(&self, pol: Polarization) -> &Matrix4<C64> {
        &self.coupling[pol.index()]
    }

    /// Amplitude of the `ground`–`trion` leg for a polarization.
    pub fn amplitude(&self, pol: Polarization, ground: usize, trion: usize) -> C64 {
        self.coupling[pol.index()][(trion, ground)]
    }
}

impl Default for SelectionRules {
    fn default() -> Self {
        SelectionRules::voigt(0.0).expect("ideal rules are valid")
    }
}

/// Instantaneous optical field seen in the frame co-rotating with its carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveField {
    /// Mean trion frequency minus carrier frequency, rad/s.
    pub detuning: f64,
    /// Rabi frequency Ω(t), rad/s; the coupling term is `Ω/2 · V_p`.
    pub rabi: f64,
    pub polarization: Polarization,
}

impl DriveField {
    pub fn off(detuning: f64) -> DriveField {
        DriveField { detuning, rabi: 0.0, polarization: Polarization::SigmaPlus }
    }
}

/// Rotating-frame Hamiltonian (rad/s): ground levels at `∓ω_L/2`, trions at
/// `Δ ∓ δ_e/2`, plus the dipole coupling.
pub fn build_hamiltonian(sys: &SpinSystem, rules: &SelectionRules, drive: &DriveField) -> Result<Matrix4<C64>> {
    if !drive.detuning.is_finite() || !drive.rabi.is_finite() {
        return Err(Error::Domain("drive detuning and amplitude must be finite".into()));
    }
    Ok(hamiltonian_unchecked(sys.ground_splitting(), sys.trion_splitting(), rules, drive))
}

pub(crate) fn hamiltonian_unchecked(
    ground_splitting: f64,
    trion_splitting: f64,
    rules: &SelectionRules,
    drive: &DriveField,
) -> Matrix4<C64> {
    let mut h = rules.coupling(drive.polarization) * C64::new(0.5 * drive.rabi, 0.0);
    h[(DOWN, DOWN)] += -0.5 * ground_splitting;
    h[(UP, UP)] += 0.5 * ground_splitting;
    h[(TRION_DOWN, TRION_DOWN)] += drive.detuning - 0.5 * trion_splitting;
    h[(TRION_UP, TRION_UP)] += drive.detuning + 0.5 * trion_splitting;
    h
}
