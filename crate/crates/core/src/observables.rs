//! Density of states, transmission, source–drain current and the small
//! analytic helpers used to interpret sweeps.
//!
//! Broadenings enter as `Γ = 2πi(Σ − Σ†)` on each lead's four contacts; the
//! two leads together span an eight-dimensional contact subspace. All
//! observables are built from the contact columns of the retarded Green's
//! function only.

use std::f64::consts::PI;

use thiserror::Error;

use crate::constants::{FLUX_QUANTUM, HBAR2_OVER_2ME};
use crate::greens::{ContactBlock, ContactView, CONTACTS};
use crate::leads::{ContactMatrix, ContactSelfEnergy};

/// Thermal energy of the bias runs, in eV.
pub const DEFAULT_KT: f64 = 0.030;

/// Negative transmission down to this value is rounding noise and clamped to zero.
pub const TRANSMISSION_CLAMP: f64 = 1e-12;

/// Half-width of the Fermi window, in units of kT, the grid should cover.
pub const FERMI_WINDOW_KT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("Green's function at E = {greens} eV combined with broadening at E = {gamma} eV")]
    EnergyMismatch { greens: f64, gamma: f64 },
    #[error("transmission {value:.3e} at E = {energy} eV is negative beyond rounding")]
    NegativeTransmission { energy: f64, value: f64 },
    #[error("energy grid [{e_min}, {e_max}] does not contain the bias window [{need_min}, {need_max}]")]
    GridCoverage { e_min: f64, e_max: f64, need_min: f64, need_max: f64 },
    #[error("invalid energy grid: {0}")]
    InvalidGrid(String),
    #[error("{values} transmission values for a grid of {points} points")]
    TableLength { values: usize, points: usize },
    #[error("invalid bias: {0}")]
    InvalidBias(String),
    #[error("interference estimate needs E > 0 and R > 0 (E = {energy}, R = {radius})")]
    InvalidEstimate { energy: f64, radius: f64 },
}

/// Symmetric source–drain bias `μ_L = +V/2`, `μ_R = −V/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasConfig {
    pub v_sd: f64,
    pub kt: f64,
}

impl BiasConfig {
    pub fn new(v_sd: f64, kt: f64) -> Result<Self, ObservableError> {
        if !v_sd.is_finite() {
            return Err(ObservableError::InvalidBias(format!("V_SD = {v_sd}")));
        }
        if !(kt > 0.0 && kt.is_finite()) {
            return Err(ObservableError::InvalidBias(format!("kT = {kt} must be positive")));
        }
        Ok(Self { v_sd, kt })
    }

    pub fn mu_left(&self) -> f64 {
        0.5 * self.v_sd
    }

    pub fn mu_right(&self) -> f64 {
        -0.5 * self.v_sd
    }
}

/// Uniform energy grid including both end points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGrid {
    pub e_min: f64,
    pub e_max: f64,
    pub step: f64,
}

impl Default for EnergyGrid {
    fn default() -> Self {
        Self { e_min: -0.2, e_max: 0.2, step: 5e-5 }
    }
}

impl EnergyGrid {
    pub fn new(e_min: f64, e_max: f64, step: f64) -> Result<Self, ObservableError> {
        let grid = Self { e_min, e_max, step };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid of `points` energies from `e_min` to `e_max`.
    pub fn with_points(e_min: f64, e_max: f64, points: usize) -> Result<Self, ObservableError> {
        if points < 2 {
            if points == 1 && e_min == e_max {
                return Ok(Self { e_min, e_max, step: 0.0 });
            }
            return Err(ObservableError::InvalidGrid(format!("{points} points from {e_min} to {e_max}")));
        }
        Self::new(e_min, e_max, (e_max - e_min) / (points - 1) as f64)
    }

    pub fn validate(&self) -> Result<(), ObservableError> {
        let bad = |m: String| Err(ObservableError::InvalidGrid(m));
        if !(self.e_min.is_finite() && self.e_max.is_finite() && self.step.is_finite()) {
            return bad("non-finite bounds or step".into());
        }
        if self.e_min == self.e_max {
            return Ok(());
        }
        if !(self.e_max > self.e_min && self.step > 0.0) {
            return bad(format!("need e_min < e_max and step > 0 (got {}, {}, {})", self.e_min, self.e_max, self.step));
        }
        let intervals = (self.e_max - self.e_min) / self.step;
        if (intervals - intervals.round()).abs() > 1e-6 * intervals.max(1.0) {
            return bad(format!("step {} does not divide [{}, {}]", self.step, self.e_min, self.e_max));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.e_min == self.e_max {
            1
        } else {
            ((self.e_max - self.e_min) / self.step).round() as usize + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The `i`-th energy; a grid symmetric about zero yields exactly opposite pairs.
    pub fn energy(&self, i: usize) -> f64 {
        let n = self.len();
        if n == 1 {
            return self.e_min;
        }
        let last = (n - 1) as f64;
        (self.e_min * (last - i as f64) + self.e_max * i as f64) / last
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.energy(i)).collect()
    }
}

/// Conversion of the axial field into a flux ratio, `Φ/Φ₀ = B / b_per_phi0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxConvention {
    pub b_per_phi0: f64,
}

impl Default for FluxConvention {
    fn default() -> Self {
        Self { b_per_phi0: 0.026 }
    }
}

impl FluxConvention {
    /// One flux quantum through the disc of radius `major_radius` (Å).
    pub fn geometric(major_radius: f64) -> Self {
        Self { b_per_phi0: FLUX_QUANTUM / (PI * major_radius * major_radius) }
    }
}

pub fn flux_ratio(b: f64, conv: FluxConvention) -> f64 {
    b / conv.b_per_phi0
}

/// Site-resolved `diag[G (Γ_L + Γ_R) G†]` and its sum, in eV⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOfStates {
    pub per_site: Vec<f64>,
    pub total: f64,
}

fn check_energy(g: &impl ContactView, gamma: &ContactSelfEnergy) -> Result<(), ObservableError> {
    if (g.energy() - gamma.energy).abs() > 1e-12 {
        return Err(ObservableError::EnergyMismatch { greens: g.energy(), gamma: gamma.energy });
    }
    Ok(())
}

/// `Γ_L ⊕ Γ_R` on the joint contact subspace (left contacts first).
fn joint_gamma(left: &ContactMatrix, right: &ContactMatrix) -> ContactBlock {
    let mut gamma = ContactBlock::zeros();
    gamma.fixed_view_mut::<4, 4>(0, 0).copy_from(left);
    gamma.fixed_view_mut::<4, 4>(4, 4).copy_from(right);
    gamma
}

pub fn density_of_states(
    g: &impl ContactView,
    left: &ContactSelfEnergy,
    right: &ContactSelfEnergy,
) -> Result<DensityOfStates, ObservableError> {
    check_energy(g, left)?;
    check_energy(g, right)?;
    let gamma = joint_gamma(&left.gamma, &right.gamma);
    let cols = g.contact_columns();
    let per_site: Vec<f64> = (0..cols.nrows())
        .map(|i| {
            let row: [_; CONTACTS] = std::array::from_fn(|p| cols[(i, p)]);
            let mut d = 0.0;
            for p in 0..CONTACTS {
                for q in 0..CONTACTS {
                    d += (row[p] * gamma[(p, q)] * row[q].conj()).re;
                }
            }
            d
        })
        .collect();
    let total = per_site.iter().sum();
    Ok(DensityOfStates { per_site, total })
}

/// `Tr[Γ_L G Γ_R G†]` with `G` the left-contact × right-contact block.
pub fn transmission(
    g: &impl ContactView,
    left: &ContactSelfEnergy,
    right: &ContactSelfEnergy,
) -> Result<f64, ObservableError> {
    check_energy(g, left)?;
    check_energy(g, right)?;
    let block = g.contact_block();
    let g_lr = block.fixed_view::<4, 4>(0, 4);
    let t = (left.gamma * g_lr * right.gamma * g_lr.adjoint()).trace().re;
    if t >= 0.0 {
        Ok(t)
    } else if t >= -TRANSMISSION_CLAMP {
        Ok(0.0)
    } else {
        Err(ObservableError::NegativeTransmission { energy: g.energy(), value: t })
    }
}

/// Fermi–Dirac occupation, saturating without overflow.
pub fn fermi(energy: f64, mu: f64, kt: f64) -> f64 {
    let x = (energy - mu) / kt;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `ln(1 + eʸ)` without overflow.
fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

/// `∫ [f(E, μ_L) − f(E, μ_R)] dE` from `a` to `+∞`.
fn window_above(a: f64, bias: &BiasConfig) -> f64 {
    let kt = bias.kt;
    kt * (softplus(-(a - bias.mu_left()) / kt) - softplus(-(a - bias.mu_right()) / kt))
}

/// Landauer current `∫ T(E) [f(E, μ_L) − f(E, μ_R)] dE` in units of (2e/h)·eV.
///
/// Trapezoidal quadrature over the grid. Beyond the grid ends the
/// transmission is held at its edge value and the Fermi window is integrated
/// in closed form, so a grid narrower than the thermal tails still converges
/// to the right limit. The grid must contain the bias window itself.
pub fn current(t_of_e: &[f64], grid: &EnergyGrid, bias: &BiasConfig) -> Result<f64, ObservableError> {
    let n = grid.len();
    if t_of_e.len() != n {
        return Err(ObservableError::TableLength { values: t_of_e.len(), points: n });
    }
    if bias.v_sd == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = (bias.mu_left().min(bias.mu_right()), bias.mu_left().max(bias.mu_right()));
    if grid.e_min > lo || grid.e_max < hi || n < 2 {
        return Err(ObservableError::GridCoverage { e_min: grid.e_min, e_max: grid.e_max, need_min: lo, need_max: hi });
    }
    let window = |e: f64| fermi(e, bias.mu_left(), bias.kt) - fermi(e, bias.mu_right(), bias.kt);
    let mut sum = 0.0;
    let mut prev = t_of_e[0] * window(grid.energy(0));
    for (i, &t) in t_of_e.iter().enumerate().skip(1) {
        let next = t * window(grid.energy(i));
        sum += 0.5 * (grid.energy(i) - grid.energy(i - 1)) * (prev + next);
        prev = next;
    }
    let below = bias.v_sd - window_above(grid.e_min, bias);
    let above = window_above(grid.e_max, bias);
    Ok(sum + t_of_e[0] * below + t_of_e[n - 1] * above)
}

/// True when the grid reaches `FERMI_WINDOW_KT`·kT beyond both chemical potentials.
pub fn covers_thermal_window(grid: &EnergyGrid, bias: &BiasConfig) -> bool {
    let pad = FERMI_WINDOW_KT * bias.kt;
    let (lo, hi) = (bias.mu_left().min(bias.mu_right()), bias.mu_left().max(bias.mu_right()));
    grid.e_min <= lo - pad && grid.e_max >= hi + pad
}

/// Free-electron wavelength at `energy` (eV) and the opening-angle spacing
/// `360° · (λ/2) / (2πR)` of interference extrema on a ring of radius
/// `radius` (Å). Returns `(λ in nm, Δα in degrees)`.
pub fn interference_estimate(energy: f64, radius: f64) -> Result<(f64, f64), ObservableError> {
    if !(energy > 0.0 && radius > 0.0) {
        return Err(ObservableError::InvalidEstimate { energy, radius });
    }
    let k = (energy / HBAR2_OVER_2ME).sqrt();
    let lambda = 2.0 * PI / k;
    let delta_alpha = 360.0 * (0.5 * lambda) / (2.0 * PI * radius);
    Ok((lambda / 10.0, delta_alpha))
}
