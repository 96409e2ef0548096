//! The single table of physical constants used throughout the crate.
//!
//! Units: lengths in Å, energies in eV, magnetic fields in T. Everything
//! field-related (e/ħ, h/e) is derived from ħ expressed in eV·s.

/// Tag echoed into every run manifest so outputs can be tied to this table.
pub const CONSTANTS_VERSION: &str = "codata2018/v1";

/// ħ²/(2 m_e) in eV·Å².
pub const HBAR2_OVER_2ME: f64 = 3.809_982_1;

/// ħ in eV·s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;

/// e/ħ in 1/(T·Å²). ħ/e in V·s is numerically ħ in eV·s, and 1 m² = 1e20 Å².
pub const E_OVER_HBAR: f64 = 1.0e-20 / HBAR_EV_S;

/// Magnetic flux quantum h/e in T·Å².
pub const FLUX_QUANTUM: f64 = 2.0 * std::f64::consts::PI / E_OVER_HBAR;
