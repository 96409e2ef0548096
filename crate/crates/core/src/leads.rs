//! Semi-infinite metallic leads: analytic surface Green's function on the
//! lead's first layer, contact self-energies and broadening matrices.
//!
//! Each lead is a rectangular wire of cross-section `L_y × L_z` discretized
//! with spacing `a` along its axis and across it, so the transverse basis is
//! the `(L_y/a − 1) × (L_z/a − 1)` set of particle-in-a-box modes. Every mode
//! contributes a 1D semi-infinite chain whose surface Green's function is
//! written through the reduced energy
//! `α_mn = (E + E_F − E_mn)/t − 1` with `t = ħ²/(m a²)`.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;
use thiserror::Error;

use crate::constants::HBAR2_OVER_2ME;
use crate::lattice::AtomSite;

/// Relative size of the omitted-mode tail that still counts as converged.
pub const MODE_TAIL_TOL: f64 = 1e-10;

pub type ContactMatrix = Matrix4<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeadError {
    #[error("lead geometry invalid: {0}")]
    InvalidGeometry(String),
    #[error("contact ({y}, {z}) Å lies outside the {ly} × {lz} Å cross-section")]
    ContactOutside { y: f64, z: f64, ly: f64, lz: f64 },
    #[error("mode sum truncated at cutoff {cutoff} leaves a tail of {tail_bound:e} (relative), above {MODE_TAIL_TOL:e}")]
    ModeSumNotConverged { cutoff: usize, tail_bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadParams {
    /// Fermi energy of the metal in eV, measured from the tube Fermi level.
    pub fermi_energy: f64,
    /// Lattice spacing `a` of the lead in Å.
    pub spacing: f64,
    pub width_y: f64,
    pub width_z: f64,
    /// Highest transverse quantum number kept per direction. `None` keeps the
    /// complete transverse basis.
    pub mode_cutoff: Option<usize>,
}

impl Default for LeadParams {
    fn default() -> Self {
        Self { fermi_energy: 6.0, spacing: 2.5, width_y: 10.0, width_z: 10.0, mode_cutoff: None }
    }
}

impl LeadParams {
    pub fn validate(&self) -> Result<(), LeadError> {
        if !(self.spacing > 0.0 && self.width_y > self.spacing && self.width_z > self.spacing) {
            return Err(LeadError::InvalidGeometry(format!(
                "need widths > spacing > 0 (a={}, Ly={}, Lz={})",
                self.spacing, self.width_y, self.width_z
            )));
        }
        if !self.fermi_energy.is_finite() {
            return Err(LeadError::InvalidGeometry("fermi energy must be finite".into()));
        }
        if self.mode_cutoff == Some(0) {
            return Err(LeadError::InvalidGeometry("mode cutoff must be at least 1".into()));
        }
        Ok(())
    }

    /// Hopping scale `t = ħ²/(m a²)` in eV.
    pub fn hopping_scale(&self) -> f64 {
        2.0 * HBAR2_OVER_2ME / (self.spacing * self.spacing)
    }

    /// Size of the complete transverse basis in each direction.
    pub fn transverse_basis(&self) -> (usize, usize) {
        let count = |w: f64| ((w / self.spacing).round() as usize).saturating_sub(1).max(1);
        (count(self.width_y), count(self.width_z))
    }

    /// Quantum numbers actually summed in each direction.
    pub fn mode_limits(&self) -> (usize, usize) {
        let (ny, nz) = self.transverse_basis();
        match self.mode_cutoff {
            Some(m) => (ny.min(m), nz.min(m)),
            None => (ny, nz),
        }
    }

    /// `−8 m a / ħ² / (L_y L_z)` in 1/(eV·Å³).
    fn prefactor(&self) -> f64 {
        -8.0 * self.spacing / (2.0 * HBAR2_OVER_2ME) / (self.width_y * self.width_z)
    }

    fn check_point(&self, (y, z): (f64, f64)) -> Result<(), LeadError> {
        if y > 0.0 && y < self.width_y && z > 0.0 && z < self.width_z {
            Ok(())
        } else {
            Err(LeadError::ContactOutside { y, z, ly: self.width_y, lz: self.width_z })
        }
    }
}

/// Particle-in-a-box energy of transverse mode `(m, n)`, `m, n ≥ 1`.
pub fn mode_energy(m: usize, n: usize, params: &LeadParams) -> f64 {
    let (m, n) = (m as f64, n as f64);
    HBAR2_OVER_2ME * PI * PI * (m * m / (params.width_y * params.width_y) + n * n / (params.width_z * params.width_z))
}

/// `√(α² − 1) − α` on the retarded branch: the root is `+i√(1 − α²)` inside
/// the band and the decaying root outside it, so the bracket always has
/// modulus at most one.
pub fn mode_bracket(alpha: f64) -> Complex64 {
    if alpha.abs() <= 1.0 {
        Complex64::new(-alpha, (1.0 - alpha * alpha).sqrt())
    } else {
        let root = (alpha * alpha - 1.0).sqrt();
        // −sign(α) / (|α| + √(α² − 1)), written without cancellation
        Complex64::new(-alpha.signum() / (alpha.abs() + root), 0.0)
    }
}

fn reduced_energy(energy: f64, mode_energy: f64, params: &LeadParams) -> f64 {
    (energy + params.fermi_energy - mode_energy) / params.hopping_scale() - 1.0
}

fn transverse_amplitude(m: usize, n: usize, (y, z): (f64, f64), params: &LeadParams) -> f64 {
    (m as f64 * PI * y / params.width_y).sin() * (n as f64 * PI * z / params.width_z).sin()
}

/// Surface Green's function `g(E; r_t, r_s)` between two transverse points of
/// the lead's first layer (1/(eV·Å³)).
pub fn surface_green(energy: f64, r_t: (f64, f64), r_s: (f64, f64), params: &LeadParams) -> Result<Complex64, LeadError> {
    params.validate()?;
    params.check_point(r_t)?;
    params.check_point(r_s)?;
    let (my, mz) = params.mode_limits();
    let (ny, nz) = params.transverse_basis();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut tail = 0.0;
    for m in 1..=ny {
        for n in 1..=nz {
            let term = transverse_amplitude(m, n, r_t, params)
                * transverse_amplitude(m, n, r_s, params)
                * mode_bracket(reduced_energy(energy, mode_energy(m, n, params), params));
            if m <= my && n <= mz {
                sum += term;
            } else {
                tail += term.norm();
            }
        }
    }
    let g = params.prefactor() * sum;
    let tail = params.prefactor().abs() * tail;
    if tail > MODE_TAIL_TOL * g.norm().max(f64::MIN_POSITIVE) {
        return Err(LeadError::ModeSumNotConverged {
            cutoff: params.mode_cutoff.unwrap_or(0),
            tail_bound: tail / g.norm().max(f64::MIN_POSITIVE),
        });
    }
    Ok(g)
}

/// Transverse coordinates of four torus atoms on a lead attached laterally
/// at the outer equator. The lead's `y` axis runs along `e_φ` at the mean
/// contact azimuth, its `z` axis along the torus axis, and the contact
/// footprint is centred in the cross-section.
pub fn project_contacts(sites: [&AtomSite; 4], params: &LeadParams) -> [(f64, f64); 4] {
    let (s, c) = sites.iter().fold((0.0, 0.0), |(s, c), site| (s + site.phi.sin(), c + site.phi.cos()));
    let phi_c = s.atan2(c);
    let tangent = (-phi_c.sin(), phi_c.cos());
    sites.map(|site| {
        let p = site.position;
        let y = p.x * tangent.0 + p.y * tangent.1;
        (0.5 * params.width_y + y, 0.5 * params.width_z + p.z)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSelfEnergy {
    pub sigma: ContactMatrix,
    pub gamma: ContactMatrix,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    quanta: (usize, usize),
    energy: f64,
    amplitude: [f64; 4],
}

/// A lead with its four contact points and precomputed transverse mode data.
#[derive(Debug, Clone)]
pub struct LeadModel {
    params: LeadParams,
    contacts: [(f64, f64); 4],
    modes: Vec<Mode>,
}

impl LeadModel {
    pub fn new(params: LeadParams, contacts: [(f64, f64); 4]) -> Result<Self, LeadError> {
        params.validate()?;
        for &c in &contacts {
            params.check_point(c)?;
        }
        let (ny, nz) = params.transverse_basis();
        let mut modes = Vec::with_capacity(ny * nz);
        for m in 1..=ny {
            for n in 1..=nz {
                modes.push(Mode {
                    quanta: (m, n),
                    energy: mode_energy(m, n, &params),
                    amplitude: contacts.map(|c| transverse_amplitude(m, n, c, &params)),
                });
            }
        }
        let mut model = Self { params, contacts, modes };
        let (my, mz) = params.mode_limits();
        if (my, mz) != (ny, nz) {
            // a truncated sum is accepted only when the dropped modes do not matter
            let kept = |mode: &Mode| mode.quanta.0 <= my && mode.quanta.1 <= mz;
            let full = model.green_matrix_filtered(0.0, |_| true);
            let cut = model.green_matrix_filtered(0.0, kept);
            let scale = full.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let tail = (full - cut).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
            if tail > MODE_TAIL_TOL {
                return Err(LeadError::ModeSumNotConverged { cutoff: my.max(mz), tail_bound: tail });
            }
            model.modes.retain(kept);
        }
        Ok(model)
    }

    pub fn params(&self) -> &LeadParams {
        &self.params
    }

    pub fn contacts(&self) -> &[(f64, f64); 4] {
        &self.contacts
    }

    fn green_matrix_filtered(&self, energy: f64, keep: impl Fn(&Mode) -> bool) -> ContactMatrix {
        let mut g = ContactMatrix::zeros();
        for mode in self.modes.iter().filter(|m| keep(m)) {
            let bracket = mode_bracket(reduced_energy(energy, mode.energy, &self.params));
            for p in 0..4 {
                for q in 0..4 {
                    g[(p, q)] += mode.amplitude[p] * mode.amplitude[q] * bracket;
                }
            }
        }
        g * Complex64::from(self.params.prefactor())
    }

    /// Surface Green's function between every pair of contacts.
    pub fn contact_green(&self, energy: f64) -> ContactMatrix {
        self.green_matrix_filtered(energy, |_| true)
    }

    /// Number of transverse channels propagating at `energy`.
    pub fn open_channels(&self, energy: f64) -> usize {
        self.modes
            .iter()
            .filter(|m| reduced_energy(energy, m.energy, &self.params).abs() <= 1.0)
            .count()
    }

    /// `Σ = t_hop² g` and `Γ = 2πi(Σ − Σ†)` on the contact subspace.
    pub fn self_energy(&self, energy: f64, t_hop: f64) -> ContactSelfEnergy {
        let sigma = self.contact_green(energy) * Complex64::from(t_hop * t_hop);
        let gamma = (sigma - sigma.adjoint()) * Complex64::new(0.0, 2.0 * PI);
        ContactSelfEnergy { sigma, gamma, energy }
    }
}

/// Broadening from the imaginary part of the surface Green's function,
/// `2π V† Im[g] V` with `V = t_hop`, taken elementwise.
pub fn broadening_from_imag(g: &ContactMatrix, t_hop: f64) -> ContactMatrix {
    g.map(|z| Complex64::from(2.0 * PI * t_hop * t_hop * z.im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_torus, ContactSet, TorusGeometry};

    fn default_model() -> LeadModel {
        let sites = build_torus(&TorusGeometry::default()).unwrap();
        let params = LeadParams::default();
        LeadModel::new(params, project_contacts(ContactSet::at_layer(0).sites(&sites), &params)).unwrap()
    }

    #[test]
    fn mode_energy_examples() {
        let p = LeadParams::default();
        let e11 = mode_energy(1, 1, &p);
        assert!((e11 - 2.0 * HBAR2_OVER_2ME * PI * PI / 100.0).abs() < 1e-15);
        // independent evaluation: 2 * 3.8099821 * 9.8696044010893586 / 100
        assert!((e11 - 0.752_060_322).abs() < 1e-9);
        let wide = LeadParams { width_y: 20.0, ..p };
        let m_term = |q: &LeadParams| mode_energy(1, 1, q) - mode_energy(0, 1, q);
        assert!((m_term(&wide) - 0.25 * m_term(&p)).abs() < 1e-15);
    }

    #[test]
    fn bracket_branches() {
        assert_eq!(mode_bracket(1.0), Complex64::new(-1.0, 0.0));
        assert_eq!(mode_bracket(0.0), Complex64::new(0.0, 1.0));
        for &a in &[-50.0, -1.5, -1.0, -0.3, 0.4, 1.0, 1.7, 80.0] {
            let b = mode_bracket(a);
            assert!(b.norm() <= 1.0 + 1e-15);
            assert!(b.im >= 0.0);
            // the bracket solves b² + 2αb + 1 = 0
            assert!((b * b + 2.0 * a * b + 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn band_edge_gives_real_minus_one_bracket() {
        let p = LeadParams { width_y: 5.0, width_z: 5.0, spacing: 2.5, ..Default::default() };
        assert_eq!(p.transverse_basis(), (1, 1));
        // α = +1 for the single mode: E + E_F − E_11 = 2t
        let e = mode_energy(1, 1, &p) + 2.0 * p.hopping_scale() - p.fermi_energy;
        let r = (2.5, 2.5);
        let g = surface_green(e, r, r, &p).unwrap();
        // rounding in α puts √(1 − α²) at the 1e-8 level at most
        assert!(g.im.abs() < 1e-7 * g.re.abs());
        assert!((g.re - (p.prefactor() * -1.0)).abs() < 1e-7 * g.re.abs());
    }

    #[test]
    fn evanescent_modes_are_real() {
        let p = LeadParams::default();
        // every mode above its band top
        let e = 40.0;
        let g = surface_green(e, (3.0, 4.0), (6.5, 5.5), &p).unwrap();
        assert!(g.im.abs() < 1e-12);
        // every mode below its band bottom
        let g = surface_green(-20.0, (3.0, 4.0), (3.0, 4.0), &p).unwrap();
        assert!(g.im.abs() < 1e-12);
    }

    /// Lopez Sancho decimation for a 1D chain with on-site `eps` and hopping `-tau`.
    fn decimated_chain(energy: f64, eps: f64, tau: f64) -> Complex64 {
        let z = Complex64::new(energy, 1e-13);
        let (mut es, mut e) = (Complex64::from(eps), Complex64::from(eps));
        let (mut a, mut b) = (Complex64::from(-tau), Complex64::from(-tau));
        for _ in 0..200 {
            let g = 1.0 / (z - e);
            es += a * g * b;
            e += a * g * b + b * g * a;
            let (na, nb) = (a * g * a, b * g * b);
            a = na;
            b = nb;
            if a.norm() < 1e-300 || b.norm() < 1e-300 {
                break;
            }
        }
        1.0 / (z - es)
    }

    #[test]
    fn single_open_mode_matches_decimation() {
        let p = LeadParams::default();
        let energy = 1.2 - p.fermi_energy;
        let (ry, rz) = ((4.3, 5.6), (6.1, 4.4));
        let t = p.hopping_scale();
        let (ny, nz) = p.transverse_basis();
        let mut expected = Complex64::new(0.0, 0.0);
        let mut open = 0;
        for m in 1..=ny {
            for n in 1..=nz {
                let emn = mode_energy(m, n, &p);
                let alpha = reduced_energy(energy, emn, &p);
                if alpha.abs() < 1.0 {
                    open += 1;
                    assert!(alpha.abs() < 0.9, "not mid-band");
                }
                let chain = decimated_chain(energy + p.fermi_energy, emn + t, 0.5 * t);
                let amp = transverse_amplitude(m, n, ry, &p) * transverse_amplitude(m, n, rz, &p);
                expected += 4.0 / (p.spacing * p.width_y * p.width_z) * amp * chain;
            }
        }
        assert_eq!(open, 1);
        let g = surface_green(energy, ry, rz, &p).unwrap();
        assert!((g - expected).norm() <= 1e-8 * expected.norm(), "{g} vs {expected}");
    }

    #[test]
    fn surface_green_is_symmetric() {
        let p = LeadParams::default();
        for e in [-1.0, -0.2, 0.0, 0.37, 1.0] {
            let a = surface_green(e, (3.1, 6.2), (5.5, 4.0), &p).unwrap();
            let b = surface_green(e, (5.5, 4.0), (3.1, 6.2), &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn contacts_inside_cross_section() {
        let p = LeadParams::default();
        assert!(matches!(
            surface_green(0.0, (0.0, 5.0), (5.0, 5.0), &p),
            Err(LeadError::ContactOutside { .. })
        ));
        let m = default_model();
        for &(y, z) in m.contacts() {
            assert!(y > 0.0 && y < 10.0 && z > 0.0 && z < 10.0);
        }
        // footprint is centred on the cross-section
        let mean_z: f64 = m.contacts().iter().map(|c| c.1).sum::<f64>() / 4.0;
        assert!((mean_z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn both_leads_see_the_same_footprint() {
        let sites = build_torus(&TorusGeometry::default()).unwrap();
        let p = LeadParams::default();
        let a = project_contacts(ContactSet::at_layer(0).sites(&sites), &p);
        let b = project_contacts(ContactSet::at_layer(75).sites(&sites), &p);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_beyond_full_basis_is_exact_and_tail_is_flagged() {
        let p = LeadParams::default();
        let (ny, _) = p.transverse_basis();
        let coarse = LeadParams { mode_cutoff: Some(ny), ..p };
        let fine = LeadParams { mode_cutoff: Some(ny + ny / 2 + 1), ..p };
        for e in [-0.8, 0.0, 0.6] {
            let a = surface_green(e, (4.0, 4.0), (5.0, 6.0), &coarse).unwrap();
            let b = surface_green(e, (4.0, 4.0), (5.0, 6.0), &fine).unwrap();
            assert!((a - b).norm() <= 1e-10 * a.norm());
        }
        let short = LeadParams { mode_cutoff: Some(1), ..p };
        match surface_green(0.0, (4.0, 4.0), (5.0, 6.0), &short) {
            Err(LeadError::ModeSumNotConverged { tail_bound, .. }) => assert!(tail_bound > 1e-10),
            other => panic!("expected tail flag, got {other:?}"),
        }
        let sites = build_torus(&TorusGeometry::default()).unwrap();
        let contacts = project_contacts(ContactSet::at_layer(0).sites(&sites), &short);
        assert!(LeadModel::new(short, contacts).is_err());
    }

    #[test]
    fn model_matches_pointwise_formula() {
        let m = default_model();
        let g = m.contact_green(0.13);
        for p in 0..4 {
            for q in 0..4 {
                let direct = surface_green(0.13, m.contacts()[p], m.contacts()[q], m.params()).unwrap();
                assert!((g[(p, q)] - direct).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn self_energy_scaling_and_zero_coupling() {
        let m = default_model();
        let zero = m.self_energy(0.1, 0.0);
        assert_eq!(zero.sigma, ContactMatrix::zeros());
        assert_eq!(zero.gamma, ContactMatrix::zeros());
        let a = m.self_energy(0.1, -0.25);
        let b = m.self_energy(0.1, -0.5);
        assert!((b.sigma - a.sigma * Complex64::from(4.0)).norm() < 1e-15);
    }

    #[test]
    fn retarded_sign_and_gamma_psd() {
        let m = default_model();
        for k in 0..=40 {
            let e = -1.0 + 0.05 * k as f64;
            let se = m.self_energy(e, -0.25);
            for p in 0..4 {
                assert!(se.sigma[(p, p)].im <= 0.0);
            }
            assert!((se.gamma - se.gamma.adjoint()).norm() < 1e-15);
            let eig = se.gamma.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l >= -1e-12), "{eig}");
        }
        assert!(m.open_channels(0.0) > 0);
    }

    #[test]
    fn both_broadening_forms_agree_up_to_the_factor_minus_two() {
        let m = default_model();
        for e in [-0.9, -0.1, 0.0, 0.45] {
            let t_hop = -0.25;
            let se = m.self_energy(e, t_hop);
            let g = m.contact_green(e);
            // Σ − Σ† = 2i Im Σ elementwise because g is complex symmetric
            let lhs = (se.sigma - se.sigma.adjoint()) * Complex64::new(0.0, 2.0 * PI);
            let rhs = g.map(|z| Complex64::new(0.0, 2.0 * z.im)) * Complex64::new(0.0, 2.0 * PI * t_hop * t_hop);
            assert!((lhs - rhs).norm() < 1e-12);
            let alt = broadening_from_imag(&g, t_hop);
            assert!((se.gamma + alt * Complex64::from(2.0)).norm() < 1e-12);
        }
    }
}
