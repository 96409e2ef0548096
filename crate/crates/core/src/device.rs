//! A fully assembled torus-plus-leads device for one parameter tuple
//! `(B, α, t_hop)`, evaluated energy by energy.

use thiserror::Error;

use crate::greens::{self, ContactGreens, EffectiveSystem, EmbeddedSelfEnergy, GreensError, GreensResult, DEFAULT_ETA};
use crate::hamiltonian::{self, BlockHamiltonian, FieldConfig, HamiltonianError, HoppingParams};
use crate::lattice::{self, AlphaRange, AtomSite, LatticeError, LeadPlacement, TorusGeometry, ALPHA_RANGE_DEFAULT};
use crate::leads::{project_contacts, ContactSelfEnergy, LeadError, LeadModel, LeadParams};
use crate::observables::{self, ObservableError};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Lead(#[from] LeadError),
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub geometry: TorusGeometry,
    pub hopping: HoppingParams,
    pub lead: LeadParams,
    pub b0: f64,
    pub alpha_deg: f64,
    pub alpha_range: AlphaRange,
    pub eta: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            geometry: TorusGeometry::default(),
            hopping: HoppingParams::default(),
            lead: LeadParams::default(),
            b0: 0.0,
            alpha_deg: 180.0,
            alpha_range: ALPHA_RANGE_DEFAULT,
            eta: DEFAULT_ETA,
        }
    }
}

/// Transmission and total density of states at one energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyPoint {
    pub energy: f64,
    pub transmission: f64,
    pub dos_total: f64,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub config: DeviceConfig,
    pub sites: Vec<AtomSite>,
    pub hamiltonian: BlockHamiltonian,
    pub placement: LeadPlacement,
    left: LeadModel,
    right: LeadModel,
}

impl Device {
    pub fn new(config: DeviceConfig) -> Result<Self, DeviceError> {
        let sites = lattice::build_torus(&config.geometry)?;
        // armchair connectivity; at the default geometry it coincides with the
        // nearest-neighbour shell, and it stays valid for strongly curved small tori
        let bonds = lattice::armchair_bonds(config.geometry.n_layers);
        let hamiltonian = hamiltonian::assemble_with_bonds(&sites, &bonds, &config.hopping, FieldConfig { b0: config.b0 })?;
        let placement = lattice::place_leads(&sites, config.alpha_deg, config.alpha_range)?;
        let lead = |contacts: lattice::ContactSet| {
            LeadModel::new(config.lead, project_contacts(contacts.sites(&sites), &config.lead))
        };
        let left = lead(placement.left)?;
        let right = lead(placement.right)?;
        Ok(Self { config, sites, hamiltonian, placement, left, right })
    }

    pub fn self_energies(&self, energy: f64) -> (ContactSelfEnergy, ContactSelfEnergy) {
        let t_hop = self.config.hopping.t_hop;
        (self.left.self_energy(energy, t_hop), self.right.self_energy(energy, t_hop))
    }

    pub fn system(
        &self,
        energy: f64,
        left: &ContactSelfEnergy,
        right: &ContactSelfEnergy,
    ) -> Result<EffectiveSystem<'_>, GreensError> {
        EffectiveSystem::new(
            &self.hamiltonian,
            EmbeddedSelfEnergy::new(self.placement.left, left),
            EmbeddedSelfEnergy::new(self.placement.right, right),
            self.config.eta,
            energy,
        )
    }

    /// Contact columns of `G` at `energy`.
    pub fn contact_greens(&self, energy: f64) -> Result<ContactGreens, DeviceError> {
        let (l, r) = self.self_energies(energy);
        Ok(greens::solve_contacts(&self.system(energy, &l, &r)?)?)
    }

    /// Diagonal blocks and contact columns of `G` at `energy`.
    pub fn greens(&self, energy: f64) -> Result<GreensResult, DeviceError> {
        let (l, r) = self.self_energies(energy);
        Ok(greens::solve_recursive(&self.system(energy, &l, &r)?)?)
    }

    pub fn evaluate(&self, energy: f64) -> Result<EnergyPoint, DeviceError> {
        let (l, r) = self.self_energies(energy);
        let g = greens::solve_contacts(&self.system(energy, &l, &r)?)?;
        Ok(EnergyPoint {
            energy,
            transmission: observables::transmission(&g, &l, &r)?,
            dos_total: observables::density_of_states(&g, &l, &r)?.total,
        })
    }
}
