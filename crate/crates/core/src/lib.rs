//! Tight-binding NEGF transport through a carbon nanotorus with two metallic leads.

mod blockops;
pub mod analysis;
pub mod config;
pub mod constants;
pub mod device;
pub mod greens;
pub mod hamiltonian;
pub mod lattice;
pub mod leads;
pub mod observables;
pub mod sweep;
