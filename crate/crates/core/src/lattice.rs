//! Atom positions of a (3,3) armchair nanotorus and the lead contact geometry.
//!
//! The tube axis is bent into the major circle: layer `i` of the torus is one
//! armchair unit cell centred on azimuth `φ_i = 2πi/n`. Each layer holds two
//! rings of six atoms. Ring 0 sits at `φ_i`, ring 1 half a layer further on.
//! Within a ring the atoms lie on the minor circle at multiples of 20°, paired
//! by circumferential bonds; every ring-0 atom bonds to the ring-1 atom 20°
//! away in the same layer and every ring-1 atom bonds to the matching ring-0
//! atom of the next layer. That gives the usual armchair coordination: two
//! intra-layer neighbours and one inter-layer neighbour per atom.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

pub const ATOMS_PER_LAYER: usize = 12;
pub const ATOMS_PER_RING: usize = 6;

/// Minor-circle angle of every slot in a layer, in degrees.
const SLOT_THETA_DEG: [f64; ATOMS_PER_LAYER] = [
    40.0, 80.0, 160.0, 200.0, 280.0, 320.0, // ring 0
    20.0, 100.0, 140.0, 220.0, 260.0, 340.0, // ring 1
];

/// Circumferential bonds inside one layer (slot pairs).
const RING_BONDS: [(usize, usize); 6] = [(0, 1), (2, 3), (4, 5), (6, 11), (7, 8), (9, 10)];

/// Slots of a layer touched by a lead: the four atoms nearest the outer
/// equator, two from each ring.
pub const CONTACT_SLOTS: [usize; 4] = [0, 5, 6, 11];

/// Default lead opening-angle window in degrees.
pub const ALPHA_RANGE_DEFAULT: AlphaRange = AlphaRange { min_deg: 45.0, max_deg: 315.0 };

const ALPHA_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid torus radii: need major radius > minor radius > 0 (got R={major}, a={minor})")]
    InvalidRadii { major: f64, minor: f64 },
    #[error("ring closure needs at least 3 layers (got {0})")]
    TooFewLayers(usize),
    #[error("site list of length {0} is not a whole number of {ATOMS_PER_LAYER}-atom layers")]
    RaggedSites(usize),
    #[error(
        "opening angle {alpha}° is not a multiple of {step}°; nearest realizable angle is {nearest}° (layer {layer})"
    )]
    AngleNotOnGrid { alpha: f64, step: f64, nearest: f64, layer: usize },
    #[error("opening angle {alpha}° outside allowed range [{min}°, {max}°]")]
    AngleOutOfRange { alpha: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGeometry {
    /// Major radius R in Å.
    pub major_radius: f64,
    /// Minor radius a in Å.
    pub minor_radius: f64,
    pub n_layers: usize,
}

impl Default for TorusGeometry {
    /// 116 Å central diameter, 4 Å tube width, 150 layers (1800 atoms).
    fn default() -> Self {
        Self { major_radius: 58.0, minor_radius: 2.0, n_layers: 150 }
    }
}

impl TorusGeometry {
    pub fn new(major_radius: f64, minor_radius: f64, n_layers: usize) -> Result<Self, LatticeError> {
        let geom = Self { major_radius, minor_radius, n_layers };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        if !(self.minor_radius > 0.0 && self.major_radius > self.minor_radius) {
            return Err(LatticeError::InvalidRadii { major: self.major_radius, minor: self.minor_radius });
        }
        if self.n_layers < 3 {
            return Err(LatticeError::TooFewLayers(self.n_layers));
        }
        Ok(())
    }

    pub fn atom_count(&self) -> usize {
        self.n_layers * ATOMS_PER_LAYER
    }

    /// Angular width of one layer in degrees (the lead-angle quantum).
    pub fn layer_step_deg(&self) -> f64 {
        360.0 / self.n_layers as f64
    }

    /// Arc length between layer centres along the major circle.
    pub fn layer_arc_length(&self) -> f64 {
        2.0 * PI * self.major_radius / self.n_layers as f64
    }
}

/// Point on the torus surface at minor angle `theta` and azimuth `phi`.
pub fn torus_position(theta: f64, phi: f64, geom: &TorusGeometry) -> Vector3<f64> {
    let rho = geom.major_radius + geom.minor_radius * theta.cos();
    Vector3::new(rho * phi.cos(), rho * phi.sin(), geom.minor_radius * theta.sin())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomSite {
    pub layer: usize,
    pub slot: usize,
    pub position: Vector3<f64>,
    pub theta: f64,
    pub phi: f64,
}

impl AtomSite {
    /// Row/column of this atom in the full device matrix.
    pub fn index(&self) -> usize {
        self.layer * ATOMS_PER_LAYER + self.slot
    }
}

/// Ring (0 or 1) a slot belongs to.
pub fn slot_ring(slot: usize) -> usize {
    slot / ATOMS_PER_RING
}

pub fn build_torus(geom: &TorusGeometry) -> Result<Vec<AtomSite>, LatticeError> {
    geom.validate()?;
    let n = geom.n_layers as f64;
    let mut sites = Vec::with_capacity(geom.atom_count());
    for layer in 0..geom.n_layers {
        for (slot, theta_deg) in SLOT_THETA_DEG.iter().enumerate() {
            let theta = theta_deg.to_radians();
            let phi = 2.0 * PI * (layer as f64 + 0.5 * slot_ring(slot) as f64) / n;
            sites.push(AtomSite { layer, slot, position: torus_position(theta, phi, geom), theta, phi });
        }
    }
    Ok(sites)
}

/// Nearest-neighbour bonds of the armchair lattice as `(i, j)` site-index
/// pairs with `i < j`, derived from connectivity rather than distances.
pub fn armchair_bonds(n_layers: usize) -> Vec<(usize, usize)> {
    let idx = |layer: usize, slot: usize| layer * ATOMS_PER_LAYER + slot;
    let mut bonds = Vec::with_capacity(n_layers * 18);
    for layer in 0..n_layers {
        let next = (layer + 1) % n_layers;
        for &(a, b) in &RING_BONDS {
            bonds.push((idx(layer, a), idx(layer, b)));
        }
        for k in 0..ATOMS_PER_RING {
            bonds.push((idx(layer, k), idx(layer, ATOMS_PER_RING + k)));
            bonds.push((idx(layer, ATOMS_PER_RING + k), idx(next, k)));
        }
    }
    for b in &mut bonds {
        if b.0 > b.1 {
            *b = (b.1, b.0);
        }
    }
    bonds.sort_unstable();
    bonds
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRange {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl AlphaRange {
    /// Any layer other than the reference one.
    pub const FULL: AlphaRange = AlphaRange { min_deg: 1e-6, max_deg: 360.0 - 1e-6 };
}

/// The four atoms a lead touches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSet {
    pub layer: usize,
    pub slots: [usize; 4],
}

impl ContactSet {
    pub fn at_layer(layer: usize) -> Self {
        Self { layer, slots: CONTACT_SLOTS }
    }

    pub fn site_indices(&self) -> [usize; 4] {
        self.slots.map(|s| self.layer * ATOMS_PER_LAYER + s)
    }

    pub fn sites<'a>(&self, sites: &'a [AtomSite]) -> [&'a AtomSite; 4] {
        self.site_indices().map(|i| &sites[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadPlacement {
    /// Realized opening angle in degrees, in `[0, 360)`.
    pub alpha_deg: f64,
    pub left: ContactSet,
    pub right: ContactSet,
}

/// Snap `alpha` (degrees, any winding) onto the layer grid, rounding half
/// away from zero. Returns `(layer, realized_alpha)`.
pub fn quantize_alpha(alpha_deg: f64, n_layers: usize) -> (usize, f64) {
    let step = 360.0 / n_layers as f64;
    let wrapped = alpha_deg.rem_euclid(360.0);
    let layer = ((wrapped / step).round() as usize) % n_layers;
    (layer, layer as f64 * step)
}

/// Fix the left lead on layer 0 and rotate the right lead by `alpha_deg`.
pub fn place_leads(sites: &[AtomSite], alpha_deg: f64, range: AlphaRange) -> Result<LeadPlacement, LatticeError> {
    if sites.is_empty() || sites.len() % ATOMS_PER_LAYER != 0 {
        return Err(LatticeError::RaggedSites(sites.len()));
    }
    let n_layers = sites.len() / ATOMS_PER_LAYER;
    if n_layers < 3 {
        return Err(LatticeError::TooFewLayers(n_layers));
    }
    let step = 360.0 / n_layers as f64;
    let wrapped = alpha_deg.rem_euclid(360.0);
    let ratio = wrapped / step;
    let (layer, realized) = quantize_alpha(wrapped, n_layers);
    if (ratio - ratio.round()).abs() > ALPHA_TOL * ratio.abs().max(1.0) {
        return Err(LatticeError::AngleNotOnGrid { alpha: alpha_deg, step, nearest: realized, layer });
    }
    if realized < range.min_deg - ALPHA_TOL || realized > range.max_deg + ALPHA_TOL || layer == 0 {
        return Err(LatticeError::AngleOutOfRange { alpha: alpha_deg, min: range.min_deg, max: range.max_deg });
    }
    Ok(LeadPlacement { alpha_deg: realized, left: ContactSet::at_layer(0), right: ContactSet::at_layer(layer) })
}

/// Key=value echo of the realized geometry and lead contacts.
pub fn geometry_echo(geom: &TorusGeometry, placements: &[LeadPlacement]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "major_radius_A={}", geom.major_radius);
    let _ = writeln!(out, "minor_radius_A={}", geom.minor_radius);
    let _ = writeln!(out, "n_layers={}", geom.n_layers);
    let _ = writeln!(out, "atoms_per_layer={ATOMS_PER_LAYER}");
    let _ = writeln!(out, "atom_count={}", geom.atom_count());
    let _ = writeln!(out, "layer_step_deg={}", geom.layer_step_deg());
    let _ = writeln!(out, "contact_slots={}", join(&CONTACT_SLOTS));
    for p in placements {
        let _ = writeln!(
            out,
            "lead alpha_deg={} left_layer={} left_sites={} right_layer={} right_sites={}",
            p.alpha_deg,
            p.left.layer,
            join(&p.left.site_indices()),
            p.right.layer,
            join(&p.right.site_indices()),
        );
    }
    out
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
