//! Cyclic block-tridiagonal tight-binding Hamiltonian of the nanotorus.
//!
//! Storage follows the displayed block structure: layer `i` carries an
//! on-layer block `A_i`, the layer `i → i+1` coupling is stored as `V_i` with
//! `H[i+1, i] = -V_i` and `H[i, i+1] = -V_i†`, and ring closure is stored as
//! `V_c` with `H[0, n-1] = -V_c` and `H[n-1, 0] = -V_c†`.
//!
//! Hoppings carry a Peierls factor for a uniform field `B_0 e_z` in the
//! symmetric gauge `A = ½ B_0 ρ e_φ`, evaluated at the bond midpoint along the
//! straight chord.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, SMatrix, Vector3};
use num_complex::Complex64;
use thiserror::Error;

use crate::constants::E_OVER_HBAR;
use crate::lattice::{AtomSite, ATOMS_PER_LAYER};

pub const BLOCK: usize = ATOMS_PER_LAYER;
pub type Block = SMatrix<Complex64, BLOCK, BLOCK>;

/// Nearest-neighbour distance cutoff in Å (C–C bond is about 1.4 Å).
pub const NEIGHBOR_CUTOFF: f64 = 1.7;

const DUMP_MAGIC: &str = "nanotorus-hamiltonian v1";

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("site list of length {0} is not a whole number of layers")]
    RaggedSites(usize),
    #[error("need at least 3 layers, got {0}")]
    TooFewLayers(usize),
    #[error("site {site} has {count} nearest neighbours, expected 3")]
    NotThreeRegular { site: usize, count: usize },
    #[error("bond {0}-{1} couples layers that are not adjacent on the ring")]
    NonLocalBond(usize, usize),
    #[error("device hopping v must be non-zero")]
    ZeroHopping,
    #[error("malformed matrix dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoppingParams {
    /// Torus C–C hopping v in eV.
    pub v_device: f64,
    /// Lead–torus contact hopping in eV; unused by the device Hamiltonian.
    pub t_hop: f64,
    /// On-site energy in eV.
    pub onsite: f64,
}

impl Default for HoppingParams {
    fn default() -> Self {
        Self { v_device: -3.1, t_hop: -0.25, onsite: 0.0 }
    }
}

impl HoppingParams {
    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if self.v_device == 0.0 {
            return Err(HamiltonianError::ZeroHopping);
        }
        Ok(())
    }
}

/// Uniform magnetic field `b0` (T) along the torus symmetry axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldConfig {
    pub b0: f64,
}

/// Symmetric-gauge vector potential `½ B × r` at `r` (T·Å).
pub fn vector_potential(r: &Vector3<f64>, field: FieldConfig) -> Vector3<f64> {
    Vector3::new(-0.5 * field.b0 * r.y, 0.5 * field.b0 * r.x, 0.0)
}

/// Peierls factor `exp[i (e/ħ) A(r_mid)·(r_i − r_j)]` multiplying the
/// hopping `H[i, j]`.
pub fn peierls_phase(r_i: &Vector3<f64>, r_j: &Vector3<f64>, field: FieldConfig) -> Complex64 {
    let mid = 0.5 * (r_i + r_j);
    let angle = E_OVER_HBAR * vector_potential(&mid, field).dot(&(r_i - r_j));
    Complex64::from_polar(1.0, angle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHamiltonian {
    diag: Vec<Block>,
    coupling: Vec<Block>,
    corner: Block,
    b_field: f64,
}

impl BlockHamiltonian {
    pub fn from_blocks(diag: Vec<Block>, coupling: Vec<Block>, corner: Block, b_field: f64) -> Self {
        assert!(diag.len() >= 3, "need at least 3 layers");
        assert_eq!(coupling.len() + 1, diag.len(), "need n-1 coupling blocks");
        Self { diag, coupling, corner, b_field }
    }

    pub fn n_layers(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.n_layers() * BLOCK
    }

    pub fn b_field(&self) -> f64 {
        self.b_field
    }

    /// On-layer block `A_i`.
    pub fn diag(&self, layer: usize) -> &Block {
        &self.diag[layer]
    }

    /// `V_i`, so that `H[i+1, i] = -V_i`.
    pub fn coupling(&self, layer: usize) -> &Block {
        &self.coupling[layer]
    }

    /// `V_c`, so that `H[0, n-1] = -V_c`.
    pub fn corner(&self) -> &Block {
        &self.corner
    }

    /// Block of `H` that maps layer `i` amplitudes into layer `(i+1) mod n`,
    /// i.e. `H[(i+1) mod n, i]`. Its adjoint is `H[i, (i+1) mod n]`.
    pub fn forward_hop(&self, layer: usize) -> Block {
        if layer + 1 == self.n_layers() {
            -self.corner
        } else {
            -self.coupling[layer]
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.n_layers();
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..n {
            h.fixed_view_mut::<BLOCK, BLOCK>(i * BLOCK, i * BLOCK).copy_from(&self.diag[i]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            let fwd = self.forward_hop(i);
            let mut lower = h.fixed_view_mut::<BLOCK, BLOCK>(j * BLOCK, i * BLOCK);
            lower += fwd;
            let mut upper = h.fixed_view_mut::<BLOCK, BLOCK>(i * BLOCK, j * BLOCK);
            upper += fwd.adjoint();
        }
        h
    }

    /// Multiply the amplitude on site `k` by `exp(i chi[k])`: `H → U H U†`.
    pub fn gauge_transformed(&self, chi: &[f64]) -> Self {
        assert_eq!(chi.len(), self.dim());
        let phase = |k: usize| Complex64::from_polar(1.0, chi[k]);
        let conj_block = |b: &Block, row_layer: usize, col_layer: usize| {
            Block::from_fn(|r, c| b[(r, c)] * phase(row_layer * BLOCK + r) * phase(col_layer * BLOCK + c).conj())
        };
        let n = self.n_layers();
        let diag = (0..n).map(|i| conj_block(&self.diag[i], i, i)).collect();
        let coupling = (0..n - 1).map(|i| conj_block(&self.coupling[i], i + 1, i)).collect();
        let corner = conj_block(&self.corner, 0, n - 1);
        Self { diag, coupling, corner, b_field: self.b_field }
    }

    /// Binary dump: a text header followed by every block (A_0..A_{n-1},
    /// V_0..V_{n-2}, V_c) in row-major order as little-endian (re, im) f64 pairs.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<(), HamiltonianError> {
        writeln!(w, "{DUMP_MAGIC}")?;
        writeln!(w, "n_layers={}", self.n_layers())?;
        writeln!(w, "block_size={BLOCK}")?;
        writeln!(w, "b_field_T={:e}", self.b_field)?;
        writeln!(w, "end_header")?;
        for b in self.diag.iter().chain(&self.coupling).chain(std::iter::once(&self.corner)) {
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    w.write_all(&b[(r, c)].re.to_le_bytes())?;
                    w.write_all(&b[(r, c)].im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self, HamiltonianError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| HamiltonianError::BadDump(m.to_string());
        let marker = b"end_header\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing end_header"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not utf-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(DUMP_MAGIC) {
            return Err(bad("wrong magic"));
        }
        let (mut n_layers, mut block, mut b_field) = (None, None, None);
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            match k {
                "n_layers" => n_layers = v.parse::<usize>().ok(),
                "block_size" => block = v.parse::<usize>().ok(),
                "b_field_T" => b_field = v.parse::<f64>().ok(),
                _ => return Err(bad(line)),
            }
        }
        let (n, b_field) = match (n_layers, block, b_field) {
            (Some(n), Some(BLOCK), Some(b)) if n >= 3 => (n, b),
            _ => return Err(bad("incomplete header")),
        };
        let payload = &bytes[split + marker.len()..];
        if payload.len() != 2 * n * BLOCK * BLOCK * 16 {
            return Err(bad("payload length does not match header"));
        }
        let mut values = payload.chunks_exact(16).map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        });
        let mut next_block = || {
            let mut b = Block::zeros();
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    b[(r, c)] = values.next().unwrap();
                }
            }
            b
        };
        let diag = (0..n).map(|_| next_block()).collect();
        let coupling = (0..n - 1).map(|_| next_block()).collect();
        let corner = next_block();
        Ok(Self { diag, coupling, corner, b_field })
    }
}

/// Nearest-neighbour pairs within [`NEIGHBOR_CUTOFF`], as sorted `(i, j)`
/// with `i < j`.
pub fn find_neighbors(sites: &[AtomSite]) -> Vec<(usize, usize)> {
    let cutoff2 = NEIGHBOR_CUTOFF * NEIGHBOR_CUTOFF;
    let mut bonds = Vec::new();
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            if (sites[i].position - sites[j].position).norm_squared() < cutoff2 {
                bonds.push((i, j));
            }
        }
    }
    bonds
}

/// Assemble the device Hamiltonian, detecting bonds by distance.
pub fn assemble(
    sites: &[AtomSite],
    params: &HoppingParams,
    field: FieldConfig,
) -> Result<BlockHamiltonian, HamiltonianError> {
    let bonds = find_neighbors(sites);
    assemble_with_bonds(sites, &bonds, params, field)
}

/// Assemble the device Hamiltonian from an explicit bond list.
pub fn assemble_with_bonds(
    sites: &[AtomSite],
    bonds: &[(usize, usize)],
    params: &HoppingParams,
    field: FieldConfig,
) -> Result<BlockHamiltonian, HamiltonianError> {
    if sites.is_empty() || sites.len() % BLOCK != 0 {
        return Err(HamiltonianError::RaggedSites(sites.len()));
    }
    let n = sites.len() / BLOCK;
    if n < 3 {
        return Err(HamiltonianError::TooFewLayers(n));
    }
    let mut degree = vec![0usize; sites.len()];
    for &(i, j) in bonds {
        degree[i] += 1;
        degree[j] += 1;
    }
    if let Some((site, &count)) = degree.iter().enumerate().find(|(_, &d)| d != 3) {
        return Err(HamiltonianError::NotThreeRegular { site, count });
    }

    let onsite = Complex64::new(params.onsite, 0.0);
    let mut diag = vec![Block::from_diagonal_element(onsite); n];
    let mut coupling = vec![Block::zeros(); n - 1];
    let mut corner = Block::zeros();

    for &(i, j) in bonds {
        let (si, sj) = (&sites[i], &sites[j]);
        // hop[i, j]
        let hop = params.v_device * peierls_phase(&si.position, &sj.position, field);
        let (li, lj) = (si.layer, sj.layer);
        let (ri, rj) = (si.slot, sj.slot);
        if li == lj {
            diag[li][(ri, rj)] += hop;
            diag[li][(rj, ri)] += hop.conj();
            continue;
        }
        // Orient as H[row, col] with row layer = col layer + 1 (mod n).
        let (row, col, value) = if li == (lj + 1) % n {
            ((li, ri), (lj, rj), hop)
        } else if lj == (li + 1) % n {
            ((lj, rj), (li, ri), hop.conj())
        } else {
            return Err(HamiltonianError::NonLocalBond(i, j));
        };
        if col.0 == n - 1 {
            // H[0, n-1] = -V_c
            corner[(row.1, col.1)] -= value;
        } else {
            // H[k+1, k] = -V_k
            coupling[col.0][(row.1, col.1)] -= value;
        }
    }
    Ok(BlockHamiltonian { diag, coupling, corner, b_field: field.b0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::FLUX_QUANTUM;
    use crate::lattice::{armchair_bonds, build_torus, TorusGeometry};

    fn default_sites() -> Vec<AtomSite> {
        build_torus(&TorusGeometry::default()).unwrap()
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_field_has_unit_phase() {
        let a = Vector3::new(58.0, 0.3, 1.0);
        let b = Vector3::new(57.0, 1.3, -0.2);
        assert_eq!(peierls_phase(&a, &b, FieldConfig { b0: 0.0 }), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn axial_bond_has_unit_phase() {
        let a = Vector3::new(58.0, 3.0, 1.0);
        let b = Vector3::new(58.0, 3.0, -0.4);
        let z = peierls_phase(&a, &b, FieldConfig { b0: 1.0 });
        assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn phase_matches_line_integral_of_vector_potential() {
        // Azimuthal chord at rho = 58 Å spanning 2.43 Å of arc.
        let field = FieldConfig { b0: 1.0 };
        let dphi: f64 = 2.43 / 58.0;
        let r_j = Vector3::new(58.0, 0.0, 0.0);
        let r_i = Vector3::new(58.0 * dphi.cos(), 58.0 * dphi.sin(), 0.0);
        // composite Gauss-Legendre along the chord from r_j to r_i
        let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
        let weights = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
        let dr = r_i - r_j;
        let panels = 64;
        let mut integral = 0.0;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (x, w) in nodes.iter().zip(weights) {
                let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
                let r = r_j + s * dr;
                integral += 0.5 * (b - a) * w * vector_potential(&r, field).dot(&dr);
            }
        }
        let expected = E_OVER_HBAR * integral;
        let got = peierls_phase(&r_i, &r_j, field).arg();
        assert!(((got - expected) / expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn peierls_factor_has_unit_modulus() {
        let sites = default_sites();
        for b0 in [0.5, 5.0, 123.0] {
            for &(i, j) in armchair_bonds(150).iter().step_by(7) {
                let z = peierls_phase(&sites[i].position, &sites[j].position, FieldConfig { b0 });
                assert!((z.norm() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn distance_cutoff_recovers_armchair_connectivity() {
        let sites = default_sites();
        assert_eq!(find_neighbors(&sites), armchair_bonds(150));
    }

    #[test]
    fn default_assembly_zero_field() {
        let sites = default_sites();
        let h = assemble(&sites, &HoppingParams::default(), FieldConfig::default()).unwrap();
        assert_eq!(h.dim(), 1800);
        let dense = h.to_dense();
        assert_eq!(max_abs(&(&dense - dense.adjoint())), 0.0);
        let mut nonzero = 0;
        for z in dense.iter() {
            if *z != Complex64::new(0.0, 0.0) {
                assert_eq!(*z, Complex64::new(-3.1, 0.0));
                nonzero += 1;
            }
        }
        assert_eq!(nonzero, 2 * 1800 * 3 / 2);
        assert!(h.corner().iter().any(|z| z.norm() > 0.0));
        // stored blocks carry the displayed sign: V = -H
        assert!(h.coupling(3).iter().all(|z| z.im == 0.0 && z.re >= 0.0));
    }

    #[test]
    fn zero_hopping_gives_zero_matrix() {
        let sites = default_sites();
        let params = HoppingParams { v_device: 0.0, ..Default::default() };
        let h = assemble(&sites, &params, FieldConfig { b0: 1.0 }).unwrap();
        assert_eq!(max_abs(&h.to_dense()), 0.0);
        assert!(params.validate().is_err());
    }

    #[test]
    fn hermitian_for_all_fields() {
        let sites = default_sites();
        for b0 in [0.0, 0.5, 1.0, 1.5, 5.0] {
            let h = assemble(&sites, &HoppingParams::default(), FieldConfig { b0 }).unwrap();
            let d = h.to_dense();
            assert!(max_abs(&(&d - d.adjoint())) <= 1e-14);
            assert_eq!(h.b_field(), b0);
        }
    }

    #[test]
    fn field_reversal_conjugates() {
        let sites = default_sites();
        let p = HoppingParams::default();
        let plus = assemble(&sites, &p, FieldConfig { b0: 1.5 }).unwrap().to_dense();
        let minus = assemble(&sites, &p, FieldConfig { b0: -1.5 }).unwrap().to_dense();
        assert!(max_abs(&(&plus.conjugate() - &minus)) <= 1e-15);
    }

    #[test]
    fn entries_outside_cyclic_band_vanish() {
        let sites = default_sites();
        let d = assemble(&sites, &HoppingParams::default(), FieldConfig { b0: 2.0 }).unwrap().to_dense();
        let n = 150;
        for r in 0..d.nrows() {
            for c in 0..d.ncols() {
                let (lr, lc) = (r / BLOCK, c / BLOCK);
                let dist = (lr as isize - lc as isize).rem_euclid(n as isize) as usize;
                if dist > 1 && dist < n - 1 {
                    assert_eq!(d[(r, c)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn malformed_lattice_rejected() {
        let mut sites = default_sites();
        sites[5].position.z += 0.8;
        let err = assemble(&sites, &HoppingParams::default(), FieldConfig::default()).unwrap_err();
        assert!(matches!(err, HamiltonianError::NotThreeRegular { .. }));
    }

    fn loop_phase(h: &DMatrix<Complex64>, path: &[usize]) -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        for w in path.windows(2) {
            let z = h[(w[1], w[0])];
            acc *= z / z.norm();
        }
        acc
    }

    fn shoelace(points: &[Vector3<f64>]) -> f64 {
        let mut area = 0.0;
        for w in points.windows(2) {
            area += w[0].x * w[1].y - w[1].x * w[0].y;
        }
        0.5 * area
    }

    #[test]
    fn phase_around_ring_loop_equals_enclosed_flux() {
        let sites = default_sites();
        let b0 = 1.3;
        let h = assemble(&sites, &HoppingParams::default(), FieldConfig { b0 }).unwrap().to_dense();
        // zig-zag path slot 0 -> slot 6 -> next layer slot 0 ... once around
        let mut path = Vec::new();
        for layer in 0..150 {
            path.push(layer * 12);
            path.push(layer * 12 + 6);
        }
        path.push(0);
        let points: Vec<_> = path.iter().map(|&k| sites[k].position).collect();
        let flux = b0 * shoelace(&points);
        let expected = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * flux / FLUX_QUANTUM);
        let got = loop_phase(&h, &path);
        assert!((got - expected).norm() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn phase_around_hexagon_equals_enclosed_flux() {
        let sites = default_sites();
        let b0 = 40.0;
        let h = assemble(&sites, &HoppingParams::default(), FieldConfig { b0 }).unwrap().to_dense();
        // hexagon: l0 s0 - l0 s1 - l0 s7 - l1 s1 - l1 s0 - l0 s6 - back
        let path = [0, 1, 7, 13, 12, 6, 0];
        let points: Vec<_> = path.iter().map(|&k| sites[k].position).collect();
        let flux = b0 * shoelace(&points);
        let expected = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * flux / FLUX_QUANTUM);
        assert!((loop_phase(&h, &path) - expected).norm() < 1e-12);
    }

    #[test]
    fn gauge_transform_preserves_spectrum() {
        let geom = TorusGeometry::new(58.0, 2.0, 6).unwrap();
        let sites = build_torus(&geom).unwrap();
        let bonds = armchair_bonds(6);
        let h = assemble_with_bonds(&sites, &bonds, &HoppingParams::default(), FieldConfig { b0: 3.0 }).unwrap();
        let chi: Vec<f64> = (0..h.dim()).map(|k| 0.37 * k as f64 + (k as f64).sin()).collect();
        let g = h.gauge_transformed(&chi);
        let mut e1: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
        let mut e2: Vec<f64> = g.to_dense().symmetric_eigenvalues().iter().copied().collect();
        e1.sort_by(f64::total_cmp);
        e2.sort_by(f64::total_cmp);
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-10);
        }
        // and the transform is a genuine similarity, not the identity
        assert!(max_abs(&(h.to_dense() - g.to_dense())) > 1.0);
    }

    #[test]
    fn three_layer_ring_uses_corner() {
        let geom = TorusGeometry::new(58.0, 2.0, 3).unwrap();
        let sites = build_torus(&geom).unwrap();
        let h = assemble_with_bonds(&sites, &armchair_bonds(3), &HoppingParams::default(), FieldConfig { b0: 0.7 })
            .unwrap();
        let d = h.to_dense();
        assert!(max_abs(&(&d - d.adjoint())) < 1e-15);
        let per_row: Vec<usize> = (0..36).map(|r| (0..36).filter(|&c| d[(r, c)].norm() > 0.0).count()).collect();
        assert!(per_row.iter().all(|&c| c == 3));
    }

    #[test]
    fn dump_round_trip() {
        let geom = TorusGeometry::new(58.0, 2.0, 4).unwrap();
        let sites = build_torus(&geom).unwrap();
        let h = assemble_with_bonds(&sites, &armchair_bonds(4), &HoppingParams::default(), FieldConfig { b0: 2.5 })
            .unwrap();
        let mut buf = Vec::new();
        h.write_dump(&mut buf).unwrap();
        let header = String::from_utf8_lossy(&buf[..80]).to_string();
        assert!(header.starts_with("nanotorus-hamiltonian v1\nn_layers=4\nblock_size=12\n"));
        assert_eq!(BlockHamiltonian::read_dump(&buf[..]).unwrap(), h);
        assert!(BlockHamiltonian::read_dump(&buf[..buf.len() - 1]).is_err());
    }
}
