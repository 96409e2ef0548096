//! Device builders and property checks shared by the property suite and the
//! acceptance run. Each check returns the measured defect so callers can
//! report it, or an error message describing the violation.

#![allow(dead_code)]

use nalgebra::{Complex, Vector3};
use nanotorus::config::{SweepSpec, Table};
use nanotorus::device::{Device, DeviceConfig};
use nanotorus::greens::{solve_contacts, ContactView, EffectiveSystem, EmbeddedSelfEnergy, CONTACTS};
use nanotorus::hamiltonian::{peierls_phase, FieldConfig, HoppingParams};
use nanotorus::lattice::{AlphaRange, TorusGeometry};
use nanotorus::leads::ContactMatrix;
use nanotorus::observables::{current, BiasConfig, EnergyGrid};
use nanotorus::sweep;

pub type Check = Result<f64, String>;

/// Major radius that keeps the default layer spacing on an `n`-layer torus.
pub fn scaled_radius(n: usize) -> f64 {
    (58.0 * n as f64 / 150.0).max(3.0)
}

/// A torus of `n` layers with the default layer spacing, the right lead on
/// `right_layer`, and everything else at defaults.
pub fn small_device(n: usize, b0: f64, right_layer: usize, t_hop: f64) -> Device {
    let geometry = TorusGeometry::new(scaled_radius(n), 2.0, n).unwrap();
    let config = DeviceConfig {
        geometry,
        hopping: HoppingParams { t_hop, ..HoppingParams::default() },
        b0,
        alpha_deg: right_layer as f64 * 360.0 / n as f64,
        alpha_range: AlphaRange::FULL,
        ..DeviceConfig::default()
    };
    Device::new(config).unwrap()
}

fn ensure(ok: bool, value: f64, what: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(value)
    } else {
        Err(what())
    }
}

/// `max |H − H†|` of the assembled Hamiltonian.
pub fn hermiticity(device: &Device) -> Check {
    let h = device.hamiltonian.to_dense();
    let defect = (&h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    ensure(defect <= 1e-12, defect, || format!("H − H† reaches {defect:.3e}"))
}

/// Smallest eigenvalue of both broadenings relative to their largest one.
pub fn gamma_psd(device: &Device, energy: f64) -> Check {
    let (l, r) = device.self_energies(energy);
    let mut worst = f64::INFINITY;
    for gamma in [l.gamma, r.gamma] {
        let herm = (gamma - gamma.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-12 * gamma.norm().max(1e-300) {
            return Err(format!("Γ is not Hermitian at E = {energy} ({herm:.3e})"));
        }
        let eig = gamma.symmetric_eigenvalues();
        let top = eig.iter().cloned().fold(0.0, f64::max);
        let low = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let rel = if top > 0.0 { low / top } else { low };
        worst = worst.min(rel);
    }
    ensure(worst >= -1e-12, worst, || format!("Γ has eigenvalue {worst:.3e} (relative) at E = {energy}"))
}

/// `| |exp(iθ)| − 1 |` for a bond between two points.
pub fn peierls_modulus(r_i: [f64; 3], r_j: [f64; 3], b0: f64) -> Check {
    let p = peierls_phase(&Vector3::from(r_i), &Vector3::from(r_j), FieldConfig { b0 });
    let defect = (p.norm() - 1.0).abs();
    ensure(defect <= 1e-14, defect, || format!("|phase| − 1 = {defect:.3e} at B = {b0}"))
}

/// Under `H → U H U†` with `U = diag(exp(iχ))`, the contact block of `G`
/// must pick up the same phases and `T` must not change. Returns the
/// largest relative deviation.
pub fn gauge_covariance(device: &Device, energy: f64, chi: &[f64]) -> Check {
    let (l, r) = device.self_energies(energy);
    let sys = device.system(energy, &l, &r).map_err(|e| e.to_string())?;
    let h2 = device.hamiltonian.gauge_transformed(chi);
    let rephase = |lead: &EmbeddedSelfEnergy| {
        let idx = lead.contacts.site_indices();
        let sigma = ContactMatrix::from_fn(|p, q| lead.sigma[(p, q)] * Complex::from_polar(1.0, chi[idx[p]] - chi[idx[q]]));
        EmbeddedSelfEnergy { sigma, ..lead.clone() }
    };
    let sys2 = EffectiveSystem::new(&h2, rephase(&sys.left), rephase(&sys.right), sys.eta, energy).map_err(|e| e.to_string())?;
    let a = solve_contacts(&sys).map_err(|e| e.to_string())?;
    let b = solve_contacts(&sys2).map_err(|e| e.to_string())?;
    let (ab, bb) = (a.contact_block(), b.contact_block());
    let scale = ab.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for i in 0..CONTACTS {
        for j in 0..CONTACTS {
            let expect = ab[(i, j)] * Complex::from_polar(1.0, chi[a.contact_sites[i]] - chi[a.contact_sites[j]]);
            worst = worst.max((bb[(i, j)] - expect).norm() / scale);
        }
    }
    ensure(worst <= 1e-9, worst, || format!("gauge-transformed G deviates by {worst:.3e} at E = {energy}"))
}

/// Transmission at `energy`; it must not be negative.
pub fn transmission_nonnegative(device: &Device, energy: f64) -> Check {
    let t = device.evaluate(energy).map_err(|e| e.to_string())?.transmission;
    ensure(t >= 0.0 && t.is_finite(), t, || format!("T({energy}) = {t}"))
}

/// `|I(V) + I(−V)| / |I(V)|` for a transmission table on `grid`.
pub fn current_oddness(t: &[f64], grid: &EnergyGrid, v: f64, kt: f64) -> Check {
    let plus = current(t, grid, &BiasConfig::new(v, kt).unwrap()).map_err(|e| e.to_string())?;
    let minus = current(t, grid, &BiasConfig::new(-v, kt).unwrap()).map_err(|e| e.to_string())?;
    let defect = (plus + minus).abs() / plus.abs().max(1e-300);
    ensure(defect <= 1e-12, defect, || format!("I({v}) = {plus:e}, I({}) = {minus:e}", -v))
}

/// A small multi-tuple sweep on a 12-layer torus.
pub fn small_sweep_spec() -> SweepSpec {
    SweepSpec::parse(
        "n_layers = 12\nmajor_radius = 4.64\ne_min = -0.3\ne_max = 0.3\ne_step = 0.05\n\
         b_list = [0, 2.5]\nalpha_list = [90, 180]\nbias_list = [0.05, 0.1]\n\
         outputs = transmission, dos, current\n",
    )
    .unwrap()
}

/// Number of tables whose CSV text differs between a serial and a parallel run.
pub fn serial_parallel_identity(spec: &SweepSpec, workers: usize) -> Check {
    let serial = sweep::compute(spec, 1).map_err(|e| e.to_string())?;
    let parallel = sweep::compute(spec, workers).map_err(|e| e.to_string())?;
    let differing: Vec<Table> =
        spec.outputs.iter().copied().filter(|&t| sweep::render_table(t, &serial) != sweep::render_table(t, &parallel)).collect();
    ensure(differing.is_empty(), 0.0, || format!("tables differ between 1 and {workers} workers: {differing:?}"))
}
