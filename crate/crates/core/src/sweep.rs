//! Batch driver: evaluates every parameter tuple of a [`SweepSpec`] over the
//! energy grid, writes one CSV per requested table plus a manifest and a
//! geometry echo.
//!
//! Energy points of all tuples form one flat work list on a bounded rayon
//! pool. Results land in preallocated slots, so the row order and every byte
//! of the CSV output are independent of the worker count. A failing tuple
//! (error or panic) is dropped from the tables and recorded in the manifest;
//! other tuples are unaffected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis;
use crate::config::{SweepSpec, Table};
use crate::constants::CONSTANTS_VERSION;
use crate::device::{Device, DeviceConfig, EnergyPoint};
use crate::lattice;
use crate::observables::{self, BiasConfig};

pub const CSV_HEADER: &str = "E_eV,B_T,alpha_deg,t_hop_eV,V_sd_eV,T,D_total,I_over_e_h";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// One `(B, α, t_hop)` combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuple {
    pub b: f64,
    pub alpha: f64,
    pub t_hop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleFailure {
    pub tuple: Tuple,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub table: Table,
    pub path: PathBuf,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_echo: String,
    pub tuples: usize,
    pub energy_points: usize,
    pub workers: usize,
    pub seconds: f64,
    pub files: Vec<OutputFile>,
    pub failures: Vec<TupleFailure>,
    /// Biases whose thermal tails extend past the grid (handled by tail extrapolation).
    pub tail_extrapolated: Vec<f64>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nanotorus_version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "constants_version={CONSTANTS_VERSION}");
        let _ = writeln!(s, "tuples={}", self.tuples);
        let _ = writeln!(s, "energy_points={}", self.energy_points);
        let _ = writeln!(s, "workers={}", self.workers);
        let _ = writeln!(s, "wall_seconds={:.3}", self.seconds);
        for v in &self.tail_extrapolated {
            let _ = writeln!(s, "note=thermal tails beyond the grid extrapolated for V_SD={v}");
        }
        for f in &self.files {
            let name = f.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(s, "file={name} table={} rows={} sha256={}", f.table, f.rows, f.sha256);
        }
        let _ = writeln!(s, "failures={}", self.failures.len());
        for f in &self.failures {
            let t = f.tuple;
            let _ = writeln!(s, "failed B_T={} alpha_deg={} t_hop_eV={}: {}", t.b, t.alpha, t.t_hop, f.message);
        }
        s.push_str("[config]\n");
        s.push_str(&self.config_echo);
        s
    }
}

/// Everything computed for one tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleResult {
    pub tuple: Tuple,
    /// Realized opening angle.
    pub alpha_realized: f64,
    pub points: Vec<EnergyPoint>,
    /// `(V_SD, I in e/h)` for every bias of the sweep when a current table is requested.
    pub currents: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub results: Vec<TupleResult>,
    pub failures: Vec<TupleFailure>,
}

/// `%.12g`-style formatting: 12 significant digits, shortest exact form.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn tuples(spec: &SweepSpec) -> Vec<Tuple> {
    let mut out = Vec::new();
    for &b in &spec.b_list {
        for &alpha in &spec.alpha_list {
            for &t_hop in &spec.t_hop_list {
                out.push(Tuple { b, alpha, t_hop });
            }
        }
    }
    out
}

/// The requested angle snapped to the nearest layer (half away from zero).
fn realize_alpha(spec: &SweepSpec, alpha: f64) -> f64 {
    lattice::quantize_alpha(alpha, spec.device.geometry.n_layers).1
}

fn device_config(spec: &SweepSpec, t: Tuple) -> DeviceConfig {
    let mut cfg = spec.device;
    cfg.b0 = t.b;
    cfg.alpha_deg = realize_alpha(spec, t.alpha);
    cfg.hopping.t_hop = t.t_hop;
    cfg
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Run `f`, converting a panic into an error message.
fn isolated<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(format!("panic: {}", panic_message(p))))
}

/// Evaluate every tuple of `spec` on a pool of `workers` threads.
pub fn compute(spec: &SweepSpec, workers: usize) -> Result<SweepOutcome, SweepError> {
    spec.validate().map_err(|e| SweepError::Config(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let tuples = tuples(spec);
    let energies = spec.grid.energies();

    // invalid angles are configuration errors, not tuple failures
    let probe = lattice::build_torus(&spec.device.geometry).map_err(|e| SweepError::Config(e.to_string()))?;
    for &alpha in &spec.alpha_list {
        let realized = realize_alpha(spec, alpha);
        if (realized - alpha.rem_euclid(360.0)).abs() > 1e-9 {
            log::warn!("alpha {alpha} deg is not on the layer grid; using {realized} deg");
        }
        lattice::place_leads(&probe, realized, spec.device.alpha_range).map_err(|e| SweepError::Config(e.to_string()))?;
    }

    let devices: Vec<Result<Device, String>> = pool.install(|| {
        tuples
            .par_iter()
            .map(|&t| isolated(|| Device::new(device_config(spec, t)).map_err(|e| e.to_string())))
            .collect()
    });

    let work: Vec<(usize, usize)> = (0..tuples.len())
        .filter(|&k| devices[k].is_ok())
        .flat_map(|k| (0..energies.len()).map(move |i| (k, i)))
        .collect();
    let points: Vec<Result<EnergyPoint, String>> = pool.install(|| {
        work.par_iter()
            .map(|&(k, i)| {
                let device = devices[k].as_ref().expect("filtered to built devices");
                isolated(|| device.evaluate(energies[i]).map_err(|e| format!("E = {} eV: {e}", energies[i])))
            })
            .collect()
    });

    let want_current = spec.outputs.iter().any(|t| t.is_biased());
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut cursor = points.into_iter();
    for (k, &tuple) in tuples.iter().enumerate() {
        let device = match &devices[k] {
            Ok(d) => d,
            Err(message) => {
                failures.push(TupleFailure { tuple, message: message.clone() });
                continue;
            }
        };
        let mut rows = Vec::with_capacity(energies.len());
        let mut failure = None;
        for p in cursor.by_ref().take(energies.len()) {
            match p {
                Ok(p) => rows.push(p),
                Err(m) if failure.is_none() => failure = Some(m),
                Err(_) => {}
            }
        }
        if let Some(message) = failure {
            failures.push(TupleFailure { tuple, message });
            continue;
        }
        let mut currents = Vec::new();
        if want_current {
            let t: Vec<f64> = rows.iter().map(|p| p.transmission).collect();
            for &v in &spec.bias_list {
                let bias = BiasConfig::new(v, spec.kt).map_err(|e| SweepError::Config(e.to_string()))?;
                let i = observables::current(&t, &spec.grid, &bias).map_err(|e| SweepError::Config(e.to_string()))?;
                // the table reports e/h units; the integral carries 2e/h
                currents.push((v, 2.0 * i));
            }
        }
        results.push(TupleResult { tuple, alpha_realized: device.placement.alpha_deg, points: rows, currents });
    }
    for f in &failures {
        log::error!("tuple B={} alpha={} t_hop={} failed: {}", f.tuple.b, f.tuple.alpha, f.tuple.t_hop, f.message);
    }
    Ok(SweepOutcome { results, failures })
}

/// CSV text of one table, rows ordered by tuple and then energy or bias.
pub fn render_table(table: Table, outcome: &SweepOutcome) -> (String, usize) {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    let mut rows = 0;
    for r in &outcome.results {
        let (b, a, t) = (fmt_g12(r.tuple.b), fmt_g12(r.alpha_realized), fmt_g12(r.tuple.t_hop));
        if table.is_biased() {
            for &(v, i) in &r.currents {
                let _ = writeln!(s, ",{b},{a},{t},{},,,{}", fmt_g12(v), fmt_g12(i));
                rows += 1;
            }
        } else {
            for p in &r.points {
                let _ = writeln!(
                    s,
                    "{},{b},{a},{t},0,{},{},",
                    fmt_g12(p.energy),
                    fmt_g12(p.transmission),
                    fmt_g12(p.dos_total)
                );
                rows += 1;
            }
        }
    }
    (s, rows)
}

fn write(path: &Path, text: &str) -> Result<(), SweepError> {
    fs::write(path, text).map_err(|source| SweepError::Io { path: path.to_path_buf(), source })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Compute the sweep and write `<table>.csv`, `geometry.txt` and `manifest.txt` into `out`.
pub fn run_sweep(spec: &SweepSpec, out: &Path, workers: usize) -> Result<RunManifest, SweepError> {
    let started = Instant::now();
    let outcome = compute(spec, workers)?;
    fs::create_dir_all(out).map_err(|source| SweepError::Io { path: out.to_path_buf(), source })?;

    let mut files = Vec::new();
    for &table in &spec.outputs {
        let (text, rows) = render_table(table, &outcome);
        let path = out.join(table.file_name());
        write(&path, &text)?;
        files.push(OutputFile { table, path, rows, sha256: sha256_hex(text.as_bytes()) });
    }

    let sites = lattice::build_torus(&spec.device.geometry).map_err(|e| SweepError::Config(e.to_string()))?;
    let placements = spec
        .alpha_list
        .iter()
        .map(|&a| lattice::place_leads(&sites, realize_alpha(spec, a), spec.device.alpha_range))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SweepError::Config(e.to_string()))?;
    let mut geometry = lattice::geometry_echo(&spec.device.geometry, &placements);
    let lead = &spec.device.lead;
    let _ = writeln!(
        geometry,
        "lead fermi_energy_eV={} spacing_A={} width_y_A={} width_z_A={} transverse_modes={}x{}",
        lead.fermi_energy,
        lead.spacing,
        lead.width_y,
        lead.width_z,
        lead.mode_limits().0,
        lead.mode_limits().1
    );
    write(&out.join("geometry.txt"), &geometry)?;

    let tail_extrapolated = if spec.outputs.iter().any(|t| t.is_biased()) {
        spec.bias_list
            .iter()
            .copied()
            .filter(|&v| BiasConfig::new(v, spec.kt).is_ok_and(|b| !observables::covers_thermal_window(&spec.grid, &b)))
            .collect()
    } else {
        Vec::new()
    };
    let manifest = RunManifest {
        config_echo: spec.echo(),
        tuples: outcome.results.len() + outcome.failures.len(),
        energy_points: spec.grid.len(),
        workers: workers.max(1),
        seconds: started.elapsed().as_secs_f64(),
        files,
        failures: outcome.failures,
        tail_extrapolated,
    };
    write(&out.join("manifest.txt"), &manifest.render())?;
    Ok(manifest)
}

/// Rows of a sweep CSV, parsed back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub energy: Option<f64>,
    pub b: f64,
    pub alpha: f64,
    pub t_hop: f64,
    pub v_sd: f64,
    pub transmission: Option<f64>,
    pub dos_total: Option<f64>,
    pub current: Option<f64>,
}

pub fn parse_table(text: &str) -> Result<Vec<Row>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err("missing or unexpected CSV header".into());
    }
    let opt = |s: &str| -> Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format!("bad number `{s}`"))
        }
    };
    let req = |s: &str| -> Result<f64, String> { s.parse().map_err(|_| format!("bad number `{s}`")) };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(format!("expected 8 fields in `{l}`"));
            }
            Ok(Row {
                energy: opt(f[0])?,
                b: req(f[1])?,
                alpha: req(f[2])?,
                t_hop: req(f[3])?,
                v_sd: req(f[4])?,
                transmission: opt(f[5])?,
                dos_total: opt(f[6])?,
                current: opt(f[7])?,
            })
        })
        .collect()
}

/// Group rows by a key while keeping first-appearance order.
pub fn group_rows<K: Ord + Clone>(rows: &[Row], key: impl Fn(&Row) -> K) -> Vec<(K, Vec<Row>)> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<K, Vec<Row>> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k.clone());
                Vec::new()
            })
            .push(*r);
    }
    order.into_iter().map(|k| {
        let v = groups.remove(&k).unwrap_or_default();
        (k, v)
    }).collect()
}

fn sorted_series(rows: &[Row], x: impl Fn(&Row) -> f64, y: impl Fn(&Row) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| y(r).map(|v| (x(r), v))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().unzip()
}

/// Plateau and flux-period report for the `angle_scan` and `flux_scan`
/// tables found in `dir`.
pub fn analyze_outputs(spec: &SweepSpec, dir: &Path) -> Result<String, SweepError> {
    let read = |table: Table| -> Result<Option<Vec<Row>>, SweepError> {
        let path = dir.join(table.file_name());
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|source| SweepError::Io { path: path.clone(), source })?;
        parse_table(&text).map(Some).map_err(|e| SweepError::Config(format!("{}: {e}", path.display())))
    };
    let angle = read(Table::AngleScan)?;
    let flux = read(Table::FluxScan)?;
    if angle.is_none() && flux.is_none() {
        return Err(SweepError::Config(format!("no angle_scan.csv or flux_scan.csv in {}", dir.display())));
    }
    let mut s = String::new();
    if let Some(rows) = angle {
        let rule = spec.plateau;
        let _ = writeln!(s, "[angle_scan] tolerance={} min_steps={}", rule.tolerance, rule.min_steps);
        for ((e, b, t), group) in group_rows(&rows, |r| (r.energy.unwrap_or(f64::NAN).to_bits(), r.b.to_bits(), r.t_hop.to_bits())) {
            let (e, b, t) = (f64::from_bits(e), f64::from_bits(b), f64::from_bits(t));
            let (alphas, ts) = sorted_series(&group, |r| r.alpha, |r| r.transmission);
            match analysis::detect_plateaus(&alphas, &ts, rule) {
                Ok(plateaus) => {
                    let spacing = analysis::plateau_spacing(&plateaus).map_or("none".to_string(), fmt_g12);
                    let _ = writeln!(s, "E_eV={} B_T={} t_hop_eV={} plateaus={} spacing_deg={spacing}", fmt_g12(e), fmt_g12(b), fmt_g12(t), plateaus.len());
                    for p in plateaus {
                        let _ = writeln!(
                            s,
                            "  plateau alpha_deg={}..{} steps={} mean_T={}",
                            fmt_g12(p.alpha_start),
                            fmt_g12(p.alpha_end),
                            p.steps,
                            fmt_g12(p.mean_t)
                        );
                    }
                }
                Err(err) => {
                    let _ = writeln!(s, "E_eV={} B_T={} t_hop_eV={} skipped: {err}", fmt_g12(e), fmt_g12(b), fmt_g12(t));
                }
            }
        }
    }
    if let Some(rows) = flux {
        let conv = spec.flux;
        let _ = writeln!(s, "[flux_scan] b_per_phi0_T={}", conv.b_per_phi0);
        for ((a, t, v), group) in group_rows(&rows, |r| (r.alpha.to_bits(), r.t_hop.to_bits(), r.v_sd.to_bits())) {
            let (a, t, v) = (f64::from_bits(a), f64::from_bits(t), f64::from_bits(v));
            let (phis, currents) = sorted_series(&group, |r| observables::flux_ratio(r.b, conv), |r| r.current);
            let head = format!("alpha_deg={} t_hop_eV={} V_sd_eV={}", fmt_g12(a), fmt_g12(t), fmt_g12(v));
            let span = phis.last().zip(phis.first()).map_or(0.0, |(l, f)| l - f);
            let flips = analysis::count_oscillations(&phis, &currents, spec.flux_rule.oscillation_threshold);
            let per_phi0 = if span > 0.0 { flips as f64 / span } else { 0.0 };
            match analysis::extract_flux_period(&phis, &currents, spec.flux_rule) {
                Ok(spec_) => {
                    let _ = writeln!(
                        s,
                        "{head} dominant_period_phi0={} weight={} bin_per_phi0={} periods_covered={} matches_3/16={} sign_changes_per_phi0={}",
                        fmt_g12(spec_.dominant.period),
                        fmt_g12(spec_.dominant.weight),
                        fmt_g12(spec_.bin),
                        fmt_g12(spec_.periods_covered),
                        spec_.matches(3.0 / 16.0),
                        fmt_g12(per_phi0)
                    );
                    for tone in &spec_.tones[1..] {
                        let _ = writeln!(s, "  tone period_phi0={} weight={}", fmt_g12(tone.period), fmt_g12(tone.weight));
                    }
                }
                Err(err) => {
                    let _ = writeln!(s, "{head} skipped: {err} sign_changes_per_phi0={}", fmt_g12(per_phi0));
                }
            }
        }
    }
    Ok(s)
}
