//! Flat `key = value` sweep configuration.
//!
//! One assignment per line, `#` starts a comment. List values are comma
//! separated, optionally wrapped in brackets, and each item is either a number
//! or an inclusive range `start:step:stop`:
//!
//! ```text
//! e_min = -1.0
//! e_max = 1.0
//! e_step = 0.005
//! b_list = [0, 0.5, 1.5]
//! alpha_list = 45:2.4:315
//! outputs = transmission, dos
//! ```
//!
//! Unknown and repeated keys are errors, so a typo never silently falls back
//! to a default.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::{FluxRule, PlateauRule};
use crate::device::DeviceConfig;
use crate::lattice::{AlphaRange, TorusGeometry};
use crate::observables::{BiasConfig, EnergyGrid, FluxConvention, DEFAULT_KT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// One output table of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Table {
    Dos,
    Transmission,
    Current,
    FluxScan,
    AngleScan,
}

impl Table {
    pub const ALL: [Table; 5] = [Table::Dos, Table::Transmission, Table::Current, Table::FluxScan, Table::AngleScan];

    pub fn name(self) -> &'static str {
        match self {
            Table::Dos => "dos",
            Table::Transmission => "transmission",
            Table::Current => "current",
            Table::FluxScan => "flux_scan",
            Table::AngleScan => "angle_scan",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    /// Tables integrated over energy at finite bias.
    pub fn is_biased(self) -> bool {
        matches!(self, Table::Current | Table::FluxScan)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Table {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().replace('-', "_");
        Table::ALL
            .into_iter()
            .find(|t| t.name() == key)
            .ok_or_else(|| format!("unknown table `{s}` (expected dos, transmission, current, flux_scan or angle_scan)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: EnergyGrid,
    pub b_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub t_hop_list: Vec<f64>,
    pub bias_list: Vec<f64>,
    pub outputs: Vec<Table>,
    /// Everything except the swept `b0`, `alpha_deg` and `t_hop`.
    pub device: DeviceConfig,
    pub kt: f64,
    pub flux: FluxConvention,
    pub plateau: PlateauRule,
    pub flux_rule: FluxRule,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            grid: EnergyGrid::default(),
            b_list: vec![0.0],
            alpha_list: vec![180.0],
            t_hop_list: vec![-0.25],
            bias_list: vec![0.1],
            outputs: vec![Table::Transmission],
            device: DeviceConfig::default(),
            kt: DEFAULT_KT,
            flux: FluxConvention::default(),
            plateau: PlateauRule::default(),
            flux_rule: FluxRule::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "e_min",
    "e_max",
    "e_step",
    "b_list",
    "alpha_list",
    "t_hop_list",
    "bias_list",
    "outputs",
    "kT",
    "eta",
    "v_device",
    "onsite",
    "major_radius",
    "minor_radius",
    "n_layers",
    "alpha_min",
    "alpha_max",
    "fermi_energy",
    "lead_spacing",
    "lead_width_y",
    "lead_width_z",
    "mode_cutoff",
    "b_per_phi0",
    "plateau_tolerance",
    "plateau_min_steps",
    "flux_peak_fraction",
    "oscillation_threshold",
];

/// Parse a number list with optional brackets and inclusive `start:step:stop` ranges.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let inner = text.trim();
    let inner = inner.strip_prefix('[').map_or(inner, |s| s.strip_suffix(']').unwrap_or(s));
    let mut out = Vec::new();
    for item in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [one] => out.push(parse_f64(one)?),
            [start, step, stop] => {
                let (start, step, stop) = (parse_f64(start)?, parse_f64(step)?, parse_f64(stop)?);
                if !(step > 0.0) || stop < start {
                    return Err(format!("range `{item}` needs step > 0 and stop ≥ start"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                if count > 10_000_000 {
                    return Err(format!("range `{item}` is too long"));
                }
                out.extend((0..=count).map(|i| start + step * i as f64));
            }
            _ => return Err(format!("cannot read list item `{item}`")),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<&str, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() })?;
            let key = key.trim();
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| ConfigError::UnknownKey { line: i + 1, key: key.to_string() })?;
            if values.insert(known, value.trim().to_string()).is_some() {
                return Err(ConfigError::DuplicateKey { line: i + 1, key: key.to_string() });
            }
        }

        let bad = |key: &str, message: String| ConfigError::BadValue { key: key.to_string(), message };
        let num = |key: &str, default: f64| -> Result<f64, ConfigError> {
            values.get(key).map_or(Ok(default), |v| parse_f64(v).map_err(|m| bad(key, m)))
        };
        let list = |key: &str, default: &[f64]| -> Result<Vec<f64>, ConfigError> {
            values.get(key).map_or(Ok(default.to_vec()), |v| parse_list(v).map_err(|m| bad(key, m)))
        };
        let count = |key: &str, default: usize| -> Result<usize, ConfigError> {
            values.get(key).map_or(Ok(default), |v| v.parse().map_err(|_| bad(key, format!("`{v}` is not a count"))))
        };

        let base = Self::default();
        let d = base.device;
        let mut spec = Self {
            grid: EnergyGrid {
                e_min: num("e_min", base.grid.e_min)?,
                e_max: num("e_max", base.grid.e_max)?,
                step: num("e_step", base.grid.step)?,
            },
            b_list: list("b_list", &base.b_list)?,
            alpha_list: list("alpha_list", &base.alpha_list)?,
            t_hop_list: list("t_hop_list", &base.t_hop_list)?,
            bias_list: list("bias_list", &base.bias_list)?,
            outputs: base.outputs.clone(),
            device: d,
            kt: num("kT", base.kt)?,
            flux: FluxConvention { b_per_phi0: num("b_per_phi0", base.flux.b_per_phi0)? },
            plateau: PlateauRule {
                tolerance: num("plateau_tolerance", base.plateau.tolerance)?,
                min_steps: count("plateau_min_steps", base.plateau.min_steps)?,
            },
            flux_rule: FluxRule {
                peak_fraction: num("flux_peak_fraction", base.flux_rule.peak_fraction)?,
                oscillation_threshold: num("oscillation_threshold", base.flux_rule.oscillation_threshold)?,
            },
        };
        if let Some(v) = values.get("outputs") {
            let mut outputs = Vec::new();
            for item in v.trim().trim_start_matches('[').trim_end_matches(']').split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                let table = item.parse::<Table>().map_err(|m| bad("outputs", m))?;
                if !outputs.contains(&table) {
                    outputs.push(table);
                }
            }
            spec.outputs = outputs;
        }
        spec.device.geometry = TorusGeometry {
            major_radius: num("major_radius", d.geometry.major_radius)?,
            minor_radius: num("minor_radius", d.geometry.minor_radius)?,
            n_layers: count("n_layers", d.geometry.n_layers)?,
        };
        spec.device.hopping.v_device = num("v_device", d.hopping.v_device)?;
        spec.device.hopping.onsite = num("onsite", d.hopping.onsite)?;
        spec.device.alpha_range =
            AlphaRange { min_deg: num("alpha_min", d.alpha_range.min_deg)?, max_deg: num("alpha_max", d.alpha_range.max_deg)? };
        spec.device.eta = num("eta", d.eta)?;
        spec.device.lead.fermi_energy = num("fermi_energy", d.lead.fermi_energy)?;
        spec.device.lead.spacing = num("lead_spacing", d.lead.spacing)?;
        spec.device.lead.width_y = num("lead_width_y", d.lead.width_y)?;
        spec.device.lead.width_z = num("lead_width_z", d.lead.width_z)?;
        spec.device.lead.mode_cutoff = match values.get("mode_cutoff").map(String::as_str) {
            None | Some("none") | Some("full") => None,
            Some(v) => Some(v.parse().map_err(|_| bad("mode_cutoff", format!("`{v}` is not a count")))?),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.outputs.is_empty() {
            return invalid("no output table requested".into());
        }
        for (name, list) in [("b_list", &self.b_list), ("alpha_list", &self.alpha_list), ("t_hop_list", &self.t_hop_list)] {
            if list.is_empty() {
                return invalid(format!("{name} is empty"));
            }
        }
        if self.outputs.iter().any(|t| t.is_biased()) {
            if self.bias_list.is_empty() {
                return invalid("bias_list is empty but a current table is requested".into());
            }
            for &v in &self.bias_list {
                let bias = BiasConfig::new(v, self.kt).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let (lo, hi) = (bias.mu_left().min(bias.mu_right()), bias.mu_left().max(bias.mu_right()));
                if self.grid.e_min > lo || self.grid.e_max < hi || (v != 0.0 && self.grid.len() < 2) {
                    return invalid(format!(
                        "energy grid [{}, {}] must contain the bias window [{lo}, {hi}] for V_SD = {v}",
                        self.grid.e_min, self.grid.e_max
                    ));
                }
            }
        }
        if !(self.kt > 0.0) {
            return invalid(format!("kT = {} must be positive", self.kt));
        }
        if !(self.flux.b_per_phi0 > 0.0) {
            return invalid("b_per_phi0 must be positive".into());
        }
        if !(self.device.eta >= 0.0) {
            return invalid("eta must be non-negative".into());
        }
        if !(self.plateau.tolerance > 0.0) || self.plateau.min_steps < 2 {
            return invalid("plateau rule needs tolerance > 0 and at least 2 steps".into());
        }
        self.device.geometry.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.device.hopping.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.device.lead.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// The configuration as `key = value` lines, in a form [`SweepSpec::parse`] reads back.
    pub fn echo(&self) -> String {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", "));
        let d = &self.device;
        let mut lines = vec![
            format!("e_min = {}", self.grid.e_min),
            format!("e_max = {}", self.grid.e_max),
            format!("e_step = {}", self.grid.step),
            format!("b_list = {}", list(&self.b_list)),
            format!("alpha_list = {}", list(&self.alpha_list)),
            format!("t_hop_list = {}", list(&self.t_hop_list)),
            format!("bias_list = {}", list(&self.bias_list)),
            format!("outputs = {}", self.outputs.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")),
            format!("kT = {}", self.kt),
            format!("eta = {}", d.eta),
            format!("v_device = {}", d.hopping.v_device),
            format!("onsite = {}", d.hopping.onsite),
            format!("major_radius = {}", d.geometry.major_radius),
            format!("minor_radius = {}", d.geometry.minor_radius),
            format!("n_layers = {}", d.geometry.n_layers),
            format!("alpha_min = {}", d.alpha_range.min_deg),
            format!("alpha_max = {}", d.alpha_range.max_deg),
            format!("fermi_energy = {}", d.lead.fermi_energy),
            format!("lead_spacing = {}", d.lead.spacing),
            format!("lead_width_y = {}", d.lead.width_y),
            format!("lead_width_z = {}", d.lead.width_z),
            format!("mode_cutoff = {}", d.lead.mode_cutoff.map_or("none".to_string(), |m| m.to_string())),
            format!("b_per_phi0 = {}", self.flux.b_per_phi0),
            format!("plateau_tolerance = {}", self.plateau.tolerance),
            format!("plateau_min_steps = {}", self.plateau.min_steps),
            format!("flux_peak_fraction = {}", self.flux_rule.peak_fraction),
            format!("oscillation_threshold = {}", self.flux_rule.oscillation_threshold),
        ];
        lines.push(String::new());
        lines.join("\n")
    }
}
