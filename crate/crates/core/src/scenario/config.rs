//! Scenario and route configuration files.
//!
//! Files are TOML. Every numeric key carries its unit in the name
//! (`length_km`, `fs_hz`, ...). Validation walks the whole document and
//! reports every problem it finds instead of stopping at the first one.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::cascade::{MeasurementModel, RouteSpec};
use crate::link::{
    build_link, EntryConfig, LinkConfig, LinkTopology, DEFAULT_CARRIER_HZ, DEFAULT_GROUP_VELOCITY,
    DEFAULT_SENSITIVITY_W,
};
use crate::noise::{PowerLawNoiseModel, PowerLawTerm, MAX_ALPHA};
use crate::servo::{
    loop_bandwidth_limit, DEFAULT_ACTUATOR_RANGE_HZ, DEFAULT_BANDWIDTH_FRACTION,
    DEFAULT_DETECTION_NOISE, DEFAULT_INTEGRATOR_RATIO,
};

/// Errors and warnings from validation. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    fn error(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServoSettings {
    pub enabled: bool,
    /// Explicit bandwidth; otherwise `loop_bandwidth_fraction` of the cap.
    pub loop_bandwidth_hz: Option<f64>,
    pub loop_bandwidth_fraction: f64,
    pub integrator_ratio: f64,
    pub actuator_range_hz: f64,
    pub detection_noise_rad2_per_hz: f64,
}

impl Default for ServoSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            loop_bandwidth_hz: None,
            loop_bandwidth_fraction: DEFAULT_BANDWIDTH_FRACTION,
            integrator_ratio: DEFAULT_INTEGRATOR_RATIO,
            actuator_range_hz: DEFAULT_ACTUATOR_RANGE_HZ,
            detection_noise_rad2_per_hz: DEFAULT_DETECTION_NOISE,
        }
    }
}

impl ServoSettings {
    pub fn bandwidth_for(&self, tau: f64) -> f64 {
        self.loop_bandwidth_hz.unwrap_or_else(|| {
            self.loop_bandwidth_fraction * loop_bandwidth_limit(tau).unwrap_or(0.0)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSettings {
    pub fs_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub cells_per_span: usize,
    pub realizations: usize,
    pub max_samples: usize,
}

impl SimSettings {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }
}

pub const DEFAULT_MAX_SAMPLES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSettings {
    pub welch_segment_samples: Option<usize>,
    pub welch_overlap: f64,
    pub counter_gate_s: f64,
    pub tracking_filter: bool,
    pub tracking_filter_hz: f64,
    pub unfiltered_bandwidth_hz: f64,
    pub taus_s: Vec<f64>,
    pub rejection_frequency_hz: f64,
    pub integration_band_hz: (f64, f64),
    pub export_series: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            welch_segment_samples: None,
            welch_overlap: 0.5,
            counter_gate_s: 0.01,
            tracking_filter: true,
            tracking_filter_hz: 10.0,
            unfiltered_bandwidth_hz: 250.0,
            taus_s: vec![1.0, 2.0, 5.0, 10.0],
            rejection_frequency_hz: 1.0,
            integration_band_hz: (1.0, 1000.0),
            export_series: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub link: LinkTopology,
    pub servo: ServoSettings,
    pub sim: SimSettings,
    pub analysis: AnalysisSettings,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteConfig {
    pub name: String,
    pub route: RouteSpec,
    pub taus_s: Vec<f64>,
    pub measurement: MeasurementModel,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(clippy::large_enum_variant)]
pub enum ConfigFile {
    Scenario(Scenario),
    Route(RouteConfig),
}

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Invalid(Diagnostics),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "cannot read configuration: {e}"),
            Self::Invalid(d) => write!(f, "invalid configuration:\n{d}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Check a configuration file without running anything.
pub fn validate_config(path: &Path) -> std::io::Result<Diagnostics> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_config(&text).1)
}

/// Read and validate a configuration file.
pub fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    match parse_config(&text) {
        (Some(cfg), d) if d.is_valid() => Ok(cfg),
        (_, d) => Err(ConfigError::Invalid(d)),
    }
}

/// Parse configuration text. The file is returned only when there are no
/// errors; warnings never block it.
pub fn parse_config(text: &str) -> (Option<ConfigFile>, Diagnostics) {
    let mut d = Diagnostics::default();
    let root: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            d.error(format!("syntax: {}", e.message()));
            return (None, d);
        }
    };
    let cfg = if root.contains_key("route") {
        parse_route(&root, &mut d).map(ConfigFile::Route)
    } else {
        parse_scenario(&root, &mut d).map(ConfigFile::Scenario)
    };
    if d.is_valid() {
        (cfg, d)
    } else {
        (None, d)
    }
}

// ---------------------------------------------------------------------------
// Field helpers. Each returns `None` after recording an error.

fn check_keys(t: &Table, path: &str, allowed: &[&str], d: &mut Diagnostics) {
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            d.warn(format!("{path}: unknown key '{k}'"));
        }
    }
}

fn sub_table<'a>(t: &'a Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<&'a Table> {
    match t.get(key) {
        None => None,
        Some(Value::Table(s)) => Some(s),
        Some(_) => {
            d.error(format!("{path}{key}: expected a section"));
            None
        }
    }
}

fn opt_f64(t: &Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<f64> {
    match t.get(key) {
        None => None,
        Some(Value::Float(x)) if x.is_finite() => Some(*x),
        Some(Value::Integer(i)) => Some(*i as f64),
        Some(_) => {
            d.error(format!("{path}: {key} must be a finite number"));
            None
        }
    }
}

fn req_f64(t: &Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<f64> {
    if !t.contains_key(key) {
        d.error(format!("{path}: {key} is required"));
        return None;
    }
    opt_f64(t, key, path, d)
}

#[derive(Clone, Copy)]
enum Bound {
    Positive,
    NonNegative,
}

fn bounded(
    v: Option<f64>,
    bound: Bound,
    key: &str,
    path: &str,
    d: &mut Diagnostics,
) -> Option<f64> {
    let v = v?;
    let ok = match bound {
        Bound::Positive => v > 0.0,
        Bound::NonNegative => v >= 0.0,
    };
    if ok {
        Some(v)
    } else {
        let rel = match bound {
            Bound::Positive => "> 0",
            Bound::NonNegative => ">= 0",
        };
        d.error(format!("{path}: {key} must be {rel} (got {v})"));
        None
    }
}

fn opt_bool(t: &Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<bool> {
    match t.get(key) {
        None => None,
        Some(Value::Boolean(b)) => Some(*b),
        Some(_) => {
            d.error(format!("{path}: {key} must be true or false"));
            None
        }
    }
}

fn opt_str<'a>(t: &'a Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<&'a str> {
    match t.get(key) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            d.error(format!("{path}: {key} must be a string"));
            None
        }
    }
}

fn opt_count(t: &Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<usize> {
    match t.get(key) {
        None => None,
        Some(Value::Integer(i)) if *i >= 1 => Some(*i as usize),
        Some(Value::Float(x)) if x.fract() == 0.0 && *x >= 1.0 && *x < 9.0e15 => Some(*x as usize),
        Some(_) => {
            d.error(format!("{path}: {key} must be a positive integer"));
            None
        }
    }
}

fn opt_f64_list(t: &Table, key: &str, path: &str, d: &mut Diagnostics) -> Option<Vec<f64>> {
    let arr = match t.get(key) {
        None => return None,
        Some(Value::Array(a)) => a,
        Some(_) => {
            d.error(format!("{path}: {key} must be a list of numbers"));
            return None;
        }
    };
    let mut out = Vec::with_capacity(arr.len());
    for v in arr {
        match v {
            Value::Float(x) if x.is_finite() => out.push(*x),
            Value::Integer(i) => out.push(*i as f64),
            _ => {
                d.error(format!("{path}: {key} must be a list of finite numbers"));
                return None;
            }
        }
    }
    Some(out)
}

/// `terms = [{ alpha = 2.0, <coeff_key> = 14.0 }, ...]`
fn parse_terms(
    t: &Table,
    path: &str,
    coeff_key: &str,
    lineic: bool,
    d: &mut Diagnostics,
) -> Option<PowerLawNoiseModel> {
    check_keys(t, path, &["terms", "spans"], d);
    let arr = match t.get("terms") {
        None => {
            d.error(format!(
                "{path}: terms is required (use [] for a silent model)"
            ));
            return None;
        }
        Some(Value::Array(a)) => a,
        Some(_) => {
            d.error(format!("{path}: terms must be a list of tables"));
            return None;
        }
    };
    let mut terms = Vec::with_capacity(arr.len());
    let mut ok = true;
    for (i, v) in arr.iter().enumerate() {
        let p = format!("{path}.terms[{i}]");
        let Value::Table(tt) = v else {
            d.error(format!("{p}: expected {{ alpha = .., {coeff_key} = .. }}"));
            ok = false;
            continue;
        };
        check_keys(tt, &p, &["alpha", coeff_key], d);
        let alpha = req_f64(tt, "alpha", &p, d);
        let coeff = bounded(
            req_f64(tt, coeff_key, &p, d),
            Bound::NonNegative,
            coeff_key,
            &p,
            d,
        );
        match (alpha, coeff) {
            (Some(a), Some(c)) if (0.0..=MAX_ALPHA).contains(&a) => {
                terms.push(PowerLawTerm { alpha: a, coeff: c })
            }
            (Some(a), _) if !(0.0..=MAX_ALPHA).contains(&a) => {
                d.error(format!("{p}: alpha must lie in [0, {MAX_ALPHA}] (got {a})"));
                ok = false;
            }
            _ => ok = false,
        }
    }
    if !ok {
        return None;
    }
    PowerLawNoiseModel::new(terms, lineic)
        .map_err(|e| d.error(format!("{path}: {e}")))
        .ok()
}

fn parse_link(root: &Table, d: &mut Diagnostics) -> Option<LinkConfig> {
    let Some(link) = sub_table(root, "link", "", d) else {
        if !root.contains_key("link") {
            d.error("link: section is required");
        }
        return None;
    };
    check_keys(
        link,
        "link",
        &[
            "carrier_frequency_hz",
            "input_power_w",
            "sensitivity_w",
            "entry",
        ],
        d,
    );
    let carrier = bounded(
        opt_f64(link, "carrier_frequency_hz", "link", d),
        Bound::Positive,
        "carrier_frequency_hz",
        "link",
        d,
    );
    let power = bounded(
        opt_f64(link, "input_power_w", "link", d),
        Bound::Positive,
        "input_power_w",
        "link",
        d,
    );
    let sensitivity = bounded(
        opt_f64(link, "sensitivity_w", "link", d),
        Bound::NonNegative,
        "sensitivity_w",
        "link",
        d,
    );
    let entries = match link.get("entry") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => {
            d.error("link.entry: expected a list of [[link.entry]] tables");
            &[]
        }
        None => &[],
    };
    let mut out = Vec::with_capacity(entries.len());
    let mut ids: Vec<String> = Vec::new();
    for (i, v) in entries.iter().enumerate() {
        let Value::Table(e) = v else {
            d.error(format!("link.entry[{i}]: expected a table"));
            continue;
        };
        let id = opt_str(e, "id", &format!("link.entry[{i}]"), d).unwrap_or("");
        if id.is_empty() {
            d.error(format!("link.entry[{i}]: id is required"));
        } else if ids.iter().any(|x| x == id) {
            d.error(format!("link.entry[{i}]: duplicate id '{id}'"));
        }
        ids.push(id.to_string());
        let kind = opt_str(e, "type", &format!("link.entry[{i}]"), d).unwrap_or("");
        match kind {
            "span" => {
                let p = format!("link.entry[{i}] span '{id}'");
                check_keys(
                    e,
                    &p,
                    &[
                        "type",
                        "id",
                        "length_km",
                        "loss_db",
                        "group_velocity_m_per_s",
                    ],
                    d,
                );
                let length = bounded(
                    req_f64(e, "length_km", &p, d),
                    Bound::Positive,
                    "length_km",
                    &p,
                    d,
                );
                let loss = bounded(
                    req_f64(e, "loss_db", &p, d),
                    Bound::NonNegative,
                    "loss_db",
                    &p,
                    d,
                );
                let v = bounded(
                    opt_f64(e, "group_velocity_m_per_s", &p, d),
                    Bound::Positive,
                    "group_velocity_m_per_s",
                    &p,
                    d,
                );
                out.push(EntryConfig {
                    id: id.into(),
                    kind: "span".into(),
                    length_km: length,
                    loss_db: loss,
                    group_velocity_m_per_s: v,
                    ..Default::default()
                });
            }
            "element" => {
                let p = format!("link.entry[{i}] element '{id}'");
                check_keys(
                    e,
                    &p,
                    &[
                        "type",
                        "id",
                        "kind",
                        "insertion_loss_db",
                        "gain_db",
                        "isolation_adjacent_db",
                        "isolation_other_db",
                        "bidirectional",
                    ],
                    d,
                );
                let ekind = opt_str(e, "kind", &p, d).unwrap_or("");
                if crate::link::ElementKind::parse(ekind).is_none() {
                    d.error(format!(
                        "{p}: unknown kind '{ekind}' (expected oadm, connector, amplifier or coupler)"
                    ));
                }
                let nonneg = |key: &str, d: &mut Diagnostics| {
                    bounded(opt_f64(e, key, &p, d), Bound::NonNegative, key, &p, d)
                };
                let il = nonneg("insertion_loss_db", d);
                let gain = nonneg("gain_db", d);
                let iso_a = nonneg("isolation_adjacent_db", d);
                let iso_o = nonneg("isolation_other_db", d);
                if gain.is_some_and(|g| g > 0.0) && ekind != "amplifier" {
                    d.error(format!("{p}: gain_db is only allowed on amplifiers"));
                }
                out.push(EntryConfig {
                    id: id.into(),
                    kind: ekind.into(),
                    insertion_loss_db: il,
                    gain_db: gain,
                    isolation_adjacent_db: iso_a,
                    isolation_other_db: iso_o,
                    bidirectional: opt_bool(e, "bidirectional", &p, d),
                    ..Default::default()
                });
            }
            other => d.error(format!(
                "link.entry[{i}] '{id}': type must be \"span\" or \"element\" (got \"{other}\")"
            )),
        }
    }
    if !out.iter().any(|e| e.kind == "span") {
        d.error("link: at least one span entry is required");
    }
    Some(LinkConfig {
        entries: out,
        carrier_frequency_hz: carrier,
        input_power_w: power,
        sensitivity_w: sensitivity,
    })
}

fn parse_noise(root: &Table, link: &mut LinkConfig, d: &mut Diagnostics) {
    let noise = sub_table(root, "noise", "", d);
    let span_ids: Vec<String> = link
        .entries
        .iter()
        .filter(|e| e.kind == "span")
        .map(|e| e.id.clone())
        .collect();
    if let Some(noise) = noise {
        for (key, v) in noise {
            let p = format!("noise.{key}");
            let Value::Table(t) = v else {
                d.error(format!("{p}: expected a section"));
                continue;
            };
            // A model applies to `spans = [...]` when given, else to the span
            // named by the section key.
            let targets: Vec<String> = match t.get("spans") {
                Some(Value::Array(a)) => a
                    .iter()
                    .filter_map(|x| x.as_str().map(str::to_string))
                    .collect(),
                Some(_) => {
                    d.error(format!("{p}: spans must be a list of span ids"));
                    continue;
                }
                None => vec![key.clone()],
            };
            let model = parse_terms(t, &p, "h_rad2_per_hz_per_km", true, d);
            for target in targets {
                if !span_ids.contains(&target) {
                    d.error(format!("{p}: span '{target}' is not defined in link"));
                    continue;
                }
                let entry = link
                    .entries
                    .iter_mut()
                    .find(|e| e.kind == "span" && e.id == target)
                    .expect("checked above");
                if entry.lineic_noise.is_some() {
                    d.error(format!("{p}: span '{target}' already has a noise model"));
                }
                entry.lineic_noise = model.clone();
            }
        }
    } else if !root.contains_key("noise") {
        d.error("noise: section is required");
    }
    for e in &link.entries {
        if e.kind == "span" && e.lineic_noise.is_none() && noise.is_some() {
            // Report only spans that no section (valid or not) mentioned.
            let mentioned = noise.is_some_and(|n| {
                n.iter().any(|(k, v)| {
                    k == &e.id
                        || v.get("spans")
                            .and_then(Value::as_array)
                            .is_some_and(|a| a.iter().any(|x| x.as_str() == Some(&e.id)))
                })
            });
            if !mentioned {
                d.error(format!("noise: no model for span '{}'", e.id));
            }
        }
    }
}

fn parse_servo(root: &Table, d: &mut Diagnostics) -> ServoSettings {
    let mut s = ServoSettings::default();
    let Some(t) = sub_table(root, "servo", "", d) else {
        return s;
    };
    let p = "servo";
    check_keys(
        t,
        p,
        &[
            "enabled",
            "loop_bandwidth_hz",
            "loop_bandwidth_fraction",
            "integrator_ratio",
            "actuator_range_hz",
            "detection_noise_rad2_per_hz",
        ],
        d,
    );
    if let Some(b) = opt_bool(t, "enabled", p, d) {
        s.enabled = b;
    }
    s.loop_bandwidth_hz = bounded(
        opt_f64(t, "loop_bandwidth_hz", p, d),
        Bound::Positive,
        "loop_bandwidth_hz",
        p,
        d,
    );
    if let Some(v) = bounded(
        opt_f64(t, "loop_bandwidth_fraction", p, d),
        Bound::Positive,
        "loop_bandwidth_fraction",
        p,
        d,
    ) {
        s.loop_bandwidth_fraction = v;
    }
    if let Some(v) = bounded(
        opt_f64(t, "integrator_ratio", p, d),
        Bound::NonNegative,
        "integrator_ratio",
        p,
        d,
    ) {
        s.integrator_ratio = v;
    }
    if let Some(v) = bounded(
        opt_f64(t, "actuator_range_hz", p, d),
        Bound::Positive,
        "actuator_range_hz",
        p,
        d,
    ) {
        s.actuator_range_hz = v;
    }
    if let Some(v) = bounded(
        opt_f64(t, "detection_noise_rad2_per_hz", p, d),
        Bound::NonNegative,
        "detection_noise_rad2_per_hz",
        p,
        d,
    ) {
        s.detection_noise_rad2_per_hz = v;
    }
    s
}

fn parse_sim(root: &Table, d: &mut Diagnostics) -> Option<SimSettings> {
    let Some(t) = sub_table(root, "sim", "", d) else {
        if !root.contains_key("sim") {
            d.error("sim: section is required");
            d.error("sim.seed: seed required for reproducibility");
        }
        return None;
    };
    let p = "sim";
    check_keys(
        t,
        p,
        &[
            "fs_hz",
            "duration_s",
            "seed",
            "cells_per_span",
            "realizations",
            "max_samples",
        ],
        d,
    );
    let fs = bounded(opt_f64(t, "fs_hz", p, d), Bound::Positive, "fs_hz", p, d).or(
        if t.contains_key("fs_hz") {
            None
        } else {
            Some(1.0e4)
        },
    );
    let duration = bounded(
        req_f64(t, "duration_s", p, d),
        Bound::Positive,
        "duration_s",
        p,
        d,
    );
    let seed = match t.get("seed") {
        None => {
            d.error("sim.seed: seed required for reproducibility");
            None
        }
        Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
        Some(_) => {
            d.error("sim.seed: must be a non-negative integer");
            None
        }
    };
    let cells =
        opt_count(t, "cells_per_span", p, d).unwrap_or(crate::noise::DEFAULT_CELLS_PER_SPAN);
    let realizations = opt_count(t, "realizations", p, d).unwrap_or(1);
    let max_samples = opt_count(t, "max_samples", p, d).unwrap_or(DEFAULT_MAX_SAMPLES);
    Some(SimSettings {
        fs_hz: fs?,
        duration_s: duration?,
        seed: seed?,
        cells_per_span: cells,
        realizations,
        max_samples,
    })
}

fn parse_analysis(root: &Table, d: &mut Diagnostics) -> AnalysisSettings {
    let mut a = AnalysisSettings::default();
    let Some(t) = sub_table(root, "analysis", "", d) else {
        return a;
    };
    let p = "analysis";
    check_keys(
        t,
        p,
        &[
            "welch_segment_samples",
            "welch_overlap",
            "counter_gate_s",
            "tracking_filter",
            "tracking_filter_hz",
            "unfiltered_bandwidth_hz",
            "taus_s",
            "rejection_frequency_hz",
            "integration_band_hz",
            "export_series",
        ],
        d,
    );
    a.welch_segment_samples = opt_count(t, "welch_segment_samples", p, d);
    if let Some(o) = opt_f64(t, "welch_overlap", p, d) {
        if (0.0..=0.9).contains(&o) {
            a.welch_overlap = o;
        } else {
            d.error(format!(
                "analysis: welch_overlap must lie in [0, 0.9] (got {o})"
            ));
        }
    }
    let pos =
        |key: &str, d: &mut Diagnostics| bounded(opt_f64(t, key, p, d), Bound::Positive, key, p, d);
    if let Some(v) = pos("counter_gate_s", d) {
        a.counter_gate_s = v;
    }
    if let Some(b) = opt_bool(t, "tracking_filter", p, d) {
        a.tracking_filter = b;
    }
    if let Some(v) = pos("tracking_filter_hz", d) {
        a.tracking_filter_hz = v;
    }
    if let Some(v) = pos("unfiltered_bandwidth_hz", d) {
        a.unfiltered_bandwidth_hz = v;
    }
    if let Some(v) = pos("rejection_frequency_hz", d) {
        a.rejection_frequency_hz = v;
    }
    if let Some(taus) = opt_f64_list(t, "taus_s", p, d) {
        if taus.is_empty()
            || taus.iter().any(|&x| x <= 0.0)
            || taus.windows(2).any(|w| w[1] <= w[0])
        {
            d.error("analysis: taus_s must be a non-empty, positive, increasing list");
        } else {
            a.taus_s = taus;
        }
    }
    if let Some(band) = opt_f64_list(t, "integration_band_hz", p, d) {
        if band.len() == 2 && band[0] > 0.0 && band[0] < band[1] {
            a.integration_band_hz = (band[0], band[1]);
        } else {
            d.error("analysis: integration_band_hz must be [f1, f2] with 0 < f1 < f2");
        }
    }
    if let Some(b) = opt_bool(t, "export_series", p, d) {
        a.export_series = b;
    }
    a
}

fn parse_outputs(root: &Table, d: &mut Diagnostics) -> Option<PathBuf> {
    let t = sub_table(root, "outputs", "", d)?;
    check_keys(t, "outputs", &["directory"], d);
    opt_str(t, "directory", "outputs", d).map(PathBuf::from)
}

fn parse_name(root: &Table, d: &mut Diagnostics) -> String {
    match opt_str(root, "name", "", d) {
        Some(n) if !n.is_empty() => n.to_string(),
        _ => {
            d.error("name: scenario name is required");
            String::new()
        }
    }
}

fn parse_scenario(root: &Table, d: &mut Diagnostics) -> Option<Scenario> {
    check_keys(
        root,
        "top level",
        &[
            "name", "link", "noise", "servo", "sim", "analysis", "outputs",
        ],
        d,
    );
    let name = parse_name(root, d);
    let mut link_cfg = parse_link(root, d);
    if let Some(l) = link_cfg.as_mut() {
        parse_noise(root, l, d);
    }
    let servo = parse_servo(root, d);
    let sim = parse_sim(root, d);
    let analysis = parse_analysis(root, d);
    let output_dir = parse_outputs(root, d);

    // Cross-field checks need a well-formed link.
    let link = if d.is_valid() {
        match build_link(link_cfg.as_ref()?) {
            Ok(l) => Some(l),
            Err(e) => {
                d.error(format!("link: {e}"));
                None
            }
        }
    } else {
        None
    };
    let (link, sim) = (link?, sim?);
    check_scenario(&link, &servo, &sim, &analysis, d);
    let budget = crate::link::link_budget(&link);
    for w in budget.warnings {
        d.warn(format!("budget: {w}"));
    }
    Some(Scenario {
        name,
        link,
        servo,
        sim,
        analysis,
        output_dir,
    })
}

fn check_scenario(
    link: &LinkTopology,
    servo: &ServoSettings,
    sim: &SimSettings,
    analysis: &AnalysisSettings,
    d: &mut Diagnostics,
) {
    let tau = link.one_way_delay_s();
    let n = sim.n_samples();
    if n > sim.max_samples {
        d.error(format!(
            "sim: duration_s x fs_hz = {n} samples exceeds max_samples = {}",
            sim.max_samples
        ));
    }
    if sim.duration_s < 100.0 * tau {
        d.error(format!(
            "sim: duration_s must be at least 100 x the one-way delay ({:.3e} s)",
            100.0 * tau
        ));
    }
    let cap = loop_bandwidth_limit(tau).unwrap_or(f64::INFINITY);
    let bw = servo.bandwidth_for(tau);
    if servo.enabled && bw > sim.fs_hz / 10.0 {
        d.error(format!(
            "servo: loop bandwidth {bw:.1} Hz needs fs_hz of at least {:.0} Hz",
            10.0 * bw
        ));
    }
    if servo.enabled && bw > cap {
        d.error(format!(
            "servo: loop bandwidth {bw:.1} Hz exceeds the delay cap {cap:.1} Hz; the loop would be unstable"
        ));
    }
    let nyquist = sim.fs_hz / 2.0;
    if analysis.tracking_filter_hz >= nyquist {
        d.error("analysis: tracking_filter_hz must be below fs_hz / 2");
    }
    if analysis.unfiltered_bandwidth_hz >= nyquist {
        d.error("analysis: unfiltered_bandwidth_hz must be below fs_hz / 2");
    }
    let gate_samples = analysis.counter_gate_s * sim.fs_hz;
    if gate_samples < 1.0 - 1e-9 {
        d.error("analysis: counter_gate_s is shorter than one sample");
    } else if (gate_samples - gate_samples.round()).abs() > 1e-6 * gate_samples {
        d.error("analysis: counter_gate_s must be an integer number of samples");
    }
    let lock = crate::servo::ServoConfig::for_bandwidth(bw, servo.integrator_ratio).lock_time_s();
    let usable = sim.duration_s - if servo.enabled { lock } else { 0.0 };
    for &tau_s in &analysis.taus_s {
        let m = tau_s / analysis.counter_gate_s;
        if (m - m.round()).abs() > 1e-6 * m || m.round() < 1.0 {
            d.error(format!(
                "analysis: tau {tau_s} s is not a multiple of counter_gate_s"
            ));
        } else if 3.0 * tau_s > usable {
            d.error(format!(
                "analysis: tau {tau_s} s needs at least {} s of locked data",
                3.0 * tau_s
            ));
        } else if tau_s > sim.duration_s / 10.0 {
            d.warn(format!(
                "analysis: tau {tau_s} s exceeds duration/10; the synthesized noise has no content below 1/duration"
            ));
        }
    }
    let (f1, f2) = analysis.integration_band_hz;
    if f2 > nyquist {
        d.error("analysis: integration band extends beyond fs_hz / 2");
    }
    let seg = analysis
        .welch_segment_samples
        .unwrap_or_else(|| crate::metrology::WelchConfig::for_length(n, 8).segment_len);
    let analysed = usable * sim.fs_hz;
    if (seg as f64) > analysed {
        d.error(format!(
            "analysis: welch_segment_samples ({seg}) exceeds the locked record ({} samples)",
            analysed as usize
        ));
    } else {
        let step = (seg as f64 * (1.0 - analysis.welch_overlap)).max(1.0);
        let segs = ((analysed - seg as f64) / step).floor() as usize + 1;
        if segs < 8 {
            d.warn(format!(
                "analysis: only {segs} Welch segments (8 recommended)"
            ));
        }
        let df = sim.fs_hz / seg as f64;
        if f1 < df {
            d.error(format!(
                "analysis: integration band starts below the first Welch bin ({df:.3e} Hz)"
            ));
        }
        if analysis.rejection_frequency_hz < df || analysis.rejection_frequency_hz >= cap {
            d.error(format!(
                "analysis: rejection_frequency_hz must lie in [{df:.3e}, {cap:.1}) Hz"
            ));
        }
    }
}

fn parse_route(root: &Table, d: &mut Diagnostics) -> Option<RouteConfig> {
    check_keys(
        root,
        "top level",
        &["name", "route", "analysis", "outputs"],
        d,
    );
    let name = parse_name(root, d);
    let t = sub_table(root, "route", "", d)?;
    let p = "route";
    check_keys(
        t,
        p,
        &[
            "total_length_km",
            "total_loss_db",
            "loss_db_per_km",
            "max_segment_loss_db",
            "min_loop_bandwidth_hz",
            "group_velocity_m_per_s",
            "station_penalty_rad2_per_hz",
            "carrier_frequency_hz",
            "noise",
        ],
        d,
    );
    let length = bounded(
        req_f64(t, "total_length_km", p, d),
        Bound::Positive,
        "total_length_km",
        p,
        d,
    );
    let total_loss = bounded(
        opt_f64(t, "total_loss_db", p, d),
        Bound::Positive,
        "total_loss_db",
        p,
        d,
    );
    let per_km = bounded(
        opt_f64(t, "loss_db_per_km", p, d),
        Bound::Positive,
        "loss_db_per_km",
        p,
        d,
    );
    let loss = match (
        total_loss,
        per_km,
        t.contains_key("total_loss_db"),
        t.contains_key("loss_db_per_km"),
    ) {
        (Some(_), _, true, true) => {
            d.error("route: give total_loss_db or loss_db_per_km, not both");
            None
        }
        (Some(l), _, _, _) => Some(l),
        (None, Some(k), _, _) => length.map(|len| k * len),
        (None, None, false, false) => {
            d.error("route: total_loss_db (or loss_db_per_km) is required");
            None
        }
        _ => None,
    };
    let max_loss = bounded(
        req_f64(t, "max_segment_loss_db", p, d),
        Bound::Positive,
        "max_segment_loss_db",
        p,
        d,
    );
    let min_bw = bounded(
        opt_f64(t, "min_loop_bandwidth_hz", p, d),
        Bound::NonNegative,
        "min_loop_bandwidth_hz",
        p,
        d,
    )
    .unwrap_or(100.0);
    let v = bounded(
        opt_f64(t, "group_velocity_m_per_s", p, d),
        Bound::Positive,
        "group_velocity_m_per_s",
        p,
        d,
    )
    .unwrap_or(DEFAULT_GROUP_VELOCITY);
    let penalty = bounded(
        opt_f64(t, "station_penalty_rad2_per_hz", p, d),
        Bound::NonNegative,
        "station_penalty_rad2_per_hz",
        p,
        d,
    )
    .unwrap_or(0.0);
    let carrier = bounded(
        opt_f64(t, "carrier_frequency_hz", p, d),
        Bound::Positive,
        "carrier_frequency_hz",
        p,
        d,
    )
    .unwrap_or(DEFAULT_CARRIER_HZ);
    let noise = match sub_table(t, "noise", "route.", d) {
        Some(n) => parse_terms(n, "route.noise", "h_rad2_per_hz_per_km", true, d),
        None => {
            d.error("route.noise: lineic noise model is required");
            None
        }
    };
    let mut measurement = MeasurementModel {
        nu0_hz: carrier,
        ..Default::default()
    };
    let mut taus = vec![1.0, 10.0, 100.0, 1000.0];
    if let Some(a) = sub_table(root, "analysis", "", d) {
        check_keys(
            a,
            "analysis",
            &[
                "taus_s",
                "tracking_filter_hz",
                "f_max_hz",
                "loop_bandwidth_fraction",
                "integrator_ratio",
            ],
            d,
        );
        if let Some(list) = opt_f64_list(a, "taus_s", "analysis", d) {
            if list.is_empty()
                || list.iter().any(|&x| x <= 0.0)
                || list.windows(2).any(|w| w[1] <= w[0])
            {
                d.error("analysis: taus_s must be a non-empty, positive, increasing list");
            } else {
                taus = list;
            }
        }
        if let Some(b) = bounded(
            opt_f64(a, "tracking_filter_hz", "analysis", d),
            Bound::Positive,
            "tracking_filter_hz",
            "analysis",
            d,
        ) {
            measurement.filter_bandwidth_hz = Some(b);
        }
        if let Some(f) = bounded(
            opt_f64(a, "f_max_hz", "analysis", d),
            Bound::Positive,
            "f_max_hz",
            "analysis",
            d,
        ) {
            measurement.f_max_hz = f;
        }
        if let Some(f) = bounded(
            opt_f64(a, "loop_bandwidth_fraction", "analysis", d),
            Bound::Positive,
            "loop_bandwidth_fraction",
            "analysis",
            d,
        ) {
            measurement.loop_bandwidth_fraction = f;
        }
        if let Some(r) = bounded(
            opt_f64(a, "integrator_ratio", "analysis", d),
            Bound::NonNegative,
            "integrator_ratio",
            "analysis",
            d,
        ) {
            measurement.integrator_ratio = r;
        }
    }
    let output_dir = parse_outputs(root, d);
    let route = RouteSpec {
        total_length_km: length?,
        total_loss_db: loss?,
        lineic_noise: noise?,
        max_segment_loss_db: max_loss?,
        min_loop_bandwidth_hz: min_bw,
        group_velocity_m_per_s: v,
        station_penalty_rad2_per_hz: penalty,
    };
    if let Err(e) = crate::cascade::plan_cascade(&route) {
        d.error(format!("route: {e}"));
    }
    Some(RouteConfig {
        name,
        route,
        taus_s: taus,
        measurement,
        output_dir,
    })
}

/// Scenario fragment for one planned segment, runnable with `run`.
pub fn segment_scenario_text(
    name: &str,
    route: &RouteSpec,
    length_km: f64,
    loss_db: f64,
    seed: u64,
) -> String {
    let mut terms = String::new();
    for (i, t) in route.lineic_noise.terms().iter().enumerate() {
        if i > 0 {
            terms.push_str(", ");
        }
        terms.push_str(&format!(
            "{{ alpha = {:?}, h_rad2_per_hz_per_km = {:?} }}",
            t.alpha, t.coeff
        ));
    }
    let tau = length_km * 1000.0 / route.group_velocity_m_per_s;
    let duration = (200.0f64).max(100.0 * tau);
    format!(
        "# One compensated segment of route '{name}'.\n\
         name = \"{name}-segment\"\n\n\
         [link]\n\
         input_power_w = 2.0e-3\n\
         sensitivity_w = {DEFAULT_SENSITIVITY_W:?}\n\n\
         [[link.entry]]\n\
         type = \"span\"\n\
         id = \"segment\"\n\
         length_km = {length_km:?}\n\
         loss_db = {loss_db:?}\n\
         group_velocity_m_per_s = {:?}\n\n\
         [noise.segment]\n\
         terms = [{terms}]\n\n\
         [servo]\n\
         enabled = true\n\n\
         [sim]\n\
         fs_hz = 10000.0\n\
         duration_s = {duration:?}\n\
         seed = {seed}\n\
         cells_per_span = 16\n\
         realizations = 2\n\n\
         [analysis]\n\
         taus_s = [1.0, 2.0, 5.0, 10.0, 20.0]\n",
        route.group_velocity_m_per_s
    )
}
