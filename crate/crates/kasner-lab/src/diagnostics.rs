//! Run configuration, the structured-text container, residual reports and the
//! commands behind the `kasnerlab` binary.
//!
//! Every file written here starts with the artifact version and the hash of
//! the configuration that produced it. Floats are written in shortest
//! round-trip form, so rerunning a command with the same inputs reproduces
//! its outputs byte for byte.

use crate::asym_data::{validate_exponents, AsymptoticDataSet, DataSpec, SeamReport};
use crate::evolution::{eta_cauchy_check, evolve, inset_margin, EnergyTrace, EvolveOptions, StateField, TRACE_COLUMNS};
use crate::frame::{hamiltonian_residual, momentum_residual_evolved};
use crate::grid::{max_abs, FdOrder, GridMode, LogTimeGrid, Quadrature, SpatialGrid, Symmetry, TensorField};
use crate::iteration::{build_tower, fit_decay_rate, zeroth_iterate, IterateSet, TowerOptions};
use crate::{Error, Result, VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Box side.
    pub delta: f64,
    /// Points per axis.
    pub n_pts: usize,
    pub mode: GridMode,
    /// 2 or 4.
    pub fd_order: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { delta: 1.0, n_pts: 16, mode: GridMode::Periodic, fd_order: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// Defaults to `1e-6 * t_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    pub t_max: f64,
    pub n_steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_min: None, t_max: 1.0, n_steps: 64 }
    }
}

/// Which tower levels are stored in full in the tower file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Snapshots {
    /// Only the data; readers rebuild the levels.
    None,
    /// The highest level.
    Top,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TowerConfig {
    pub n_max: usize,
    pub quadrature: Quadrature,
    pub snapshots: Snapshots,
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig { n_max: 3, quadrature: Quadrature::Cubic, snapshots: Snapshots::None }
    }
}

pub const MAX_TOWER_LEVEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub eta: f64,
    pub t_end: f64,
    #[serde(rename = "N0")]
    pub n0: f64,
    pub s: usize,
    pub sigma: f64,
    pub cfl: f64,
    pub dt_fraction: f64,
    pub cadence: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<f64>,
    /// Tower level used as background; defaults to `tower.n_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    /// Run a second evolution from `eta * cauchy_factor` and compare.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cauchy_factor: Option<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        let o = EvolveOptions::default();
        EvolveConfig {
            eta: 1e-3,
            t_end: 1e-2,
            n0: o.n0,
            s: o.s,
            sigma: o.sigma,
            cfl: o.cfl,
            dt_fraction: o.dt_fraction,
            cadence: o.cadence,
            ceiling: None,
            level: None,
            cauchy_factor: None,
        }
    }
}

/// Residual families of the tower report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// spacetime Ricci of each level
    R4,
    /// successive differences of `k`
    Dk,
    /// Hamiltonian constraint
    Ham,
    /// momentum constraint, per frame index
    Mom,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::R4 => "r4",
            Family::Dk => "dk",
            Family::Ham => "ham",
            Family::Mom => "mom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub families: Vec<Family>,
    /// Fit window as fractions of `t_max`.
    pub window: [f64; 2],
    pub slope_tol: f64,
    /// Largest acceptable data residual or seam jump.
    pub data_tol: f64,
    /// Series whose scale-free size stays below this are reported as zero.
    pub noise_floor: f64,
    /// Largest acceptable relative symmetry violation during evolution.
    pub symmetry_tol: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            families: vec![Family::R4, Family::Dk, Family::Ham, Family::Mom],
            window: [1e-4, 1e-1],
            slope_tol: 0.15,
            data_tol: 1e-3,
            noise_floor: 1e-9,
            symmetry_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub data: DataSpec,
    pub tower: TowerConfig,
    pub evolve: EvolveConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            data: DataSpec::default(),
            tower: TowerConfig::default(),
            evolve: EvolveConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// The part of the configuration a tower depends on.
#[derive(Serialize)]
struct TowerKey<'a> {
    seed: u64,
    grid: &'a GridConfig,
    time: &'a TimeConfig,
    data: &'a DataSpec,
    n_max: usize,
    quadrature: Quadrature,
}

fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses TOML text, applies `key.path=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig =
            toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file at `path` (defaults only when `None`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_toml())
    }

    /// Hash of the sections a tower depends on.
    pub fn tower_key(&self) -> String {
        let key = TowerKey {
            seed: self.seed,
            grid: &self.grid,
            time: &self.time,
            data: &self.data,
            n_max: self.tower.n_max,
            quadrature: self.tower.quadrature,
        };
        sha256_hex(&toml::to_string(&key).expect("config serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.delta > 0.0 && g.delta.is_finite()) {
            return Err(config_err(format!("grid.delta must be a positive number, got {}", g.delta)));
        }
        if g.n_pts < 8 {
            return Err(config_err(format!("grid.n_pts must be at least 8, got {}", g.n_pts)));
        }
        if g.fd_order != 2 && g.fd_order != 4 {
            return Err(config_err(format!("grid.fd_order must be 2 or 4, got {}", g.fd_order)));
        }
        let t = &self.time;
        if !(t.t_max > 0.0 && t.t_max.is_finite()) {
            return Err(config_err(format!("time.t_max must be a positive number, got {}", t.t_max)));
        }
        let t_min = self.t_min();
        if !(t_min > 0.0 && t_min < t.t_max) {
            return Err(config_err(format!("time.t_min must lie in (0, t_max = {}), got {t_min}", t.t_max)));
        }
        if t.n_steps < 8 {
            return Err(config_err(format!("time.n_steps must be at least 8, got {}", t.n_steps)));
        }
        if self.tower.n_max > MAX_TOWER_LEVEL {
            return Err(config_err(format!(
                "tower.n_max must be at most {MAX_TOWER_LEVEL}, got {}",
                self.tower.n_max
            )));
        }
        let e = &self.evolve;
        if !(e.eta >= t_min && e.eta < e.t_end && e.t_end <= t.t_max) {
            return Err(config_err(format!(
                "evolve.eta and evolve.t_end must satisfy time.t_min <= eta < t_end <= time.t_max; \
                 got eta = {}, t_end = {}, t_min = {t_min}, t_max = {}",
                e.eta, e.t_end, t.t_max
            )));
        }
        if !(e.cfl > 0.0) || !(e.dt_fraction > 0.0 && e.dt_fraction <= 1.0) || e.cadence == 0 || !(e.sigma > 0.0) {
            return Err(config_err(
                "evolve.cfl and evolve.sigma must be positive, evolve.dt_fraction in (0, 1], evolve.cadence at least 1",
            ));
        }
        if e.s > 4 {
            return Err(config_err(format!("evolve.s must be at most 4, got {}", e.s)));
        }
        if let Some(c) = e.ceiling {
            if !(c > 0.0) {
                return Err(config_err(format!("evolve.ceiling must be positive, got {c}")));
            }
        }
        if let Some(l) = e.level {
            if l > self.tower.n_max {
                return Err(config_err(format!("evolve.level = {l} exceeds tower.n_max = {}", self.tower.n_max)));
            }
        }
        if let Some(f) = e.cauchy_factor {
            if !(f > 0.0 && f < 1.0) || e.eta * f < t_min {
                return Err(config_err(format!(
                    "evolve.cauchy_factor must lie in (0, 1) with eta * factor >= time.t_min, got {f}"
                )));
            }
        }
        let r = &self.report;
        let [w0, w1] = r.window;
        if !(w0 > 0.0 && w0 < w1 && w1 <= 1.0) || w1 / w0 < 10f64.powf(1.5) {
            return Err(config_err(format!(
                "report.window must satisfy 0 < lo < hi <= 1 and span at least 1.5 decades, got [{w0}, {w1}]"
            )));
        }
        if w0 * t.t_max < t_min {
            return Err(config_err(format!("report.window starts below time.t_min: {w0} * t_max < {t_min}")));
        }
        if r.families.is_empty() {
            return Err(config_err("report.families must name at least one of r4, dk, ham, mom"));
        }
        for (name, v) in [
            ("report.slope_tol", r.slope_tol),
            ("report.data_tol", r.data_tol),
            ("report.noise_floor", r.noise_floor),
            ("report.symmetry_tol", r.symmetry_tol),
        ] {
            if !(v > 0.0) {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.data.random_amplitude >= 0.0) {
            return Err(config_err("data.random_amplitude must be non-negative"));
        }
        Ok(())
    }

    pub fn t_min(&self) -> f64 {
        self.time.t_min.unwrap_or(1e-6 * self.time.t_max)
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.grid.delta, self.grid.n_pts, self.grid.mode, FdOrder::from_int(self.grid.fd_order)?)
    }

    pub fn times(&self) -> Result<LogTimeGrid> {
        LogTimeGrid::new(self.t_min(), self.time.t_max, self.time.n_steps)
    }

    pub fn tower_options(&self) -> TowerOptions {
        TowerOptions { quadrature: self.tower.quadrature, ..TowerOptions::default() }
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        let e = &self.evolve;
        EvolveOptions {
            n0: e.n0,
            s: e.s,
            sigma: e.sigma,
            cfl: e.cfl,
            dt_fraction: e.dt_fraction,
            cadence: e.cadence,
            ceiling: e.ceiling,
            extra_times: Vec::new(),
        }
    }

    pub fn build_data(&self) -> Result<AsymptoticDataSet> {
        self.data.build(self.spatial_grid()?, self.seed)
    }
}

/// Sets `a.b.c = value` in a TOML table; the value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{spec}' is not of the form key.path=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override '{spec}' has an empty key segment")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override '{spec}': '{part}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// structured-text container

pub const CONTAINER_MAGIC: &str = "kasnerlab-container";

/// A named block of `key = value` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section { name: name.into(), entries: Vec::new() }
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn put_f64(&mut self, key: &str, v: f64) -> &mut Self {
        self.put(key, fmt_f64(v))
    }

    pub fn put_list(&mut self, key: &str, v: &[f64]) -> &mut Self {
        self.put(key, fmt_list(v))
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("section [{}] has no key '{key}'", self.name)))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.get(key)?).map_err(|e| Error::Format(format!("[{}] {key}: {e}", self.name)))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|e| Error::Format(format!("[{}] {key}: {e}", self.name)))
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<f64>> {
        parse_list(self.get(key)?).map_err(|e| Error::Format(format!("[{}] {key}: {e}", self.name)))
    }
}

/// Header plus ordered sections; fields are sections named `field NAME`.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub version: String,
    pub config_hash: String,
    pub sections: Vec<Section>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    let mut out = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:?}");
    }
    out
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|e| format!("'{t}': {e}")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_ascii_whitespace().map(parse_f64).collect()
}

fn symmetry_name(s: Symmetry) -> &'static str {
    match s {
        Symmetry::None => "none",
        Symmetry::Symmetric2 => "symmetric2",
        Symmetry::AntisymmetricLast2 => "antisymmetric_last2",
    }
}

fn symmetry_from_name(s: &str) -> Result<Symmetry> {
    match s {
        "none" => Ok(Symmetry::None),
        "symmetric2" => Ok(Symmetry::Symmetric2),
        "antisymmetric_last2" => Ok(Symmetry::AntisymmetricLast2),
        other => Err(Error::Format(format!("unknown symmetry '{other}'"))),
    }
}

impl Container {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Container { kind: kind.into(), version: VERSION.into(), config_hash: config_hash.into(), sections: Vec::new() }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("{} file has no section [{name}]", self.kind)))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn push_field(&mut self, name: &str, f: &TensorField) {
        let mut s = Section::new(format!("field {name}"));
        s.put("rank", f.rank).put("symmetry", symmetry_name(f.symmetry));
        for (q, c) in f.comps.iter().enumerate() {
            s.put_list(&format!("c{q}"), c);
        }
        self.push(s);
    }

    pub fn field(&self, name: &str) -> Result<TensorField> {
        let s = self.section(&format!("field {name}"))?;
        let rank = s.get_usize("rank")?;
        if rank > 3 {
            return Err(Error::Format(format!("field {name} has rank {rank}")));
        }
        let symmetry = symmetry_from_name(s.get("symmetry")?)?;
        let comps = (0..3usize.pow(rank as u32)).map(|q| s.get_list(&format!("c{q}"))).collect::<Result<Vec<_>>>()?;
        TensorField::new(rank, comps, symmetry)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CONTAINER_MAGIC}");
        let _ = writeln!(out, "kind = {}", self.kind);
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "config_hash = {}", self.config_hash);
        for s in &self.sections {
            let _ = writeln!(out, "\n[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CONTAINER_MAGIC => {}
            _ => return Err(Error::Format(format!("not a {CONTAINER_MAGIC} file"))),
        }
        let mut header: Vec<(String, String)> = Vec::new();
        let mut sections: Vec<Section> = Vec::new();
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push(Section::new(name));
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("line {}: expected 'key = value'", no + 1)))?;
            let entry = (k.trim().to_string(), v.trim().to_string());
            match sections.last_mut() {
                Some(s) => s.entries.push(entry),
                None => header.push(entry),
            }
        }
        let head = |key: &str| -> Result<String> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("container header lacks '{key}'")))
        };
        Ok(Container { kind: head("kind")?, version: head("version")?, config_hash: head("config_hash")?, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} file, found {}", self.kind)));
        }
        Ok(self)
    }
}

fn grid_section(grid: &SpatialGrid) -> Section {
    let mut s = Section::new("grid");
    s.put_f64("delta", grid.delta)
        .put("n_pts", grid.n)
        .put("mode", if grid.mode == GridMode::Periodic { "periodic" } else { "localized" })
        .put("fd_order", grid.order.as_int());
    s
}

fn grid_from_section(s: &Section) -> Result<SpatialGrid> {
    let mode = match s.get("mode")? {
        "periodic" => GridMode::Periodic,
        "localized" => GridMode::Localized,
        other => return Err(Error::Format(format!("unknown grid mode '{other}'"))),
    };
    SpatialGrid::new(s.get_f64("delta")?, s.get_usize("n_pts")?, mode, FdOrder::from_int(s.get_usize("fd_order")?)?)
}

/// Writes exponents, metric coefficients and the data summary.
pub fn data_to_container(data: &AsymptoticDataSet, config_hash: &str) -> Container {
    let mut c = Container::new("data", config_hash);
    c.push(grid_section(&data.grid));
    let mut m = Section::new("summary");
    let r = data.residual_summary();
    m.put_f64("eps", data.p.eps)
        .put_f64("residual_1", r[0])
        .put_f64("residual_2", r[1])
        .put_f64("residual_3", r[2])
        .put_f64("seam_log_c11", data.seam.log_c11)
        .put_f64("seam_kappa23", data.seam.kappa23)
        .put_f64("seam_kappa13", data.seam.kappa13);
    c.push(m);
    push_data_fields(&mut c, data);
    c
}

fn push_data_fields(c: &mut Container, data: &AsymptoticDataSet) {
    for i in 0..3 {
        c.push_field(&format!("p{}", i + 1), &TensorField::scalar(data.p.p[i].clone()));
    }
    c.push_field("c", &data.c);
}

/// Rebuilds a data set from a data or tower file.
pub fn data_from_container(c: &Container) -> Result<AsymptoticDataSet> {
    let grid = grid_from_section(c.section("grid")?)?;
    let p = [c.field("p1")?, c.field("p2")?, c.field("p3")?].map(|f| f.comps.into_iter().next().unwrap_or_default());
    if p.iter().any(|v| v.len() != grid.len()) {
        return Err(Error::Format("exponent fields do not match the grid".into()));
    }
    let p = validate_exponents(&grid, p)?;
    let mut data = AsymptoticDataSet::from_c(grid, p, c.field("c")?)?;
    if let Ok(s) = c.section("summary") {
        data.seam = SeamReport {
            log_c11: s.get_f64("seam_log_c11")?,
            kappa23: s.get_f64("seam_kappa23")?,
            kappa13: s.get_f64("seam_kappa13")?,
        };
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// residual report

/// How a fitted slope is judged against its prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// `|fitted - predicted| <= tol`
    Sharp,
    /// `fitted >= predicted - tol`: the prediction is an upper envelope.
    Envelope,
}

impl Bound {
    fn name(self) -> &'static str {
        match self {
            Bound::Sharp => "sharp",
            Bound::Envelope => "envelope",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "sharp" => Ok(Bound::Sharp),
            "envelope" => Ok(Bound::Envelope),
            other => Err(Error::Format(format!("unknown bound '{other}'"))),
        }
    }
}

/// One fitted series of a residual family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyResult {
    pub family: String,
    pub level: usize,
    /// `all` or the frame index `1..3`.
    pub component: String,
    pub bound: Bound,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub predicted: f64,
    /// NaN when the series sits below the noise floor.
    pub fitted: f64,
    pub r2: f64,
    pub below_floor: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub eps: f64,
    pub slope_tol: f64,
    pub results: Vec<FamilyResult>,
}

impl ResidualReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, family: &str, level: usize, component: &str) -> Option<&FamilyResult> {
        self.results.iter().find(|r| r.family == family && r.level == level && r.component == component)
    }

    /// Fixed-width slope table with predicted and fitted columns.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eps = {:.6}, slope tolerance = {}", self.eps, self.slope_tol);
        let _ = writeln!(
            out,
            "{:<6} {:>5} {:>9} {:>10} {:>10} {:>8} {:>9}  result",
            "family", "level", "component", "predicted", "fitted", "r2", "bound"
        );
        for r in &self.results {
            let (fitted, r2) = if r.below_floor {
                ("zero".to_string(), "-".to_string())
            } else {
                (format!("{:.4}", r.fitted), format!("{:.4}", r.r2))
            };
            let _ = writeln!(
                out,
                "{:<6} {:>5} {:>9} {:>10.4} {:>10} {:>8} {:>9}  {}",
                r.family,
                r.level,
                r.component,
                r.predicted,
                fitted,
                r2,
                r.bound.name(),
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }

    fn push_sections(&self, c: &mut Container) {
        let mut head = Section::new("report");
        head.put_f64("eps", self.eps).put_f64("slope_tol", self.slope_tol).put("series", self.results.len());
        c.push(head);
        for r in &self.results {
            let mut s = Section::new(format!("series {} {} {}", r.family, r.level, r.component));
            s.put("bound", r.bound.name())
                .put_f64("predicted", r.predicted)
                .put_f64("fitted", r.fitted)
                .put_f64("r2", r.r2)
                .put("below_floor", r.below_floor)
                .put("pass", r.pass)
                .put_list("t", &r.times)
                .put_list("norm", &r.norms);
            c.push(s);
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let head = c.section("report")?;
        let mut results = Vec::new();
        for s in c.sections.iter().filter(|s| s.name.starts_with("series ")) {
            let parts: Vec<&str> = s.name.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!("bad series header [{}]", s.name)));
            }
            let flag = |key: &str| -> Result<bool> {
                s.get(key)?.parse().map_err(|e| Error::Format(format!("[{}] {key}: {e}", s.name)))
            };
            results.push(FamilyResult {
                family: parts[1].to_string(),
                level: parts[2].parse().map_err(|e| Error::Format(format!("[{}]: {e}", s.name)))?,
                component: parts[3].to_string(),
                bound: Bound::from_name(s.get("bound")?)?,
                times: s.get_list("t")?,
                norms: s.get_list("norm")?,
                predicted: s.get_f64("predicted")?,
                fitted: s.get_f64("fitted")?,
                r2: s.get_f64("r2")?,
                below_floor: flag("below_floor")?,
                pass: flag("pass")?,
            });
        }
        Ok(ResidualReport { eps: head.get_f64("eps")?, slope_tol: head.get_f64("slope_tol")?, results })
    }
}

/// Fits one series; `scale` is the power of `t` that makes it dimensionless
/// for the noise test.
#[allow(clippy::too_many_arguments)]
fn judge(
    family: Family,
    level: usize,
    component: &str,
    bound: Bound,
    series: Vec<(f64, f64)>,
    predicted: f64,
    scale: f64,
    cfg: &ReportConfig,
) -> Result<FamilyResult> {
    let size = series.iter().map(|(t, v)| v * t.powf(-scale)).fold(0.0_f64, f64::max);
    let below_floor = size <= cfg.noise_floor || series.iter().any(|(_, v)| *v <= 0.0);
    let (fitted, r2, pass) = if below_floor {
        (f64::NAN, f64::NAN, true)
    } else {
        let fit = fit_decay_rate(&series)?;
        let pass = match bound {
            Bound::Sharp => (fit.slope - predicted).abs() <= cfg.slope_tol,
            Bound::Envelope => fit.slope >= predicted - cfg.slope_tol,
        };
        (fit.slope, fit.r2, pass)
    };
    let (times, norms) = series.into_iter().unzip();
    Ok(FamilyResult {
        family: family.name().to_string(),
        level,
        component: component.to_string(),
        bound,
        times,
        norms,
        predicted,
        fitted,
        r2,
        below_floor,
        pass,
    })
}

/// Nodes inside `[lo, hi] * t_max`.
pub fn window_nodes(times: &LogTimeGrid, window: [f64; 2]) -> Vec<usize> {
    let (lo, hi) = (window[0] * times.t_max, window[1] * times.t_max);
    (0..times.len()).filter(|&m| times.nodes[m] >= lo * (1.0 - 1e-9) && times.nodes[m] <= hi * (1.0 + 1e-9)).collect()
}

fn max_diff(a: &TensorField, b: &TensorField) -> f64 {
    a.comps
        .iter()
        .zip(&b.comps)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Decay fits of the configured residual families over the fit window.
///
/// Predictions from the data's `eps` and the level `n`:
/// `R4`: `-2 + n eps`, `k^[n] - k^[n-1]`: `-1 + n eps` (both sharp);
/// Hamiltonian: `-2 + eps`, momentum `I`: `-1 - max p_I + eps` (envelopes).
pub fn residual_report(tower: &[IterateSet], cfg: &ReportConfig) -> Result<ResidualReport> {
    let base = tower.first().ok_or_else(|| Error::Invalid("empty tower".into()))?;
    let eps = base.eps;
    let nodes = window_nodes(&base.times, cfg.window);
    let want = |f: Family| cfg.families.contains(&f);
    let max_p: [f64; 3] = std::array::from_fn(|i| base.p[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let mut results = Vec::new();
    for level in tower {
        let n = level.n;
        let mut r4 = Vec::new();
        let mut dk = Vec::new();
        let mut ham = Vec::new();
        let mut mom: [Vec<(f64, f64)>; 3] = Default::default();
        for &m in &nodes {
            let t = level.times.nodes[m];
            if want(Family::R4) {
                r4.push((t, level.spacetime_ricci_at(m)?.max_norm()));
            }
            if want(Family::Dk) && n > 0 {
                dk.push((t, max_diff(&level.k_at(m), &tower[n - 1].k_at(m))));
            }
            if want(Family::Ham) || want(Family::Mom) {
                let st = level.state_at(m)?;
                ham.push((t, max_abs(&hamiltonian_residual(&level.grid, &st))));
                let mo = momentum_residual_evolved(&level.grid, &st);
                for i in 0..3 {
                    mom[i].push((t, max_abs(&mo[i])));
                }
            }
        }
        let nf = n as f64;
        if want(Family::R4) {
            results.push(judge(Family::R4, n, "all", Bound::Sharp, r4, -2.0 + nf * eps, -2.0, cfg)?);
        }
        if want(Family::Dk) && n > 0 {
            results.push(judge(Family::Dk, n, "all", Bound::Sharp, dk, -1.0 + nf * eps, -1.0, cfg)?);
        }
        if want(Family::Ham) {
            results.push(judge(Family::Ham, n, "all", Bound::Envelope, ham, -2.0 + eps, -2.0, cfg)?);
        }
        if want(Family::Mom) {
            for (i, series) in mom.into_iter().enumerate() {
                let scale = -1.0 - max_p[i];
                results.push(judge(Family::Mom, n, &(i + 1).to_string(), Bound::Envelope, series, scale + eps, scale, cfg)?);
            }
        }
    }
    Ok(ResidualReport { eps, slope_tol: cfg.slope_tol, results })
}

// ---------------------------------------------------------------------------
// commands

/// What a command reports back: the text for the terminal and whether every
/// tolerance check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub text: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            2
        }
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn csv_banner(hash: &str) -> String {
    format!("# kasnerlab {VERSION} config_hash={hash}\n")
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Builds the data set, writes `data.txt` and checks its residuals.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let hash = cfg.hash();
    let data = cfg.build_data()?;
    data_to_container(&data, &hash).write(&out.join("data.txt"))?;
    let r = data.residual_summary();
    let worst = r.iter().cloned().fold(0.0, f64::max);
    let seam = data.seam.max();
    let pass = worst <= cfg.report.data_tol && seam <= cfg.report.data_tol;
    let mut text = String::new();
    let _ = writeln!(text, "config_hash = {hash}");
    let _ = writeln!(text, "eps = {:.6}", data.p.eps);
    let _ = writeln!(text, "momentum residuals = {:e} {:e} {:e}", r[0], r[1], r[2]);
    let _ = writeln!(text, "seam jump = {seam:e}");
    let _ = writeln!(text, "data tolerance {:e}: {}", cfg.report.data_tol, verdict(pass));
    let _ = writeln!(text, "wrote data.txt");
    Ok(Outcome { pass, text })
}

fn write_tower_file(cfg: &RunConfig, data: &AsymptoticDataSet, tower: &[IterateSet], report: &ResidualReport, path: &Path) -> Result<()> {
    let mut c = Container::new("tower", &cfg.hash());
    let mut meta = Section::new("tower");
    let times = &tower[0].times;
    meta.put("tower_key", cfg.tower_key())
        .put("n_max", tower.len() - 1)
        .put_f64("t_min", times.t_min)
        .put_f64("t_max", times.t_max)
        .put("n_steps", times.n_steps)
        .put_f64("eps", tower[0].eps);
    c.push(meta);
    c.push(grid_section(&data.grid));
    push_data_fields(&mut c, data);
    report.push_sections(&mut c);
    let stored: Vec<&IterateSet> = match cfg.tower.snapshots {
        Snapshots::None => Vec::new(),
        Snapshots::Top => tower.last().into_iter().filter(|l| l.n > 0).collect(),
        Snapshots::All => tower.iter().filter(|l| l.n > 0).collect(),
    };
    for level in stored {
        let mut s = Section::new(format!("level {}", level.n));
        s.put_list("asymmetry", &level.asymmetry);
        c.push(s);
        let (x, y) = level.differences();
        for (m, (xm, ym)) in x.iter().zip(y).enumerate() {
            c.push_field(&format!("X {} {m}", level.n), xm);
            c.push_field(&format!("Y {} {m}", level.n), ym);
        }
    }
    c.write(path)
}

fn residual_csv(report: &ResidualReport, hash: &str) -> String {
    let mut out = csv_banner(hash);
    out.push_str("family,level,component,t,norm\n");
    for r in &report.results {
        for (t, v) in r.times.iter().zip(&r.norms) {
            let _ = writeln!(out, "{},{},{},{t:?},{v:?}", r.family, r.level, r.component);
        }
    }
    out
}

/// Builds the tower up to `tower.n_max`, fits the residual families and
/// writes `tower.txt` and `residuals.csv`.
pub fn cmd_tower(cfg: &RunConfig, data_file: Option<&Path>, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let data = match data_file {
        Some(p) => data_from_container(&Container::read(p)?.expect_kind("data")?)?,
        None => cfg.build_data()?,
    };
    if data.grid != cfg.spatial_grid()? {
        return Err(config_err("data file grid differs from the [grid] section of the config"));
    }
    let tower = build_tower(&data, &cfg.times()?, cfg.tower.n_max, &cfg.tower_options())?;
    let report = residual_report(&tower, &cfg.report)?;
    let hash = cfg.hash();
    write_tower_file(cfg, &data, &tower, &report, &out.join("tower.txt"))?;
    std::fs::write(out.join("residuals.csv"), residual_csv(&report, &hash))?;
    let mut text = String::new();
    let _ = writeln!(text, "config_hash = {hash}");
    let asym = tower.iter().flat_map(|l| l.asymmetry.iter().cloned()).fold(0.0, f64::max);
    let _ = writeln!(text, "levels = {}, max k asymmetry before symmetrisation = {asym:e}", tower.len());
    text.push_str(&report.table());
    let _ = writeln!(text, "wrote tower.txt residuals.csv");
    Ok(Outcome { pass: report.pass(), text })
}

/// Tower levels `0..=level`, from stored snapshots when present.
fn tower_from_file(cfg: &RunConfig, path: &Path, level: usize) -> Result<Vec<IterateSet>> {
    let c = Container::read(path)?.expect_kind("tower")?;
    let meta = c.section("tower")?;
    if meta.get("tower_key")? != cfg.tower_key() {
        return Err(config_err(format!(
            "{} was built from different grid, time, data or tower settings than the current config",
            path.display()
        )));
    }
    let data = data_from_container(&c)?;
    let times = cfg.times()?;
    let level0 = zeroth_iterate(&data, &times);
    if level > 0 && c.has_section(&format!("level {level}")) {
        let mut out = vec![level0.clone()];
        for n in 1..=level {
            let Ok(s) = c.section(&format!("level {n}")) else {
                // lower levels are only needed for bookkeeping; rebuild them
                return build_tower(&data, &times, level, &cfg.tower_options());
            };
            let asymmetry = s.get_list("asymmetry")?;
            let mut x = Vec::with_capacity(times.len());
            let mut y = Vec::with_capacity(times.len());
            for m in 0..times.len() {
                x.push(c.field(&format!("X {n} {m}"))?);
                y.push(c.field(&format!("Y {n} {m}"))?);
            }
            out.push(IterateSet::from_differences(&level0, n, x, y, asymmetry)?);
        }
        return Ok(out);
    }
    build_tower(&data, &times, level, &cfg.tower_options())
}

fn checkpoint(state: &StateField, level: usize, hash: &str) -> Container {
    let mut c = Container::new("checkpoint", hash);
    let mut s = Section::new("state");
    s.put_f64("t", state.t).put_f64("eta", state.eta).put("level", level);
    c.push(s);
    c.push_field("e", &state.e);
    c.push_field("k", &state.k);
    c.push_field("gamma", &state.gamma);
    c
}

/// Evolves from the tower background and writes `trace.csv`,
/// `checkpoint.txt` and `evolve.txt`.
pub fn cmd_evolve(cfg: &RunConfig, tower_file: Option<&Path>, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let level = cfg.evolve.level.unwrap_or(cfg.tower.n_max);
    let tower = match tower_file {
        Some(p) => tower_from_file(cfg, p, level)?,
        None => build_tower(&cfg.build_data()?, &cfg.times()?, level, &cfg.tower_options())?,
    };
    let bg = &tower[level];
    let opts = cfg.evolve_options();
    let ev = &cfg.evolve;
    let run = evolve(bg, ev.eta, ev.t_end, &opts)?;
    let hash = cfg.hash();
    let mut csv = csv_banner(&hash);
    csv.push_str(&run.trace.to_csv());
    std::fs::write(out.join("trace.csv"), csv)?;
    checkpoint(run.last(), level, &hash).write(&out.join("checkpoint.txt"))?;

    let rows = &run.trace.rows;
    let sym = rows.iter().map(|r| r.sym_k.max(r.antisym_gamma)).fold(0.0, f64::max);
    let sym_pass = sym <= cfg.report.symmetry_tol;
    let mut summary = Container::new("evolve", &hash);
    let mut s = Section::new("run");
    s.put("level", level)
        .put_f64("eta", ev.eta)
        .put_f64("t_end", ev.t_end)
        .put("steps", run.steps)
        .put("rows", rows.len())
        .put_f64("symmetry_violation", sym)
        .put_f64("torsion_first", rows[0].monitors.torsion)
        .put_f64("torsion_last", rows[rows.len() - 1].monitors.torsion)
        .put_f64("remainder_last", run.trace.remainder_at(rows.len() - 1));
    if let Some(m) = inset_margin(bg, ev.eta, ev.t_end, ev.sigma)? {
        s.put_f64("inset_margin", m.coordinate)
            .put_f64("inset_cells", m.cells)
            .put("inset_exceeds_half_box", m.exceeds_half_box);
    }
    summary.push(s);
    let mut text = String::new();
    let _ = writeln!(text, "config_hash = {hash}");
    let _ = writeln!(text, "steps = {}, rows = {}", run.steps, rows.len());
    let _ = writeln!(text, "symmetry violation = {sym:e} (tolerance {:e}): {}", cfg.report.symmetry_tol, verdict(sym_pass));
    let _ = writeln!(
        text,
        "torsion {:e} at t = {:e}, {:e} at t = {:e}",
        rows[0].monitors.torsion,
        rows[0].t,
        rows[rows.len() - 1].monitors.torsion,
        rows[rows.len() - 1].t
    );
    let mut pass = sym_pass;
    if let Some(f) = ev.cauchy_factor {
        let c = eta_cauchy_check(bg, ev.eta, ev.eta * f, ev.t_end, &opts)?;
        let mut cs = Section::new("cauchy");
        cs.put_f64("eta_lo", ev.eta * f)
            .put_f64("difference", c.difference)
            .put_f64("remainder", c.remainder)
            .put("pass", c.pass);
        summary.push(cs);
        let _ = writeln!(
            text,
            "eta-Cauchy: difference {:e} vs remainder {:e}: {}",
            c.difference,
            c.remainder,
            verdict(c.pass)
        );
        pass &= c.pass;
    }
    summary.write(&out.join("evolve.txt"))?;
    let _ = writeln!(text, "wrote trace.csv checkpoint.txt evolve.txt");
    Ok(Outcome { pass, text })
}

/// A parsed energy trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let banner = lines.next().unwrap_or_default();
        let config_hash = banner
            .split_whitespace()
            .find_map(|w| w.strip_prefix("config_hash="))
            .ok_or_else(|| Error::Format("trace CSV lacks its '# kasnerlab ... config_hash=' line".into()))?
            .to_string();
        let header = lines.next().ok_or_else(|| Error::Format("trace CSV has no header".into()))?;
        if header != TRACE_COLUMNS {
            return Err(Error::Format("trace CSV header does not match the energy trace columns".into()));
        }
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (no, l) in lines.enumerate() {
            let row = l.split(',').map(parse_f64).collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("trace row {}: {e}", no + 1)))?;
            if row.len() != columns.len() {
                return Err(Error::Format(format!("trace row {} has {} values", no + 1, row.len())));
            }
            rows.push(row);
        }
        Ok(TraceFile { config_hash, columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

const TRACE_PLOT_COLUMNS: [&str; 6] = ["e_d_h0", "k_d_h0", "g_d_h0", "torsion", "ham", "r4_00"];

enum Input {
    Tower(Container, ResidualReport),
    Trace(TraceFile),
}

fn read_input(path: &Path) -> Result<Input> {
    let text = std::fs::read_to_string(path)?;
    if text.starts_with(CONTAINER_MAGIC) {
        let c = Container::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let c = c.expect_kind("tower").map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let r = ResidualReport::from_container(&c)?;
        return Ok(Input::Tower(c, r));
    }
    TraceFile::parse(&text).map(Input::Trace).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Summarises tower and trace files into `summary.txt` plus plot data
/// `plot_<family>.csv` of `log10 t` against `log10 norm`.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<Outcome> {
    if inputs.is_empty() {
        return Err(config_err("report needs at least one tower.txt or trace.csv input"));
    }
    let parsed = inputs.iter().map(|p| read_input(p)).collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    let hashes: Vec<&str> = parsed
        .iter()
        .map(|i| match i {
            Input::Tower(c, _) => c.config_hash.as_str(),
            Input::Trace(t) => t.config_hash.as_str(),
        })
        .collect();
    let banner = format!("# kasnerlab {VERSION} inputs={}\n", hashes.join(","));
    let mut summary = String::new();
    let _ = writeln!(summary, "kasnerlab report");
    let _ = writeln!(summary, "version = {VERSION}");
    let _ = writeln!(summary, "inputs = {}", hashes.join(","));
    let mut plots: Vec<(String, String)> = Vec::new();
    let mut plot = |name: &str, line: String| match plots.iter_mut().find(|(n, _)| n == name) {
        Some((_, body)) => body.push_str(&line),
        None => plots.push((name.to_string(), line)),
    };
    let mut pass = true;
    for (k, input) in parsed.iter().enumerate() {
        match input {
            Input::Tower(c, report) => {
                let _ = writeln!(summary, "\n[input {k}: residual slopes, config_hash = {}]", c.config_hash);
                summary.push_str(&report.table());
                pass &= report.pass();
                for r in &report.results {
                    for (t, v) in r.times.iter().zip(&r.norms) {
                        if *v > 0.0 {
                            plot(&r.family, format!("{k},{},{},{:?},{:?}\n", r.level, r.component, t.log10(), v.log10()));
                        }
                    }
                }
            }
            Input::Trace(tr) => {
                let _ = writeln!(summary, "\n[input {k}: energy trace, config_hash = {}]", tr.config_hash);
                let t = tr.column("t").unwrap_or_default();
                let _ = writeln!(summary, "rows = {}", tr.rows.len());
                if let (Some(a), Some(b)) = (t.first(), t.last()) {
                    let _ = writeln!(summary, "t from {a:e} to {b:e}");
                }
                for name in TRACE_PLOT_COLUMNS {
                    let v = tr.column(name).unwrap_or_default();
                    let series: Vec<(f64, f64)> = t.iter().cloned().zip(v.iter().cloned()).filter(|(_, y)| *y > 0.0).collect();
                    let slope = fit_decay_rate(&series).map(|f| format!("{:.4}", f.slope)).unwrap_or_else(|_| "n/a".into());
                    let first = v.first().copied().unwrap_or(f64::NAN);
                    let last = v.last().copied().unwrap_or(f64::NAN);
                    let _ = writeln!(summary, "{name:<8} first {first:e} last {last:e} slope {slope}");
                    for (x, y) in &series {
                        plot("trace", format!("{k},{name},{:?},{:?}\n", x.log10(), y.log10()));
                    }
                }
                let sym = ["sym_k", "antisym_gamma"]
                    .iter()
                    .flat_map(|c| tr.column(c).unwrap_or_default())
                    .fold(0.0, f64::max);
                let _ = writeln!(summary, "max symmetry violation {sym:e}");
            }
        }
    }
    std::fs::write(out.join("summary.txt"), &summary)?;
    let mut names = Vec::new();
    for (name, body) in plots {
        let header = if name == "trace" { "input,column,log10_t,log10_norm\n" } else { "input,level,component,log10_t,log10_norm\n" };
        let file = format!("plot_{name}.csv");
        std::fs::write(out.join(&file), format!("{banner}{header}{body}"))?;
        names.push(file);
    }
    let mut text = summary;
    let _ = writeln!(text, "\nwrote summary.txt {}", names.join(" "));
    Ok(Outcome { pass, text })
}

// ---------------------------------------------------------------------------
// self test

fn homogeneous_config(n: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.n_pts = n;
    cfg.time.n_steps = 32;
    cfg.tower.n_max = 2;
    cfg
}

/// The exact-solution checks at 16^3, as `(name, pass, detail)` lines.
pub fn selftest_checks() -> Result<Vec<(String, bool, String)>> {
    let mut out = Vec::new();
    let cfg = homogeneous_config(16);
    let data = cfg.build_data()?;
    let r = data.residual_summary().iter().cloned().fold(0.0, f64::max);
    out.push(("homogeneous data has zero residuals".into(), r == 0.0, format!("max {r:e}")));

    let times = cfg.times()?;
    let level0 = zeroth_iterate(&data, &times);
    let m = times.len() / 2;
    let t = times.nodes[m];
    let e = level0.e_at(m);
    let st = level0.state_at(m)?;
    let mut id_err = 0.0_f64;
    for x in 0..data.grid.len() {
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|a| e.comps[i * 3 + a][x] * st.omega.comps[a * 3 + j][x]).sum();
                id_err = id_err.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    out.push(("zeroth frame times coframe is the identity".into(), id_err <= 1e-12, format!("{id_err:e}")));
    let k = level0.k_at(m);
    let tr_err = (0..data.grid.len()).map(|x| (k.comps[0][x] + k.comps[4][x] + k.comps[8][x] + 1.0 / t).abs() * t).fold(0.0, f64::max);
    out.push(("zeroth trace k equals -1/t".into(), tr_err <= 1e-12, format!("{tr_err:e}")));

    let tower = build_tower(&data, &times, cfg.tower.n_max, &cfg.tower_options())?;
    let mut fixed = 0.0_f64;
    for level in &tower[1..] {
        for m in 0..times.len() {
            let scale = times.nodes[m];
            fixed = fixed.max(max_diff(&level.k_at(m), &level0.k_at(m)) * scale);
            fixed = fixed.max(max_diff(&level.scaled_frame_at(m), &level0.scaled_frame_at(m)));
        }
    }
    out.push(("homogeneous iterates equal level 0".into(), fixed <= 1e-10, format!("{fixed:e}")));

    let mut r4 = 0.0_f64;
    for level in &tower {
        for m in 0..times.len() {
            let t = times.nodes[m];
            r4 = r4.max(level.spacetime_ricci_at(m)?.max_norm() * t * t);
        }
    }
    out.push(("Kasner spacetime Ricci vanishes".into(), r4 <= 1e-9, format!("max t^2 |R4| = {r4:e}")));

    let run = evolve(&tower[cfg.tower.n_max], 1e-2, 1e-1, &EvolveOptions::default())?;
    let rel = kasner_remainder(&run.trace, &run.snapshots);
    out.push(("Kasner evolution keeps zero remainders".into(), rel <= 1e-9, format!("relative {rel:e}")));

    let constant: Vec<(f64, f64)> = (0..8).map(|j| (10f64.powf(-(j as f64) / 2.0), 3.0)).collect();
    let slope = fit_decay_rate(&constant)?.slope;
    out.push(("decay fit of a constant has slope 0".into(), slope.abs() <= 1e-12, format!("{slope:e}")));
    Ok(out)
}

/// Largest remainder relative to the size of the evolved variables.
pub fn kasner_remainder(trace: &EnergyTrace, snapshots: &[StateField]) -> f64 {
    trace
        .rows
        .iter()
        .zip(snapshots)
        .map(|(r, s)| {
            let size = s.e.max_abs().max(s.k.max_abs()).max(s.gamma.max_abs()).max(f64::MIN_POSITIVE);
            r.w_sup.iter().cloned().fold(0.0, f64::max) / size
        })
        .fold(0.0, f64::max)
}

pub fn cmd_selftest() -> Result<Outcome> {
    let checks = selftest_checks()?;
    let mut text = String::new();
    for (name, ok, detail) in &checks {
        let _ = writeln!(text, "{} {name} ({detail})", verdict(*ok));
    }
    Ok(Outcome { pass: checks.iter().all(|c| c.1), text })
}
