//! Scenario files, synthetic fleets and result emission.
//!
//! A scenario is a TOML file that references CSVs for the feeder topology,
//! optional per-node voltage bounds and net-supply profiles, plus a TOML
//! file of prosumer parameters; the fleet can instead be generated from a
//! seed. Files carry kW, kWh, linear p.u. voltages and cents. Conversion to
//! per-unit happens once, in [`Scenario::build`].
//!
//! ```toml
//! name = "desk13"
//! horizon = 48
//! delta_hours = 0.5
//!
//! [feeder]
//! topology = "topology.csv"   # from,to,r_pu,x_pu
//! v0 = 1.0
//! v_lower = 0.95
//! v_upper = 1.05
//!
//! [fleet]
//! params = "fleet.toml"
//! profiles = "profiles.csv"   # prosumer_id,t,net_supply_kw
//!
//! [envelope]
//! epsilon = 1e-4
//! objective_mode = "sqnorm"
//! ```

mod builtin;
mod files;
mod output;
mod synthetic;

pub use builtin::{desk13, feeder13_lines, stranded_pair, FEEDER13_AGGREGATOR_NODES};
pub use files::{
    read_bounds, read_profiles, read_topology, write_bounds, write_profiles, write_topology,
    NodeBound,
};
pub use output::{
    read_bundle, voltage_profile, write_atomic, write_clearing, write_envelopes,
    write_report_figures, ResultBundle, BUNDLE_FILE, CLEARING_HEADERS,
};
pub use synthetic::{generate_synthetic, random_scenario, ShapeParams, SyntheticParams};

use crate::envelope::ObjectiveMode;
use crate::feeder::{AffineConstraintMap, FeederError, FeederModel, Line};
use crate::market::Mechanism;
use crate::prosumer::{
    Availability, EnergyMap, ProsumerError, ProsumerFleet, ProsumerParams, QuadraticUtility,
    SOC_MAX, SOC_MIN,
};
use crate::units::Units;
use crate::verify::{fingerprint, Tolerances};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

/// Envelope allocation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub epsilon: f64,
    pub objective_mode: ObjectiveMode,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            objective_mode: ObjectiveMode::Sqnorm,
        }
    }
}

/// Feeder description in file units.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederSpec {
    pub lines: Vec<Line>,
    /// Feeder-head magnitude, linear p.u.
    pub v0: f64,
    /// Band used at nodes without an entry in `node_bounds`, linear p.u.
    pub v_lower: f64,
    pub v_upper: f64,
    pub node_bounds: Option<Vec<NodeBound>>,
}

impl FeederSpec {
    pub fn node_count(&self) -> usize {
        self.lines
            .iter()
            .map(|l| l.from.max(l.to))
            .max()
            .unwrap_or(0)
    }
}

/// Plug-in window of one input, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub input: usize,
    pub arrival: usize,
    pub departure: usize,
}

fn default_efficiency() -> f64 {
    0.9
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// One prosumer in file units: kW, kWh, ¢/kW² and ¢/kWh². Optional fields
/// fall back to the storage defaults (identity dynamics, `B = ηΔ·I`, state
/// box `[0.2, 0.85]·C`, target `0.85·C`, `h(u) = Σu`, always available).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerSpec {
    pub id: usize,
    pub node: usize,
    pub capacity_kwh: Vec<f64>,
    pub x0_kwh: Vec<f64>,
    pub u_lower_kw: Vec<f64>,
    pub u_upper_kw: Vec<f64>,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    pub theta_input: f64,
    /// Per state component, applied at every step.
    pub theta_state: Vec<f64>,
    pub theta_terminal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_lower_kwh: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_upper_kwh: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_kwh: Option<Vec<f64>>,
    /// Rows of `A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    /// Rows of `B`, kWh per kW held for one step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_coef: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub energy_offset_kw: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<WindowSpec>,
    /// Comes from the profiles CSV.
    #[serde(skip)]
    pub net_supply_kw: Vec<f64>,
}

impl ProsumerSpec {
    pub fn states(&self) -> usize {
        self.capacity_kwh.len()
    }

    pub fn inputs(&self) -> usize {
        self.u_lower_kw.len()
    }

    /// Per-unit parameters for the engine.
    pub fn to_params(
        &self,
        units: &Units,
        horizon: usize,
    ) -> Result<ProsumerParams, ScenarioError> {
        let field = |f: &str| format!("prosumer {}: {f}", self.id);
        let (n, m) = (self.states(), self.inputs());
        let kwh = |v: &[f64]| v.iter().map(|x| units.kwh_to_puh(*x)).collect::<Vec<f64>>();
        let kw = |v: &[f64]| v.iter().map(|x| units.kw_to_pu(*x)).collect::<Vec<f64>>();
        let matrix =
            |rows: &[Vec<f64>], cols: usize, what: &str| -> Result<DMatrix<f64>, ScenarioError> {
                if rows.len() != n || rows.iter().any(|r| r.len() != cols) {
                    return Err(ScenarioError::invalid(
                        field(what),
                        format!("expected {n} rows of {cols} entries"),
                    ));
                }
                Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
            };
        let a = match &self.a {
            Some(rows) => matrix(rows, n, "a")?,
            None => DMatrix::identity(n, n),
        };
        let b = match &self.b {
            Some(rows) => matrix(rows, m, "b")?,
            None if n == m => DMatrix::identity(n, n) * (self.efficiency * units.delta_hours),
            None => {
                return Err(ScenarioError::invalid(
                    field("b"),
                    "required when state and input counts differ",
                ))
            }
        };
        if self.net_supply_kw.len() != horizon {
            return Err(ScenarioError::invalid(
                field("net supply"),
                format!(
                    "profile has {} steps, horizon is {horizon}",
                    self.net_supply_kw.len()
                ),
            ));
        }
        let x_lower = self
            .x_lower_kwh
            .clone()
            .unwrap_or_else(|| self.capacity_kwh.iter().map(|c| c * SOC_MIN).collect());
        let x_upper = self
            .x_upper_kwh
            .clone()
            .unwrap_or_else(|| self.capacity_kwh.iter().map(|c| c * SOC_MAX).collect());
        let target = self
            .target_kwh
            .clone()
            .unwrap_or_else(|| self.capacity_kwh.iter().map(|c| c * SOC_MAX).collect());
        let mut availability = vec![Availability::Always; m];
        for w in &self.windows {
            if w.input >= m {
                return Err(ScenarioError::invalid(
                    field("windows"),
                    format!("input {} out of range", w.input),
                ));
            }
            availability[w.input] = Availability::Window {
                arrival: w.arrival,
                departure: w.departure,
            };
        }
        let theta_state: Vec<f64> = self
            .theta_state
            .iter()
            .map(|t| units.quad_coef_to_pu(*t))
            .collect();
        let params = ProsumerParams {
            id: self.id,
            node: self.node,
            a,
            b,
            x0: kwh(&self.x0_kwh),
            x_lower: kwh(&x_lower),
            x_upper: kwh(&x_upper),
            u_lower: kw(&self.u_lower_kw),
            u_upper: kw(&self.u_upper_kw),
            net_supply: kw(&self.net_supply_kw),
            energy_map: EnergyMap {
                coef: self.energy_coef.clone().unwrap_or_else(|| vec![1.0; m]),
                offset: units.kw_to_pu(self.energy_offset_kw),
            },
            utility: QuadraticUtility {
                theta_input: units.quad_coef_to_pu(self.theta_input),
                theta_state: vec![theta_state; horizon],
                theta_terminal: units.quad_coef_to_pu(self.theta_terminal),
                target: kwh(&target),
            },
            capacity: kwh(&self.capacity_kwh),
            availability,
        };
        params
            .validate()
            .map_err(|e: ProsumerError| ScenarioError::invalid(field("parameters"), e))?;
        Ok(params)
    }
}

/// A validated scenario in file units, with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    pub units: Units,
    pub feeder: FeederSpec,
    pub fleet: Vec<ProsumerSpec>,
    pub envelope: EnvelopeConfig,
    pub mechanisms: Vec<Mechanism>,
    pub tolerances: Tolerances,
}

/// The per-unit engine objects built from a scenario.
#[derive(Debug, Clone)]
pub struct Model {
    pub feeder: FeederModel,
    pub fleet: ProsumerFleet,
    pub map: AffineConstraintMap,
    pub units: Units,
}

// ---- file layout -------------------------------------------------------

fn default_v0() -> f64 {
    1.0
}
fn default_v_lower() -> f64 {
    0.95
}
fn default_v_upper() -> f64 {
    1.05
}
fn default_s_base() -> f64 {
    100.0
}
fn default_v_base() -> f64 {
    4.16
}
fn default_delta() -> f64 {
    0.5
}
fn default_mechanisms() -> Vec<Mechanism> {
    Mechanism::ALL.to_vec()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    horizon: usize,
    #[serde(default = "default_delta")]
    delta_hours: f64,
    feeder: FeederFile,
    fleet: FleetFile,
    #[serde(default)]
    envelope: EnvelopeConfig,
    #[serde(default)]
    market: MarketFile,
    #[serde(default)]
    tolerances: Tolerances,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederFile {
    topology: PathBuf,
    #[serde(default = "default_v0")]
    v0: f64,
    #[serde(default = "default_v_lower")]
    v_lower: f64,
    #[serde(default = "default_v_upper")]
    v_upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<PathBuf>,
    #[serde(default = "default_s_base")]
    s_base_kva: f64,
    #[serde(default = "default_v_base")]
    v_base_kv: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profiles: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticParams>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    #[serde(default = "default_mechanisms")]
    mechanisms: Vec<Mechanism>,
}

impl Default for MarketFile {
    fn default() -> Self {
        Self {
            mechanisms: default_mechanisms(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    prosumer: Vec<ProsumerSpec>,
}

/// Names of the files [`Scenario::emit`] writes.
pub const SCENARIO_FILE: &str = "scenario.toml";
const TOPOLOGY_FILE: &str = "topology.csv";
const BOUNDS_FILE: &str = "bounds.csv";
const PARAMS_FILE: &str = "fleet.toml";
const PROFILES_FILE: &str = "profiles.csv";

fn read_text(path: &Path, field: &str) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::invalid(field, format!("cannot read {}: {e}", path.display())))
}

/// 1-based line and column of a byte offset.
pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, column)
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ScenarioError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ScenarioError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Loads and validates a scenario file, resolving referenced files
/// relative to its directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ScenarioFile = parse_toml(&text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    if file.horizon == 0 {
        return Err(ScenarioError::invalid("horizon", "must be at least 1"));
    }
    if !(file.delta_hours > 0.0 && file.delta_hours.is_finite()) {
        return Err(ScenarioError::invalid("delta_hours", "must be positive"));
    }
    let f = &file.feeder;
    if !(f.s_base_kva > 0.0 && f.v_base_kv > 0.0) {
        return Err(ScenarioError::invalid(
            "feeder.s_base_kva",
            "bases must be positive",
        ));
    }
    let units = Units {
        s_base_kva: f.s_base_kva,
        v_base_kv: f.v_base_kv,
        delta_hours: file.delta_hours,
    };

    let topo_path = resolve(&f.topology);
    let lines = read_topology(&read_text(&topo_path, "feeder.topology")?, &topo_path)?;
    let node_bounds = match &f.bounds {
        Some(p) => {
            let p = resolve(p);
            Some(read_bounds(&read_text(&p, "feeder.bounds")?, &p)?)
        }
        None => None,
    };
    let feeder = FeederSpec {
        lines,
        v0: f.v0,
        v_lower: f.v_lower,
        v_upper: f.v_upper,
        node_bounds,
    };

    let fleet = match (
        &file.fleet.params,
        &file.fleet.profiles,
        &file.fleet.synthetic,
    ) {
        (Some(params), Some(profiles), None) => {
            let pp = resolve(params);
            let mut specs =
                parse_toml::<ParamsFile>(&read_text(&pp, "fleet.params")?, &pp)?.prosumer;
            let prof = resolve(profiles);
            let supply = read_profiles(&read_text(&prof, "fleet.profiles")?, &prof, file.horizon)?;
            for s in &mut specs {
                s.net_supply_kw = supply.get(&s.id).cloned().ok_or_else(|| {
                    ScenarioError::invalid(
                        "fleet.profiles",
                        format!("no profile for prosumer {}", s.id),
                    )
                })?;
            }
            specs
        }
        (None, None, Some(syn)) => {
            generate_synthetic(syn, file.horizon, &units, feeder.node_count())?
        }
        _ => {
            return Err(ScenarioError::invalid(
                "fleet",
                "give either `params` and `profiles`, or a `synthetic` table",
            ));
        }
    };

    let scenario = Scenario {
        name: file.name,
        horizon: file.horizon,
        units,
        feeder,
        fleet,
        envelope: file.envelope,
        mechanisms: file.market.mechanisms,
        tolerances: file.tolerances,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Checks everything [`Scenario::build`] relies on.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Per-unit feeder, fleet and voltage constraint map.
    pub fn build(&self) -> Result<Model, ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::invalid("horizon", "must be at least 1"));
        }
        if !(self.envelope.epsilon > 0.0 && self.envelope.epsilon.is_finite()) {
            return Err(ScenarioError::invalid(
                "envelope.epsilon",
                "must be positive",
            ));
        }
        if self.mechanisms.is_empty() {
            return Err(ScenarioError::invalid(
                "market.mechanisms",
                "list at least one mechanism",
            ));
        }
        let fs = &self.feeder;
        let n = fs.node_count();
        let mut lower = vec![Units::squared(fs.v_lower); n];
        let mut upper = vec![Units::squared(fs.v_upper); n];
        for b in fs.node_bounds.iter().flatten() {
            if b.node == 0 || b.node > n {
                return Err(ScenarioError::invalid(
                    "feeder.bounds",
                    format!("node {} is not a feeder node", b.node),
                ));
            }
            lower[b.node - 1] = Units::squared(b.lower);
            upper[b.node - 1] = Units::squared(b.upper);
        }
        let feeder = FeederModel::new(&fs.lines, n, Units::squared(fs.v0), lower, upper)
            .map_err(|e: FeederError| ScenarioError::invalid("feeder", e))?;

        let mut ids: Vec<usize> = self.fleet.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScenarioError::invalid(
                "fleet",
                "prosumer ids must be unique",
            ));
        }
        if self.fleet.is_empty() {
            return Err(ScenarioError::invalid("fleet", "no prosumers"));
        }
        let mut prosumers = Vec::with_capacity(self.fleet.len());
        for spec in &self.fleet {
            if spec.node == 0 || spec.node > n {
                return Err(ScenarioError::invalid(
                    format!("prosumer {}: node", spec.id),
                    format!("{} is not a feeder node", spec.node),
                ));
            }
            prosumers.push(spec.to_params(&self.units, self.horizon)?);
        }
        let fleet = ProsumerFleet::new(prosumers, self.horizon, self.units.delta_hours)
            .map_err(|e| ScenarioError::invalid("fleet", e))?;
        let map = feeder.voltage_constraint_map(&fleet.nodes(), self.horizon);
        Ok(Model {
            feeder,
            fleet,
            map,
            units: self.units,
        })
    }

    /// The files of the scenario in canonical form, as (name, contents).
    pub fn render(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let file = ScenarioFile {
            name: self.name.clone(),
            horizon: self.horizon,
            delta_hours: self.units.delta_hours,
            feeder: FeederFile {
                topology: TOPOLOGY_FILE.into(),
                v0: self.feeder.v0,
                v_lower: self.feeder.v_lower,
                v_upper: self.feeder.v_upper,
                bounds: self.feeder.node_bounds.as_ref().map(|_| BOUNDS_FILE.into()),
                s_base_kva: self.units.s_base_kva,
                v_base_kv: self.units.v_base_kv,
            },
            fleet: FleetFile {
                params: Some(PARAMS_FILE.into()),
                profiles: Some(PROFILES_FILE.into()),
                synthetic: None,
            },
            envelope: self.envelope,
            market: MarketFile {
                mechanisms: self.mechanisms.clone(),
            },
            tolerances: self.tolerances,
        };
        out.push((
            SCENARIO_FILE,
            toml::to_string(&file).expect("scenario serializes"),
        ));
        out.push((
            TOPOLOGY_FILE,
            write_topology(&self.feeder.lines, &self.units),
        ));
        if let Some(b) = &self.feeder.node_bounds {
            out.push((BOUNDS_FILE, write_bounds(b, &self.units)));
        }
        let params = ParamsFile {
            prosumer: self.fleet.clone(),
        };
        out.push((
            PARAMS_FILE,
            toml::to_string(&params).expect("fleet serializes"),
        ));
        out.push((PROFILES_FILE, write_profiles(&self.fleet, &self.units)));
        out
    }

    /// Writes the scenario and its data files into `dir`, returning the
    /// path of the scenario file.
    pub fn emit(&self, dir: &Path) -> Result<PathBuf, ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, text) in self.render() {
            write_atomic(&dir.join(name), text.as_bytes())?;
        }
        Ok(dir.join(SCENARIO_FILE))
    }

    /// SHA-256 over the canonical files, so a scenario hashes the same
    /// wherever it was loaded from.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for (name, text) in self.render() {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(text.as_bytes());
            bytes.push(0);
        }
        fingerprint(&bytes)
    }
}

#[cfg(test)]
mod tests;
