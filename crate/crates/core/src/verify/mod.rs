//! Executable checks of the market's equilibrium and equivalence results.
//!
//! Every check produces a [`CheckRecord`] carrying the measured residual
//! and the tolerance it was held to, so a report never reduces to bare
//! pass/fail flags. Residuals are dimensionless: balances and voltages are
//! in p.u., money is measured relative to the flows it nets, prices in
//! ¢/kWh where the comparison is between two solves.

mod checks;
mod oracle;

pub use checks::{
    certify_equilibrium, check_envelopes, check_equivalence, check_redistribution, slater_margins,
};
pub use oracle::{brute_force_oracle, OracleConfig, OracleError, OracleOutcome, OracleWarning};

use crate::feeder::{AffineConstraintMap, FeederModel};
use crate::market::Mechanism;
use crate::prosumer::ProsumerFleet;
use crate::units::Units;
use gridmarket_solver::Settings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// Tolerances every check is held to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `|Σ_i p_i(t)|` and `|Σ_i l_i(t)|`, p.u.
    pub balance: f64,
    /// Welfare difference relative to `1 + |welfare|`.
    pub welfare: f64,
    /// `|λ_limit(t) − α_locational(t)|`, ¢/kWh.
    pub price: f64,
    /// Budget lines relative to the gross money flow.
    pub budget: f64,
    /// Redistributed income relative to `1 + max |income|`.
    pub redistribution: f64,
    /// Best-response payoff gap relative to `1 + |payoff|`.
    pub best_response: f64,
    /// `|multiplier · slack|` of every inequality.
    pub complementarity: f64,
    /// Voltage band overshoot, linear p.u.
    pub voltage: f64,
    /// Envelope and limit row overshoot, squared p.u.
    pub envelope: f64,
    /// Most negative multiplier allowed on an inequality.
    pub dual_sign: f64,
    /// Feasibility of the constructed limit trades.
    pub construction: f64,
    /// `Σ_i w_i(t) = ν(t)`.
    pub decomposition: f64,
    /// Locational prices against their nodal formula, relative.
    pub price_formula: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            balance: 1e-6,
            welfare: 1e-5,
            price: 1e-4,
            budget: 1e-6,
            redistribution: 1e-5,
            best_response: 1e-5,
            complementarity: 1e-5,
            voltage: 1e-6,
            envelope: 1e-6,
            dual_sign: 1e-9,
            construction: 1e-8,
            decomposition: 1e-6,
            price_formula: 1e-9,
        }
    }
}

/// Everything the checks need besides the results themselves.
#[derive(Debug, Clone)]
pub struct VerifyContext<'a> {
    pub feeder: &'a FeederModel,
    pub fleet: &'a ProsumerFleet,
    pub map: &'a AffineConstraintMap,
    pub units: Units,
    pub tolerances: Tolerances,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// Mechanism the check was run on; `None` for cross-mechanism checks.
    pub mechanism: Option<Mechanism>,
    /// What the check establishes, in words.
    pub property: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    /// A residual passes when it is finite and at most the tolerance.
    pub fn new(
        name: &str,
        mechanism: Option<Mechanism>,
        property: &str,
        residual: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            mechanism,
            property: property.to_string(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    fn mechanism_label(&self) -> &'static str {
        self.mechanism.map_or("-", Mechanism::as_str)
    }
}

/// Line of the machine-readable report.
#[derive(Serialize)]
struct JsonLine<'a> {
    check: &'a str,
    mechanism: Option<Mechanism>,
    residual: Option<f64>,
    tolerance: f64,
    pass: bool,
    property: &'a str,
}

/// Strict feasibility of one clearing program. Informational: the
/// equilibrium checks stand on their own, but prices read from a program
/// without a strictly feasible point need not be unique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaterMargin {
    pub mechanism: Mechanism,
    /// Largest uniform inequality slack, capped at 1.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// SHA-256 of the scenario the results were computed on.
    pub fingerprint: String,
    pub mechanisms: Vec<Mechanism>,
    pub records: Vec<CheckRecord>,
    #[serde(default)]
    pub slater: Vec<SlaterMargin>,
}

impl VerificationReport {
    /// Records are sorted by name, then mechanism, so the report does not
    /// depend on the order checks finished in.
    pub fn new(fingerprint: String, mut records: Vec<CheckRecord>) -> Self {
        records.sort_by(|a, b| {
            a.name
                .cmp(&b.name)
                .then(a.mechanism_label().cmp(b.mechanism_label()))
        });
        let mut mechanisms: Vec<Mechanism> = records.iter().filter_map(|r| r.mechanism).collect();
        mechanisms.sort_by_key(|m| m.as_str());
        mechanisms.dedup();
        Self {
            fingerprint,
            mechanisms,
            records,
            slater: Vec::new(),
        }
    }

    pub fn with_slater(mut self, margins: Vec<SlaterMargin>) -> Self {
        self.slater = margins;
        self
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }

    pub fn get(&self, name: &str, mechanism: Option<Mechanism>) -> Option<&CheckRecord> {
        self.records
            .iter()
            .find(|r| r.name == name && r.mechanism == mechanism)
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let width = self
            .records
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("scenario {}\n", self.fingerprint);
        let _ = writeln!(
            out,
            "{:<width$}  {:<13}  {:>12}  {:>10}  result",
            "check", "mechanism", "residual", "tolerance"
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<width$}  {:<13}  {:>12.3e}  {:>10.1e}  {}",
                r.name,
                r.mechanism_label(),
                r.residual,
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        for m in &self.slater {
            let verdict = if m.holds {
                "strictly feasible"
            } else {
                "no strictly feasible point"
            };
            let _ = writeln!(
                out,
                "slater margin {:<13}  {:>12.3e}  {verdict}",
                m.mechanism.as_str(),
                m.margin
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} checks, {} failed", self.records.len(), failed);
        out
    }

    /// One JSON object per record. Non-finite residuals are written as
    /// `null`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = JsonLine {
                check: &r.name,
                mechanism: r.mechanism,
                residual: r.residual.is_finite().then_some(r.residual),
                tolerance: r.tolerance,
                pass: r.pass,
                property: &r.property,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain record"));
            out.push('\n');
        }
        for m in &self.slater {
            let line = serde_json::json!({
                "slater_margin": m.margin.is_finite().then_some(m.margin),
                "mechanism": m.mechanism,
                "holds": m.holds,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Hex SHA-256 of a scenario's canonical bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests;
