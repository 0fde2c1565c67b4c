//! Result files. Every CSV opens with the units comment line, then a
//! fixed header; values are in kW, ¢/kWh, linear p.u. and cents. Files are
//! written to a temporary name and renamed into place.

use super::{Model, ScenarioError};
use crate::envelope::EnvelopeAllocation;
use crate::feeder::Component;
use crate::market::{ClearingResult, Mechanism, SolverReport};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const BUNDLE_FILE: &str = "result.json";

/// Headers of the files [`write_clearing`] produces.
pub const CLEARING_HEADERS: [(&str, &str); 7] = [
    ("prices_energy.csv", "t,lambda_cents_per_kwh"),
    (
        "prices_limits.csv",
        "t,component,node,kind,beta_cents_per_pu2",
    ),
    ("prices_locational.csv", "t,node,lambda_cents_per_kwh"),
    ("injections.csv", "t,prosumer_id,node,p_kw"),
    ("voltages.csv", "t,node,v_pu"),
    (
        "incomes.csv",
        "prosumer_id,node,energy_cents,limits_cents,total_cents",
    ),
    ("budget.csv", "t,energy_cents,limits_cents,total_cents"),
];

/// Everything needed to re-check a clearing later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub scenario: PathBuf,
    pub fingerprint: String,
    pub result: ClearingResult,
    /// Envelope shares the clearing used, when it used any.
    pub allocation: Option<EnvelopeAllocation>,
}

#[derive(Serialize)]
struct Summary<'a> {
    mechanism: Mechanism,
    fingerprint: &'a str,
    prosumers: usize,
    horizon: usize,
    welfare_cents: f64,
    budget_total_cents: f64,
    budget_scale_cents: f64,
    v_min_pu: f64,
    v_max_pu: f64,
    solver: &'a SolverReport,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let name = path
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn component_label(c: &Component) -> (usize, &'static str) {
    (c.node, c.kind.as_str())
}

/// Linear voltage magnitudes at nodes 1..=N for each step, `[t][node−1]`.
pub fn voltage_profile(model: &Model, res: &ClearingResult) -> Vec<Vec<f64>> {
    let nodes = model.fleet.nodes();
    let q = vec![0.0; model.feeder.node_count()];
    (0..res.horizon())
        .map(|t| {
            let pn = model.feeder.nodal_injections(&nodes, &res.injections_at(t));
            let v = model
                .feeder
                .voltages(&pn, &q)
                .expect("nodal vector has feeder length");
            v.into_iter().map(|s| s.max(0.0).sqrt()).collect()
        })
        .collect()
}

/// Energy price at each node and step in ¢/kWh, `[t][node−1]`. Uniform
/// mechanisms charge the same price everywhere.
fn node_prices(model: &Model, res: &ClearingResult) -> Vec<Vec<f64>> {
    let n = model.feeder.node_count();
    (0..res.horizon())
        .map(|t| {
            (0..n)
                .map(|j| {
                    let internal = res
                        .prices
                        .nodal
                        .as_ref()
                        .map_or(res.prices.energy[t], |p| p[t][j]);
                    model.units.price_to_cents_per_kwh(internal)
                })
                .collect()
        })
        .collect()
}

fn table(model: &Model, header: &str) -> String {
    format!("{}\n{header}\n", model.units.header_comment())
}

/// Writes the result bundle and its CSV views into `dir`.
pub fn write_clearing(
    dir: &Path,
    model: &Model,
    bundle: &ResultBundle,
) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let res = &bundle.result;
    let units = &model.units;
    let ids: Vec<usize> = model.fleet.prosumers.iter().map(|p| p.id).collect();
    let nodes = model.fleet.nodes();
    let horizon = res.horizon();
    let header = |name: &str| {
        CLEARING_HEADERS
            .iter()
            .find(|(f, _)| *f == name)
            .expect("known file")
            .1
    };

    let mut s = table(model, header("prices_energy.csv"));
    for (t, a) in res.prices.energy.iter().enumerate() {
        let _ = writeln!(s, "{t},{}", units.price_to_cents_per_kwh(*a));
    }
    write_atomic(&dir.join("prices_energy.csv"), s.as_bytes())?;

    let limits_path = dir.join("prices_limits.csv");
    if let Some(beta) = &res.prices.limits {
        let mut s = table(model, header("prices_limits.csv"));
        for (t, bt) in beta.iter().enumerate() {
            for (r, (b, c)) in bt.iter().zip(&model.map.components).enumerate() {
                let (node, kind) = component_label(c);
                let _ = writeln!(s, "{t},{r},{node},{kind},{b}");
            }
        }
        write_atomic(&limits_path, s.as_bytes())?;
    } else if limits_path.exists() {
        std::fs::remove_file(&limits_path).map_err(io_err(&limits_path))?;
    }

    let mut s = table(model, header("prices_locational.csv"));
    for (t, row) in node_prices(model, res).iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{v}", j + 1);
        }
    }
    write_atomic(&dir.join("prices_locational.csv"), s.as_bytes())?;

    let mut s = table(model, header("injections.csv"));
    for t in 0..horizon {
        for (i, p) in res.injections.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{},{}", ids[i], nodes[i], units.pu_to_kw(p[t]));
        }
    }
    write_atomic(&dir.join("injections.csv"), s.as_bytes())?;

    let volts = voltage_profile(model, res);
    let mut s = table(model, header("voltages.csv"));
    for (t, row) in volts.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{v}", j + 1);
        }
    }
    write_atomic(&dir.join("voltages.csv"), s.as_bytes())?;

    let mut s = table(model, header("incomes.csv"));
    for (i, inc) in res.settlement.incomes.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            ids[i], nodes[i], inc.energy, inc.limits, inc.total
        );
    }
    write_atomic(&dir.join("incomes.csv"), s.as_bytes())?;

    let mut s = table(model, header("budget.csv"));
    for (t, b) in res.settlement.budget.iter().enumerate() {
        let _ = writeln!(s, "{t},{},{},{}", b.energy, b.limits, b.total);
    }
    write_atomic(&dir.join("budget.csv"), s.as_bytes())?;

    let flat = volts.iter().flatten().copied();
    let summary = Summary {
        mechanism: res.mechanism,
        fingerprint: &bundle.fingerprint,
        prosumers: res.prosumers(),
        horizon,
        welfare_cents: res.welfare,
        budget_total_cents: res.settlement.budget_total,
        budget_scale_cents: res.settlement.scale,
        v_min_pu: flat.clone().fold(f64::INFINITY, f64::min),
        v_max_pu: flat.fold(f64::NEG_INFINITY, f64::max),
        solver: &res.solver,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    let json = serde_json::to_string(bundle).expect("bundle serializes");
    write_atomic(&dir.join(BUNDLE_FILE), json.as_bytes())
}

pub fn read_bundle(dir: &Path) -> Result<ResultBundle, ScenarioError> {
    let path = dir.join(BUNDLE_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// `envelopes.csv` with every share `w_i(t)` and `components.csv` naming
/// the components, both in squared-voltage p.u.
pub fn write_envelopes(
    dir: &Path,
    model: &Model,
    alloc: &EnvelopeAllocation,
) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ids: Vec<usize> = model.fleet.prosumers.iter().map(|p| p.id).collect();
    let mut s = table(model, "t,prosumer_id,component_index,w_value");
    for (t, wt) in alloc.w.iter().enumerate() {
        for (i, wi) in wt.iter().enumerate() {
            for (r, w) in wi.iter().enumerate() {
                let _ = writeln!(s, "{t},{},{r},{w}", ids[i]);
            }
        }
    }
    write_atomic(&dir.join("envelopes.csv"), s.as_bytes())?;

    let mut s = table(model, "component_index,node,kind,nu");
    for (r, c) in model.map.components.iter().enumerate() {
        let (node, kind) = component_label(c);
        let _ = writeln!(
            s,
            "{r},{node},{kind},{}",
            model.map.bound.first().map_or(0.0, |b| b[r])
        );
    }
    write_atomic(&dir.join("components.csv"), s.as_bytes())
}

/// Long-format tables behind the price, voltage and income figures, one
/// row per mechanism and point.
pub fn write_report_figures(
    dir: &Path,
    model: &Model,
    results: &[&ClearingResult],
) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let units = &model.units;
    let ids: Vec<usize> = model.fleet.prosumers.iter().map(|p| p.id).collect();
    let nodes = model.fleet.nodes();
    let hour = |t: usize| t as f64 * units.delta_hours;

    let mut price = table(model, "mechanism,t,hour,lambda_cents_per_kwh");
    let mut limits = table(
        model,
        "mechanism,t,hour,component,node,kind,beta_cents_per_pu2",
    );
    let mut volts = table(model, "mechanism,t,hour,node,v_pu");
    let mut local = table(model, "mechanism,t,hour,node,lambda_cents_per_kwh");
    let mut incomes = table(
        model,
        "mechanism,prosumer_id,node,energy_cents,limits_cents,total_cents",
    );
    for res in results {
        let m = res.mechanism;
        for (t, a) in res.prices.energy.iter().enumerate() {
            let _ = writeln!(
                price,
                "{m},{t},{},{}",
                hour(t),
                units.price_to_cents_per_kwh(*a)
            );
        }
        if let Some(beta) = &res.prices.limits {
            for (t, bt) in beta.iter().enumerate() {
                for (r, (b, c)) in bt.iter().zip(&model.map.components).enumerate() {
                    let (node, kind) = component_label(c);
                    let _ = writeln!(limits, "{m},{t},{},{r},{node},{kind},{b}", hour(t));
                }
            }
        }
        for (t, row) in voltage_profile(model, res).iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(volts, "{m},{t},{},{},{v}", hour(t), j + 1);
            }
        }
        for (t, row) in node_prices(model, res).iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(local, "{m},{t},{},{},{v}", hour(t), j + 1);
            }
        }
        for (i, inc) in res.settlement.incomes.iter().enumerate() {
            let _ = writeln!(
                incomes,
                "{m},{},{},{},{},{}",
                ids[i], nodes[i], inc.energy, inc.limits, inc.total
            );
        }
    }
    let files = [
        ("fig_uniform_price.csv", price),
        ("fig_limit_prices.csv", limits),
        ("fig_voltages.csv", volts),
        ("fig_locational_prices.csv", local),
        ("fig_incomes.csv", incomes),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
