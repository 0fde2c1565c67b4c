use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gridmarket::envelope::{allocate, EnvelopeAllocation};
use gridmarket::market::{ClearingError, ClearingResult, Market, Mechanism};
use gridmarket::scenario::{
    desk13, generate_synthetic, load_scenario, random_scenario, read_bundle, stranded_pair,
    write_clearing, write_envelopes, write_report_figures, Model, ResultBundle, Scenario,
    ScenarioError, SyntheticParams, BUNDLE_FILE,
};
use gridmarket::verify::{
    certify_equilibrium, check_envelopes, check_equivalence, check_redistribution, slater_margins,
    VerificationReport, VerifyContext,
};
use gridmarket_solver::Settings;
use serde_json::json;

const ENVELOPE_SAMPLES: usize = 200;

#[derive(Parser)]
#[command(
    name = "gridmarket",
    version,
    about = "Clear peer-to-peer energy markets on radial feeders"
)]
struct Cli {
    /// Report errors and results as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Print solver progress.
    #[arg(long, global = true)]
    verbose: bool,
    /// Worker threads for parallel solves.
    #[arg(long, global = true, env = "GRIDMARKET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute dynamic operating envelopes and write them as CSV.
    Doe {
        #[arg(short, long)]
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Clear the market under one mechanism and write a result bundle.
    Clear {
        #[arg(short, long)]
        mechanism: Mechanism,
        #[arg(short, long)]
        scenario: PathBuf,
        /// Output directory; the bundle goes into a subdirectory named after the mechanism.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Re-check every result bundle found under a directory.
    Verify {
        dir: PathBuf,
        /// Seed for the random envelope profiles.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write long-format figure tables from the bundles under a directory.
    Report {
        dir: PathBuf,
        /// Defaults to `<dir>/report`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a scenario directory.
    Gen {
        #[arg(long, value_enum, default_value_t = Kind::Synthetic)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of prosumers (aggregators for desk13).
        #[arg(short = 'n', long, default_value_t = 10)]
        prosumers: usize,
        #[arg(long, default_value_t = 48)]
        horizon: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Solar-shaped prosumers on a random radial feeder.
    Synthetic,
    /// Aggregators on the 13-node test feeder.
    Desk13,
    /// Two prosumers where envelopes block trading.
    StrandedPair,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            kind: "input",
            message: e.to_string(),
        }
    }
    fn failed(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind,
            message: message.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if let Some(ce) = e.downcast_ref::<ClearingError>() {
            let kind = if matches!(ce, ClearingError::Infeasible { .. }) {
                "infeasible"
            } else {
                "clearing"
            };
            return Self::failed(kind, format!("{ce}. {}", ce.explanation()));
        }
        if e.downcast_ref::<ScenarioError>().is_some() {
            return Self::usage(format!("{e:#}"));
        }
        Self::failed("error", format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let settings = Settings {
        verbose: cli.verbose,
        ..Settings::default()
    };
    let outcome = match &cli.command {
        Command::Doe { scenario, out } => run_doe(&cli, scenario, out, &settings),
        Command::Clear {
            mechanism,
            scenario,
            out,
        } => run_clear(&cli, *mechanism, scenario, out, &settings),
        Command::Verify { dir, seed } => run_verify(&cli, dir, *seed, &settings),
        Command::Report { dir, out } => run_report(&cli, dir, out.clone()),
        Command::Gen {
            kind,
            seed,
            prosumers,
            horizon,
            out,
        } => run_gen(&cli, *kind, *seed, *prosumers, *horizon, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.json {
                eprintln!(
                    "{}",
                    json!({ "error": f.kind, "message": f.message, "exit_code": f.code })
                );
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<(Scenario, Model), Failure> {
    let scenario = load_scenario(path).map_err(Failure::usage)?;
    let model = scenario.build().map_err(Failure::usage)?;
    Ok((scenario, model))
}

fn envelopes(
    scenario: &Scenario,
    model: &Model,
    settings: &Settings,
) -> anyhow::Result<EnvelopeAllocation> {
    let cfg = scenario.envelope;
    allocate(&model.map, cfg.objective_mode, cfg.epsilon, settings)
        .context("envelope allocation failed")
}

fn run_doe(cli: &Cli, path: &Path, out: &Path, settings: &Settings) -> Result<(), Failure> {
    let (scenario, model) = load(path)?;
    let alloc = envelopes(&scenario, &model, settings)?;
    write_envelopes(out, &model, &alloc).map_err(anyhow::Error::from)?;
    let capacity: f64 = alloc.capacity.iter().sum();
    let units = &model.units;
    if cli.json {
        println!(
            "{}",
            json!({ "steps": alloc.horizon(), "export_capacity_kw": units.pu_to_kw(capacity), "out": out })
        );
    } else {
        println!(
            "envelopes for {} prosumers over {} steps written to {}; total export capacity {:.3} kW",
            model.fleet.len(),
            alloc.horizon(),
            out.display(),
            units.pu_to_kw(capacity)
        );
    }
    Ok(())
}

fn run_clear(
    cli: &Cli,
    mechanism: Mechanism,
    path: &Path,
    out: &Path,
    settings: &Settings,
) -> Result<(), Failure> {
    let (scenario, model) = load(path)?;
    let alloc = match mechanism {
        Mechanism::Locational => None,
        _ => Some(envelopes(&scenario, &model, settings)?),
    };
    let market =
        Market::new(&model.feeder, &model.fleet, &model.map).map_err(anyhow::Error::from)?;
    let result = market
        .clear(mechanism, alloc.as_ref(), settings)
        .map_err(anyhow::Error::from)?;
    let dir = out.join(mechanism.as_str());
    let scenario_path = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    let bundle = ResultBundle {
        scenario: scenario_path,
        fingerprint: scenario.fingerprint(),
        result,
        allocation: alloc,
    };
    write_clearing(&dir, &model, &bundle).map_err(anyhow::Error::from)?;
    let s = &bundle.result.settlement;
    if cli.json {
        println!(
            "{}",
            json!({
                "mechanism": mechanism,
                "welfare_cents": bundle.result.welfare,
                "budget_total_cents": s.budget_total,
                "budget_scale_cents": s.scale,
                "out": dir,
            })
        );
    } else {
        println!(
            "{mechanism}: welfare {:.6} cents, bundle written to {}",
            bundle.result.welfare,
            dir.display()
        );
        println!(
            "budget: {:.6e} cents (scale {:.6e} cents)",
            s.budget_total, s.scale
        );
    }
    Ok(())
}

/// Bundles under `dir`, one per subdirectory, keyed by mechanism.
fn read_bundles(dir: &Path) -> Result<BTreeMap<&'static str, ResultBundle>, Failure> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(BUNDLE_FILE).is_file())
        .collect();
    subdirs.sort();
    let mut out = BTreeMap::new();
    for sub in subdirs {
        let bundle = read_bundle(&sub).map_err(Failure::usage)?;
        let m = bundle.result.mechanism.as_str();
        if out.insert(m, bundle).is_some() {
            return Err(Failure::usage(format!(
                "more than one {m} bundle under {}",
                dir.display()
            )));
        }
    }
    if out.is_empty() {
        return Err(Failure::usage(format!(
            "no {BUNDLE_FILE} found in the subdirectories of {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// The scenario shared by every bundle, checked against the stored fingerprints.
fn shared_scenario(
    bundles: &BTreeMap<&'static str, ResultBundle>,
) -> Result<(Scenario, Model), Failure> {
    let first = bundles.values().next().expect("at least one bundle");
    if let Some(b) = bundles
        .values()
        .find(|b| b.fingerprint != first.fingerprint)
    {
        return Err(Failure::usage(format!(
            "{} and {} were computed on different scenarios",
            first.result.mechanism, b.result.mechanism
        )));
    }
    let (scenario, model) = load(&first.scenario)?;
    if scenario.fingerprint() != first.fingerprint {
        return Err(Failure::usage(format!(
            "{} changed since the results were computed",
            first.scenario.display()
        )));
    }
    Ok((scenario, model))
}

fn run_verify(cli: &Cli, dir: &Path, seed: u64, settings: &Settings) -> Result<(), Failure> {
    let bundles = read_bundles(dir)?;
    let (scenario, model) = shared_scenario(&bundles)?;
    let ctx = VerifyContext {
        feeder: &model.feeder,
        fleet: &model.fleet,
        map: &model.map,
        units: model.units,
        tolerances: scenario.tolerances,
        settings: settings.clone(),
    };
    let get = |m: Mechanism| bundles.get(m.as_str());
    let mut records = Vec::new();
    for b in bundles.values() {
        records.extend(certify_equilibrium(&ctx, &b.result));
    }
    if let (Some(loc), Some(lim)) = (get(Mechanism::Locational), get(Mechanism::UniformLimit)) {
        let alloc = lim
            .allocation
            .as_ref()
            .ok_or_else(|| anyhow!("the uniform-limit bundle has no envelope shares"))?;
        records.extend(check_equivalence(&ctx, &loc.result, &lim.result, alloc));
    }
    if let Some(loc) = get(Mechanism::Locational) {
        records.extend(check_redistribution(&ctx, &loc.result));
    }
    let alloc = bundles.values().find_map(|b| b.allocation.as_ref());
    if let Some(a) = alloc {
        records.extend(check_envelopes(&ctx, a, ENVELOPE_SAMPLES, seed));
    }
    let mechanisms: Vec<Mechanism> = bundles.values().map(|b| b.result.mechanism).collect();
    let report = VerificationReport::new(scenario.fingerprint(), records)
        .with_slater(slater_margins(&ctx, &mechanisms, alloc));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::failed("error", e.to_string()))?;
    gridmarket::scenario::write_atomic(&dir.join("verification.json"), json.as_bytes())
        .map_err(anyhow::Error::from)?;
    if cli.json {
        print!("{}", report.to_json_lines());
    } else {
        print!("{}", report.to_table());
    }
    if report.all_pass() {
        Ok(())
    } else {
        let names: Vec<String> = report.failures().map(|r| r.name.clone()).collect();
        Err(Failure::failed(
            "verification",
            format!("checks failed: {}", names.join(", ")),
        ))
    }
}

fn run_report(cli: &Cli, dir: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let bundles = read_bundles(dir)?;
    let (_, model) = shared_scenario(&bundles)?;
    let out = out.unwrap_or_else(|| dir.join("report"));
    let results: Vec<&ClearingResult> = bundles.values().map(|b| &b.result).collect();
    let files = write_report_figures(&out, &model, &results).map_err(anyhow::Error::from)?;
    if cli.json {
        println!("{}", json!({ "files": files }));
    } else {
        for f in files {
            println!("{}", f.display());
        }
    }
    Ok(())
}

fn run_gen(
    cli: &Cli,
    kind: Kind,
    seed: u64,
    prosumers: usize,
    horizon: usize,
    out: &Path,
) -> Result<(), Failure> {
    if prosumers == 0 || horizon == 0 {
        return Err(Failure::usage(
            "--prosumers and --horizon must be at least 1",
        ));
    }
    let scenario = match kind {
        Kind::Desk13 => desk13(prosumers, seed),
        Kind::StrandedPair => stranded_pair(),
        Kind::Synthetic => synthetic(seed, prosumers, horizon)?,
    };
    scenario.validate().map_err(Failure::usage)?;
    let path = scenario.emit(out).map_err(anyhow::Error::from)?;
    if cli.json {
        println!(
            "{}",
            json!({ "scenario": path, "fingerprint": scenario.fingerprint() })
        );
    } else {
        println!(
            "{} ({} prosumers, {} steps) written to {}",
            scenario.name,
            scenario.fleet.len(),
            scenario.horizon,
            path.display()
        );
    }
    Ok(())
}

/// The random feeder of `random_scenario(seed)` with a fleet of the
/// requested size and horizon.
fn synthetic(seed: u64, prosumers: usize, horizon: usize) -> Result<Scenario, Failure> {
    let mut scenario = random_scenario(seed);
    let units = gridmarket::units::Units {
        delta_hours: 24.0 / horizon as f64,
        ..scenario.units
    };
    let params = SyntheticParams {
        seed,
        prosumers,
        ..SyntheticParams::default()
    };
    let fleet = generate_synthetic(&params, horizon, &units, scenario.feeder.node_count())
        .map_err(Failure::usage)?;
    scenario.name = format!("synthetic-{seed}");
    scenario.horizon = horizon;
    scenario.units = units;
    scenario.fleet = fleet;
    Ok(scenario)
}
