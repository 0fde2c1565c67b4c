//! Small fixtures shared by unit tests.

use crate::feeder::{AffineConstraintMap, FeederModel, Line};
use crate::market::Market;
use crate::prosumer::{Availability, ProsumerFleet, ProsumerParams, StorageSpec};
use gridmarket_solver::Settings;

pub fn band() -> (f64, f64) {
    (0.95f64.powi(2), 1.05f64.powi(2))
}

pub fn chain(r: f64) -> FeederModel {
    let (lo, hi) = band();
    FeederModel::with_uniform_bounds(
        &[Line::new(0, 1, r, 0.0), Line::new(1, 2, r, 0.0)],
        2,
        1.0,
        lo,
        hi,
    )
    .unwrap()
}

/// One-battery prosumer in p.u. with utility weights that make it want to
/// fill up by the end of the horizon.
pub fn battery(
    id: usize,
    node: usize,
    cap: f64,
    x0: f64,
    rate: f64,
    supply: Vec<f64>,
    terminal: f64,
) -> ProsumerParams {
    StorageSpec {
        id,
        node,
        capacity: vec![cap],
        x0: vec![x0],
        rate,
        efficiency: 0.9,
        delta_hours: 0.5,
        net_supply: supply,
        theta_input: 1.0,
        theta_state: vec![0.5],
        theta_terminal: terminal,
        availability: vec![Availability::Always],
    }
    .build()
}

pub fn settings() -> Settings {
    Settings::default()
}

pub struct Case {
    pub feeder: FeederModel,
    pub fleet: ProsumerFleet,
    pub map: AffineConstraintMap,
}

impl Case {
    pub fn new(feeder: FeederModel, prosumers: Vec<ProsumerParams>) -> Self {
        let t = prosumers[0].horizon();
        let fleet = ProsumerFleet::new(prosumers, t, 0.5).unwrap();
        let map = feeder.voltage_constraint_map(&fleet.nodes(), t);
        Self { feeder, fleet, map }
    }

    pub fn market(&self) -> Market<'_> {
        Market::new(&self.feeder, &self.fleet, &self.map).unwrap()
    }
}

/// Exporter at the far end of a chain, importer with an empty battery near
/// the head; the upper voltage bound at node 2 limits the exchange.
pub fn binding_case() -> Case {
    let exporter = battery(0, 2, 0.02, 0.005, 0.01, vec![1.0, 1.0, 1.0], 0.0);
    let importer = battery(1, 1, 4.0, 0.8, 1.0, vec![0.0, 0.0, 0.0], 200.0);
    Case::new(chain(0.1), vec![exporter, importer])
}

/// Two symmetric neighbours trading small amounts on a stiff feeder.
pub fn slack_case() -> Case {
    let a = battery(0, 1, 0.3, 0.1, 0.05, vec![0.04, 0.02, -0.01], 50.0);
    let b = battery(1, 2, 0.3, 0.2, 0.05, vec![-0.02, 0.0, 0.01], 50.0);
    Case::new(chain(0.01), vec![a, b])
}

/// An exporter next to the head and an importer without storage behind it.
pub fn stranded_pair_case() -> Case {
    let exporter = battery(0, 1, 1.0, 0.3, 0.6, vec![0.6, 0.6], 1.0);
    let mut importer = battery(1, 2, 0.0, 0.0, 0.0, vec![-0.5, -0.5], 0.0);
    importer.utility.theta_state = vec![vec![0.0]; 2];
    Case::new(chain(0.05), vec![exporter, importer])
}

impl Case {
    pub fn ctx(&self) -> crate::verify::VerifyContext<'_> {
        crate::verify::VerifyContext {
            feeder: &self.feeder,
            fleet: &self.fleet,
            map: &self.map,
            units: crate::units::Units::default(),
            tolerances: crate::verify::Tolerances::default(),
            settings: settings(),
        }
    }
}
