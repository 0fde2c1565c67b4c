//! Scenarios that ship with the crate.

use super::{
    generate_synthetic, EnvelopeConfig, FeederSpec, ProsumerSpec, Scenario, SyntheticParams,
};
use crate::feeder::Line;
use crate::market::Mechanism;
use crate::units::Units;
use crate::verify::Tolerances;

/// The 13-node test feeder with nodes renumbered 0..=12 (650 is the head,
/// then 632, 633, 634, 645, 646, 671, 692, 675, 684, 611, 652, 680).
/// Positive-sequence impedances in p.u. on 100 kVA and 4.16 kV; the
/// 633-634 transformer and the 671-692 switch are kept as short lines.
pub fn feeder13_lines() -> Vec<Line> {
    [
        (0, 1, 7.584e-4, 2.228e-3),
        (1, 2, 4.118e-4, 6.465e-4),
        (2, 3, 0.0022, 0.004),
        (1, 4, 7.275e-4, 7.372e-4),
        (4, 5, 4.365e-4, 4.423e-4),
        (1, 6, 7.584e-4, 2.228e-3),
        (6, 7, 3.79e-6, 1.114e-5),
        (7, 8, 4.368e-4, 2.442e-4),
        (6, 9, 4.365e-4, 4.423e-4),
        (9, 10, 4.364e-4, 4.424e-4),
        (9, 11, 1.1754e-3, 4.486e-4),
        (6, 12, 3.792e-4, 1.114e-3),
    ]
    .into_iter()
    .map(|(f, t, r, x)| Line::new(f, t, r, x))
    .collect()
}

/// Load nodes of the 13-node feeder that host aggregators.
pub const FEEDER13_AGGREGATOR_NODES: [usize; 10] = [2, 3, 4, 5, 7, 8, 9, 10, 11, 12];

fn feeder13() -> FeederSpec {
    FeederSpec {
        lines: feeder13_lines(),
        v0: 1.0,
        v_lower: 0.95,
        v_upper: 1.05,
        node_bounds: None,
    }
}

/// Synthetic aggregators of twelve households each on the 13-node feeder,
/// one day in half-hour steps. `desk13(10, seed)` is the desk-scale case,
/// `desk13(300, seed)` puts thirty aggregators on every load node.
pub fn desk13(aggregators: usize, seed: u64) -> Scenario {
    let horizon = 48;
    let units = Units::default();
    let params = SyntheticParams {
        seed,
        prosumers: aggregators,
        nodes: Some(FEEDER13_AGGREGATOR_NODES.to_vec()),
        households: 12.0,
        ..SyntheticParams::default()
    };
    let feeder = feeder13();
    let fleet = generate_synthetic(&params, horizon, &units, feeder.node_count())
        .expect("built-in parameters are valid");
    Scenario {
        name: format!("desk13-{aggregators}"),
        horizon,
        units,
        feeder,
        fleet,
        envelope: EnvelopeConfig::default(),
        mechanisms: Mechanism::ALL.to_vec(),
        tolerances: Tolerances::default(),
    }
}

/// Two prosumers on a two-line chain where envelopes leave no room to
/// trade but tradable limits do. The near prosumer exports; the far one
/// has no battery and a 50 kW load. Under the envelope split the far node
/// may not import at all, while limit trading hands it the exporter's
/// unused headroom.
pub fn stranded_pair() -> Scenario {
    let lines = vec![Line::new(0, 1, 0.05, 0.05), Line::new(1, 2, 0.05, 0.05)];
    let exporter = ProsumerSpec {
        id: 0,
        node: 1,
        capacity_kwh: vec![100.0],
        x0_kwh: vec![30.0],
        u_lower_kw: vec![-60.0],
        u_upper_kw: vec![60.0],
        efficiency: 0.9,
        theta_input: 1e-4,
        theta_state: vec![5e-5],
        theta_terminal: 1e-4,
        x_lower_kwh: None,
        x_upper_kwh: None,
        target_kwh: None,
        a: None,
        b: None,
        energy_coef: None,
        energy_offset_kw: 0.0,
        windows: vec![],
        net_supply_kw: vec![60.0, 60.0],
    };
    let importer = ProsumerSpec {
        id: 1,
        node: 2,
        capacity_kwh: vec![0.0],
        x0_kwh: vec![0.0],
        u_lower_kw: vec![0.0],
        u_upper_kw: vec![0.0],
        theta_state: vec![0.0],
        theta_terminal: 0.0,
        net_supply_kw: vec![-50.0, -50.0],
        ..exporter.clone()
    };
    Scenario {
        name: "stranded-pair".into(),
        horizon: 2,
        units: Units::default(),
        feeder: FeederSpec {
            lines,
            v0: 1.0,
            v_lower: 0.95,
            v_upper: 1.05,
            node_bounds: None,
        },
        fleet: vec![exporter, importer],
        envelope: EnvelopeConfig::default(),
        mechanisms: Mechanism::ALL.to_vec(),
        tolerances: Tolerances::default(),
    }
}
