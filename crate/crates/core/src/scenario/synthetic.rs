//! Seeded synthetic fleets: solar-shaped net supply, home batteries and
//! optionally an EV with an overnight plug-in window.

use super::{EnvelopeConfig, FeederSpec, ProsumerSpec, Scenario, ScenarioError, WindowSpec};
use crate::feeder::Line;
use crate::market::Mechanism;
use crate::units::Units;
use crate::verify::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Ranges `[lo, hi]` per household, kW. All zero gives a flat zero profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeParams {
    /// Midday PV peak.
    pub solar_peak_kw: [f64; 2],
    /// Load present all day.
    pub base_load_kw: [f64; 2],
    /// Extra load peaking around 19:00.
    pub evening_peak_kw: [f64; 2],
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            solar_peak_kw: [2.0, 8.0],
            base_load_kw: [0.3, 1.0],
            evening_peak_kw: [0.5, 2.5],
        }
    }
}

impl ShapeParams {
    pub fn zero() -> Self {
        Self {
            solar_peak_kw: [0.0; 2],
            base_load_kw: [0.0; 2],
            evening_peak_kw: [0.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub seed: u64,
    pub prosumers: usize,
    /// Nodes to place prosumers on, round robin; all feeder nodes if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<usize>>,
    /// Households behind each prosumer; scales profiles, capacity and rate.
    pub households: f64,
    /// Multiplier on net supply.
    pub amplitude: f64,
    #[serde(flatten)]
    pub shape: ShapeParams,
    /// Battery capacity per household, kWh. Draws below 1 kWh are raised
    /// to 1 so every battery has a nonempty state box.
    pub capacity_kwh: [f64; 2],
    /// Initial state of charge as a fraction of capacity.
    pub soc0: [f64; 2],
    pub rate_kw: f64,
    pub efficiency: f64,
    /// Adds an EV battery as a second state with an overnight window.
    pub ev: bool,
    pub theta_input: f64,
    pub theta_state: f64,
    pub theta_terminal: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            prosumers: 10,
            nodes: None,
            households: 1.0,
            amplitude: 1.0,
            shape: ShapeParams::default(),
            capacity_kwh: [0.0, 75.0],
            soc0: [0.2, 0.5],
            rate_kw: 6.6,
            efficiency: 0.9,
            ev: false,
            theta_input: 0.5,
            theta_state: 0.05,
            theta_terminal: 2.0,
        }
    }
}

const EV_CAPACITY_KWH: [f64; 2] = [40.0, 75.0];
const EV_ARRIVAL_H: [f64; 2] = [15.0, 20.0];
const EV_DEPARTURE_H: [f64; 2] = [6.0, 9.0];
/// Discharge headroom kept over every deficit after the feasibility pass.
const MARGIN: f64 = 1.05;

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Four decimals keeps generated files readable.
fn tidy(v: f64) -> f64 {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Hour of day at the middle of step `t`.
fn hour(t: usize, delta: f64) -> f64 {
    ((t as f64 + 0.5) * delta) % 24.0
}

fn solar(h: f64) -> f64 {
    if (6.0..19.0).contains(&h) {
        (PI * (h - 6.0) / 13.0).sin()
    } else {
        0.0
    }
}

fn evening(h: f64) -> f64 {
    let d = (h - 19.0).abs().min(24.0 - (h - 19.0).abs());
    (-(d / 2.0).powi(2)).exp()
}

fn step_of(hour: f64, delta: f64, horizon: usize) -> usize {
    ((hour / delta).round() as usize).min(horizon)
}

/// Fleet in file units. Profiles are then trimmed so that every battery
/// can cover its own deficits with a 5% margin: a prosumer that charges
/// greedily from surplus and never trades stays feasible, so the
/// all-zero trade is always available to every mechanism.
pub fn generate_synthetic(
    params: &SyntheticParams,
    horizon: usize,
    units: &Units,
    node_count: usize,
) -> Result<Vec<ProsumerSpec>, ScenarioError> {
    let field = |f: &str| format!("fleet.synthetic.{f}");
    if params.prosumers == 0 {
        return Err(ScenarioError::invalid(
            field("prosumers"),
            "must be at least 1",
        ));
    }
    if !(params.households > 0.0 && params.efficiency > 0.0 && params.rate_kw >= 0.0) {
        return Err(ScenarioError::invalid(
            field("households"),
            "households and efficiency must be positive, rate nonnegative",
        ));
    }
    let nodes: Vec<usize> = params
        .nodes
        .clone()
        .unwrap_or_else(|| (1..=node_count).collect());
    if nodes.is_empty() || nodes.iter().any(|&n| n == 0 || n > node_count) {
        return Err(ScenarioError::invalid(
            field("nodes"),
            format!("must list feeder nodes 1..={node_count}"),
        ));
    }
    let delta = units.delta_hours;
    let step = params.efficiency * delta;
    let hh = params.households;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut fleet = Vec::with_capacity(params.prosumers);
    for id in 0..params.prosumers {
        let pv = draw(&mut rng, params.shape.solar_peak_kw);
        let base = draw(&mut rng, params.shape.base_load_kw);
        let peak = draw(&mut rng, params.shape.evening_peak_kw);
        let cap = tidy(hh * draw(&mut rng, params.capacity_kwh).max(1.0));
        let x0 = tidy(cap * draw(&mut rng, params.soc0));
        let rate = tidy(hh * params.rate_kw);
        let mut supply: Vec<f64> = (0..horizon)
            .map(|t| {
                let h = hour(t, delta);
                tidy(params.amplitude * hh * (pv * solar(h) - base - peak * evening(h)))
            })
            .collect();

        // greedy pass: charge all surplus, trim deficits the battery cannot
        // cover
        let (lo, hi) = (
            cap * crate::prosumer::SOC_MIN,
            cap * crate::prosumer::SOC_MAX,
        );
        let mut x = x0;
        for a in supply.iter_mut() {
            if *a >= 0.0 {
                let u = a.min(rate).min((hi - x) / step).max(0.0);
                x += step * u;
            } else {
                let avail = rate.min((x - lo) / step).max(0.0);
                if -*a * MARGIN > avail {
                    // round towards zero so the trimmed deficit stays coverable
                    *a = -((avail / MARGIN) * 1e4).floor() / 1e4;
                }
                x -= step * -*a;
            }
        }

        let mut spec = ProsumerSpec {
            id,
            node: nodes[id % nodes.len()],
            capacity_kwh: vec![cap],
            x0_kwh: vec![x0],
            u_lower_kw: vec![-rate],
            u_upper_kw: vec![rate],
            efficiency: params.efficiency,
            theta_input: params.theta_input,
            theta_state: vec![params.theta_state],
            theta_terminal: params.theta_terminal,
            x_lower_kwh: None,
            x_upper_kwh: None,
            target_kwh: None,
            a: None,
            b: None,
            energy_coef: None,
            energy_offset_kw: 0.0,
            windows: vec![],
            net_supply_kw: supply
                .iter()
                .map(|v| if *v == 0.0 { 0.0 } else { *v })
                .collect(),
        };
        if params.ev {
            let ev_cap = tidy(hh * draw(&mut rng, EV_CAPACITY_KWH));
            let ev_x0 = tidy(ev_cap * draw(&mut rng, params.soc0));
            let arrival = step_of(draw(&mut rng, EV_ARRIVAL_H), delta, horizon);
            let departure = step_of(draw(&mut rng, EV_DEPARTURE_H), delta, horizon);
            spec.capacity_kwh.push(ev_cap);
            spec.x0_kwh.push(ev_x0);
            spec.u_lower_kw.push(-rate);
            spec.u_upper_kw.push(rate);
            spec.theta_state.push(params.theta_state);
            spec.windows.push(WindowSpec {
                input: 1,
                arrival,
                departure,
            });
        }
        fleet.push(spec);
    }
    Ok(fleet)
}

/// A small random case for property batteries: a random tree of at most
/// 13 nodes, 2 to 12 prosumers and 4 to 48 steps covering one day.
/// Line impedances are drawn log-uniformly from 0.1 to 3 p.u. so that most
/// but not all cases have binding voltage limits.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let nodes = rng.gen_range(2..=12usize);
    let prosumers = rng.gen_range(2..=12usize);
    let horizon = rng.gen_range(4..=48usize);
    let scale = 10f64.powf(rng.gen_range(-1.0..0.5));
    let lines: Vec<Line> = (1..=nodes)
        .map(|k| {
            let r = tidy_small(scale * rng.gen_range(0.5..1.5));
            let x = tidy_small(r * rng.gen_range(0.5..2.0));
            Line::new(rng.gen_range(0..k), k, r, x)
        })
        .collect();
    let units = Units {
        delta_hours: 24.0 / horizon as f64,
        ..Units::default()
    };
    let params = SyntheticParams {
        seed: rng.gen(),
        prosumers,
        households: rng.gen_range(1.0..6.0f64).round(),
        ev: rng.gen_bool(0.3),
        ..SyntheticParams::default()
    };
    let fleet = generate_synthetic(&params, horizon, &units, nodes)
        .expect("generator parameters are valid");
    Scenario {
        name: format!("random-{seed}"),
        horizon,
        units,
        feeder: FeederSpec {
            lines,
            v0: 1.0,
            v_lower: 0.95,
            v_upper: 1.05,
            node_bounds: None,
        },
        fleet,
        envelope: EnvelopeConfig::default(),
        mechanisms: Mechanism::ALL.to_vec(),
        tolerances: Tolerances::default(),
    }
}

/// Four significant digits.
fn tidy_small(v: f64) -> f64 {
    format!("{v:.3e}").parse().expect("formatted float parses")
}
