use super::*;
use crate::market::Market;
use std::time::Instant;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const MINIMAL: &str = r#"
name = "minimal"
horizon = 2

[feeder]
topology = "topology.csv"

[fleet]
params = "fleet.toml"
profiles = "profiles.csv"
"#;

const FLEET: &str = r#"
[[prosumer]]
id = 7
node = 2
capacity_kwh = [10.0]
x0_kwh = [4.0]
u_lower_kw = [-3.0]
u_upper_kw = [3.0]
theta_input = 0.5
theta_state = [0.05]
theta_terminal = 2.0
"#;

fn minimal_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "topology.csv",
        "from,to,r_pu,x_pu\n0,1,0.01,0.01\n1,2,0.01,0.01\n",
    );
    write(dir.path(), "fleet.toml", FLEET);
    write(
        dir.path(),
        "profiles.csv",
        "prosumer_id,t,net_supply_kw\n7,0,1.5\n7,1,-1\n",
    );
    write(dir.path(), "scenario.toml", MINIMAL);
    dir
}

#[test]
fn minimal_file_gets_documented_defaults() {
    let dir = minimal_dir();
    let sc = load_scenario(&dir.path().join("scenario.toml")).unwrap();
    assert_eq!(sc.units, Units::default());
    assert_eq!(
        (sc.feeder.v0, sc.feeder.v_lower, sc.feeder.v_upper),
        (1.0, 0.95, 1.05)
    );
    assert_eq!(
        sc.envelope,
        EnvelopeConfig {
            epsilon: 1e-4,
            objective_mode: ObjectiveMode::Sqnorm
        }
    );
    assert_eq!(sc.mechanisms, Mechanism::ALL.to_vec());
    assert_eq!(sc.tolerances, Tolerances::default());
    let p = &sc.fleet[0];
    assert_eq!(p.efficiency, 0.9);
    assert_eq!(p.net_supply_kw, vec![1.5, -1.0]);

    let model = sc.build().unwrap();
    assert!((model.feeder.v_lower[0] - 0.9025).abs() < 1e-15);
    assert!((model.feeder.v_upper[1] - 1.1025).abs() < 1e-15);
    let pr = &model.fleet.prosumers[0];
    assert!((pr.capacity[0] - 0.1).abs() < 1e-15);
    assert!((pr.x_lower[0] - 0.02).abs() < 1e-15 && (pr.x_upper[0] - 0.085).abs() < 1e-15);
    assert!((pr.b[(0, 0)] - 0.45).abs() < 1e-15);
    assert!((pr.utility.theta_input - 5000.0).abs() < 1e-9);
    assert!((pr.net_supply[0] - 0.015).abs() < 1e-15);
}

#[test]
fn emit_load_emit_is_byte_identical() {
    let dir = minimal_dir();
    let first = load_scenario(&dir.path().join("scenario.toml")).unwrap();
    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let p1 = first.emit(out1.path()).unwrap();
    let second = load_scenario(&p1).unwrap();
    assert_eq!(second, first);
    second.emit(out2.path()).unwrap();
    for (name, _) in first.render() {
        let a = std::fs::read(out1.path().join(name)).unwrap();
        let b = std::fs::read(out2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(first.fingerprint(), second.fingerprint());
}

#[test]
fn generated_scenarios_round_trip() {
    for sc in [
        random_scenario(3),
        random_scenario(11),
        stranded_pair(),
        desk13(10, 1),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_scenario(&sc.emit(dir.path()).unwrap()).unwrap();
        assert_eq!(loaded, sc, "{}", sc.name);
        assert_eq!(loaded.render(), sc.render());
    }
}

#[test]
fn bounds_file_overrides_the_band() {
    let dir = minimal_dir();
    write(
        dir.path(),
        "bounds.csv",
        "node,v_lower_pu,v_upper_pu\n2,0.97,1.03\n",
    );
    let text = MINIMAL.replace(
        "topology = \"topology.csv\"",
        "topology = \"topology.csv\"\nbounds = \"bounds.csv\"",
    );
    let path = write(dir.path(), "scenario.toml", &text);
    let model = load_scenario(&path).unwrap().build().unwrap();
    assert!((model.feeder.v_upper[0] - 1.1025).abs() < 1e-15);
    assert!((model.feeder.v_upper[1] - 1.03 * 1.03).abs() < 1e-15);
}

#[test]
fn missing_topology_is_a_validation_error() {
    let dir = minimal_dir();
    std::fs::remove_file(dir.path().join("topology.csv")).unwrap();
    match load_scenario(&dir.path().join("scenario.toml")) {
        Err(ScenarioError::Validation { field, .. }) => assert_eq!(field, "feeder.topology"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn zero_horizon_is_a_validation_error() {
    let dir = minimal_dir();
    let path = write(
        dir.path(),
        "scenario.toml",
        &MINIMAL.replace("horizon = 2", "horizon = 0"),
    );
    match load_scenario(&path) {
        Err(ScenarioError::Validation { field, .. }) => assert_eq!(field, "horizon"),
        other => panic!("{other:?}"),
    }
    let path = write(
        dir.path(),
        "scenario.toml",
        &MINIMAL.replace("horizon = 2", "horizon = 2\ndelta_hours = 0.0"),
    );
    assert!(
        matches!(load_scenario(&path), Err(ScenarioError::Validation { field, .. }) if field == "delta_hours")
    );
}

#[test]
fn toml_errors_carry_line_and_column() {
    let dir = minimal_dir();
    let path = write(
        dir.path(),
        "scenario.toml",
        &MINIMAL.replace("horizon = 2", "horizon = \"two\""),
    );
    match load_scenario(&path) {
        Err(ScenarioError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 11)),
        other => panic!("{other:?}"),
    }
    let path = write(
        dir.path(),
        "scenario.toml",
        &format!("{MINIMAL}\n[market]\nmechanism = []\n"),
    );
    assert!(matches!(
        load_scenario(&path),
        Err(ScenarioError::Parse { line: 13, .. })
    ));
}

#[test]
fn bad_references_name_the_field() {
    let dir = minimal_dir();
    write(
        dir.path(),
        "fleet.toml",
        &FLEET.replace("node = 2", "node = 5"),
    );
    assert!(
        matches!(load_scenario(&dir.path().join("scenario.toml")), Err(ScenarioError::Validation { field, .. }) if field.contains("node"))
    );
    write(dir.path(), "fleet.toml", &FLEET.replace("id = 7", "id = 8"));
    assert!(
        matches!(load_scenario(&dir.path().join("scenario.toml")), Err(ScenarioError::Validation { field, .. }) if field == "fleet.profiles")
    );
}

#[test]
fn synthetic_fleet_in_the_scenario_file() {
    let dir = minimal_dir();
    let text = MINIMAL.replace(
        "params = \"fleet.toml\"\nprofiles = \"profiles.csv\"",
        "synthetic = { seed = 4, prosumers = 3 }",
    );
    let sc = load_scenario(&write(dir.path(), "scenario.toml", &text)).unwrap();
    assert_eq!(sc.fleet.len(), 3);
    assert_eq!(
        sc.fleet.iter().map(|p| p.node).collect::<Vec<_>>(),
        vec![1, 2, 1]
    );
}

#[test]
fn generator_is_deterministic() {
    let units = Units::default();
    let params = SyntheticParams {
        seed: 42,
        prosumers: 20,
        ev: true,
        ..SyntheticParams::default()
    };
    let a = generate_synthetic(&params, 48, &units, 12).unwrap();
    let b = generate_synthetic(&params, 48, &units, 12).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&SyntheticParams { seed: 43, ..params }, 48, &units, 12).unwrap();
    assert_ne!(a, c);
    assert_eq!(random_scenario(9).render(), random_scenario(9).render());
}

#[test]
fn generator_respects_published_ranges() {
    let units = Units::default();
    let params = SyntheticParams {
        seed: 5,
        prosumers: 200,
        ..SyntheticParams::default()
    };
    for p in generate_synthetic(&params, 48, &units, 12).unwrap() {
        let c = p.capacity_kwh[0];
        assert!((1.0..=75.0).contains(&c));
        let soc = p.x0_kwh[0] / c;
        assert!((0.2 - 1e-3..=0.5 + 1e-3).contains(&soc), "{soc}");
        assert_eq!((p.u_lower_kw[0], p.u_upper_kw[0]), (-6.6, 6.6));
        // midday surplus before any trimming shows up at noon
        let h12 = p.net_supply_kw[24];
        assert!(h12 > 0.0, "{h12}");
    }
}

#[test]
fn zero_shape_gives_zero_supply() {
    let params = SyntheticParams {
        seed: 1,
        prosumers: 5,
        shape: ShapeParams::zero(),
        ..SyntheticParams::default()
    };
    for p in generate_synthetic(&params, 48, &Units::default(), 3).unwrap() {
        assert!(p
            .net_supply_kw
            .iter()
            .all(|v| *v == 0.0 && v.is_sign_positive()));
    }
}

#[test]
fn full_scale_generation_is_fast() {
    let start = Instant::now();
    let sc = desk13(300, 7);
    let model = sc.build().unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
    assert_eq!(model.fleet.len(), 300);
    assert_eq!(model.fleet.horizon, 48);
    for node in FEEDER13_AGGREGATOR_NODES {
        assert_eq!(
            model.fleet.nodes().iter().filter(|&&k| k == node).count(),
            30
        );
    }
}

/// Replays the generator's own argument: with every trade at zero, each
/// prosumer alone can follow its profile.
#[test]
fn zero_trade_is_feasible_for_generated_fleets() {
    for seed in 0..30 {
        let sc = random_scenario(seed);
        let model = sc.build().unwrap();
        for pr in &model.fleet.prosumers {
            let m = pr.inputs();
            let step = pr.b[(0, 0)];
            let mut u = vec![0.0; m * model.fleet.horizon];
            let mut x = pr.x0[0];
            for t in 0..model.fleet.horizon {
                let a = pr.net_supply[t];
                let v = if a >= 0.0 {
                    a.min(pr.u_upper[0])
                        .min((pr.x_upper[0] - x) / step)
                        .max(0.0)
                } else {
                    a
                };
                u[t * m] = v;
                x += step * v;
            }
            let p = vec![0.0; model.fleet.horizon];
            let bad = pr.feasibility_check(&u, &p, 1e-9).unwrap();
            assert!(bad.is_empty(), "seed {seed} prosumer {}: {bad:?}", pr.id);
        }
    }
}

#[test]
fn random_battery_has_binding_cases() {
    let settings = gridmarket_solver::Settings::default();
    let mut binding = 0;
    for seed in 0..20 {
        let model = random_scenario(seed).build().unwrap();
        let market = Market::new(&model.feeder, &model.fleet, &model.map).unwrap();
        let res = market
            .clear_locational(&settings)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let xi = res
            .prices
            .xi_upper
            .iter()
            .chain(&res.prices.xi_lower)
            .flatten()
            .flatten()
            .fold(0.0f64, |a, v| a.max(*v));
        if xi > 1e-6 {
            binding += 1;
        }
    }
    assert!(binding >= 5, "{binding} of 20 bind");
}

#[test]
fn atomic_write_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    write_atomic(&p, b"x\n").unwrap();
    write_atomic(&p, b"y\n").unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"y\n");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn line_col_counts_from_one() {
    assert_eq!(line_col("ab\ncd", 0), (1, 1));
    assert_eq!(line_col("ab\ncd", 4), (2, 2));
}
