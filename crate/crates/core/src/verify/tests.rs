use super::*;
use crate::envelope::{allocate, ObjectiveMode};
use crate::market::ClearingResult;
use crate::testkit::*;

fn record<'a>(records: &'a [CheckRecord], name: &str) -> &'a CheckRecord {
    records
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("no record {name}"))
}

fn cleared(case: &Case) -> (EnvelopeAllocation, Vec<ClearingResult>) {
    let alloc = allocate(&case.map, ObjectiveMode::Sqnorm, 1e-4, &settings()).unwrap();
    let m = case.market();
    let res = Mechanism::ALL
        .iter()
        .filter_map(|&mech| m.clear(mech, Some(&alloc), &settings()).ok())
        .collect();
    (alloc, res)
}

use crate::envelope::EnvelopeAllocation;

#[test]
fn record_passes_only_on_finite_residuals() {
    assert!(CheckRecord::new("a", None, "", 1e-7, 1e-6).pass);
    assert!(!CheckRecord::new("a", None, "", 2e-6, 1e-6).pass);
    assert!(!CheckRecord::new("a", None, "", f64::NAN, 1e-6).pass);
    assert!(!CheckRecord::new("a", None, "", f64::INFINITY, 1e-6).pass);
}

#[test]
fn report_is_sorted_and_serializes() {
    let recs = vec![
        CheckRecord::new("zeta", None, "z", 0.0, 1.0),
        CheckRecord::new("alpha", Some(Mechanism::UniformLimit), "a", 2.0, 1.0),
        CheckRecord::new(
            "alpha",
            Some(Mechanism::Locational),
            "a",
            f64::INFINITY,
            1.0,
        ),
    ];
    let rep = VerificationReport::new("abc".into(), recs);
    let order: Vec<(&str, Option<Mechanism>)> = rep
        .records
        .iter()
        .map(|r| (r.name.as_str(), r.mechanism))
        .collect();
    assert_eq!(
        order,
        vec![
            ("alpha", Some(Mechanism::Locational)),
            ("alpha", Some(Mechanism::UniformLimit)),
            ("zeta", None)
        ]
    );
    assert_eq!(
        rep.mechanisms,
        vec![Mechanism::Locational, Mechanism::UniformLimit]
    );
    assert!(!rep.all_pass());
    assert_eq!(rep.failures().count(), 2);
    let lines: Vec<serde_json::Value> = rep
        .to_json_lines()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["check"], "alpha");
    assert_eq!(lines[0]["residual"], serde_json::Value::Null);
    assert_eq!(lines[1]["mechanism"], "uniform-limit");
    assert_eq!(lines[2]["pass"], true);
    let table = rep.to_table();
    assert!(table.contains("FAIL") && table.contains("3 checks, 2 failed"));
}

#[test]
fn fingerprint_is_sha256() {
    assert_eq!(
        fingerprint(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn clean_clearings_certify() {
    for case in [binding_case(), slack_case()] {
        let ctx = case.ctx();
        let (alloc, res) = cleared(&case);
        assert_eq!(res.len(), 3);
        let mut recs = Vec::new();
        for r in &res {
            recs.extend(certify_equilibrium(&ctx, r));
        }
        recs.extend(check_equivalence(&ctx, &res[0], &res[2], &alloc));
        recs.extend(check_redistribution(&ctx, &res[0]));
        recs.extend(check_envelopes(&ctx, &alloc, 200, 7));
        let rep = VerificationReport::new(fingerprint(b"case"), recs);
        assert!(rep.all_pass(), "{}", rep.to_table());
        // every check that applies to a mechanism is present
        for name in [
            "best_response_gap",
            "power_balance",
            "voltage_band",
            "complementary_slackness",
            "dual_sign",
        ] {
            for m in Mechanism::ALL {
                assert!(rep.get(name, Some(m)).is_some(), "{name} {m}");
            }
        }
    }
}

#[test]
fn balance_fault_is_reported_with_its_size() {
    let case = binding_case();
    let (_, res) = cleared(&case);
    let mut bad = res[0].clone();
    bad.injections[0][0] += 0.1;
    let recs = certify_equilibrium(&case.ctx(), &bad);
    let r = record(&recs, "power_balance");
    assert!(!r.pass);
    assert!((r.residual - 0.1).abs() < 1e-6, "{}", r.residual);
}

#[test]
fn price_fault_breaks_best_responses() {
    let bump = |r: &ClearingResult| {
        let mut bad = r.clone();
        bad.prices.energy[0] += 1.0;
        if let Some(p) = &mut bad.prices.prosumer {
            for v in &mut p[0] {
                *v += 1.0;
            }
        }
        bad
    };
    let case = binding_case();
    let (_, res) = cleared(&case);
    for r in [&res[0], &res[2]] {
        let recs = certify_equilibrium(&case.ctx(), &bump(r));
        assert!(!record(&recs, "best_response_gap").pass, "{}", r.mechanism);
    }
    // envelopes that bind can absorb a price change, so use slack ones
    let case = slack_case();
    let doe = case
        .market()
        .clear_uniform_doe(&EnvelopeAllocation::equal(&case.map), &settings())
        .unwrap();
    let recs = certify_equilibrium(&case.ctx(), &bump(&doe));
    assert!(!record(&recs, "best_response_gap").pass);
}

/// Each perturbation moves its target by ten times the tolerance.
#[test]
fn checks_are_sensitive_at_ten_tolerances() {
    let case = binding_case();
    let ctx = case.ctx();
    let tol = ctx.tolerances;
    let (alloc, res) = cleared(&case);
    let (loc, doe, lim) = (&res[0], &res[1], &res[2]);

    // push node 2 above its band by 10 tol (linear p.u.)
    let mut bad = loc.clone();
    let r22 = case.feeder.r[(1, 1)];
    let vmax = case.feeder.v_upper[1].sqrt();
    let v = case
        .feeder
        .voltages(
            &case
                .feeder
                .nodal_injections(&case.fleet.nodes(), &loc.injections_at(0)),
            &[0.0; 2],
        )
        .unwrap();
    let over = ((vmax + 10.0 * tol.voltage).powi(2) - v[1]) / r22;
    bad.injections[0][0] += over;
    assert!(!record(&certify_equilibrium(&ctx, &bad), "voltage_band").pass);

    let mut bad = loc.clone();
    let scale = 1.0
        + bad
            .prices
            .prosumer
            .as_ref()
            .unwrap()
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()));
    bad.prices.prosumer.as_mut().unwrap()[0][0] += 10.0 * tol.price_formula * scale;
    assert!(
        !record(
            &certify_equilibrium(&ctx, &bad),
            "locational_price_identity"
        )
        .pass
    );

    // a price on the slack lower bound of node 1
    let mut bad = loc.clone();
    let slack = v[0] - case.feeder.v_lower[0];
    bad.prices.xi_lower.as_mut().unwrap()[0][0] += 10.0 * tol.complementarity / slack;
    assert!(!record(&certify_equilibrium(&ctx, &bad), "complementary_slackness").pass);

    let mut bad = loc.clone();
    bad.cap_duals[0][0] = -10.0 * tol.dual_sign;
    assert!(!record(&certify_equilibrium(&ctx, &bad), "dual_sign").pass);

    let mut bad = doe.clone();
    let (_, hi) = alloc.interval(&case.map, 0, 0);
    bad.injections[0][0] = hi
        + 10.0 * tol.envelope
            / case.map.coeffs[0]
                .iter()
                .fold(0.0f64, |a, c| a.max(c.abs()));
    assert!(!record(&certify_equilibrium(&ctx, &bad), "envelope_containment").pass);

    let mut bad = lim.clone();
    bad.limits.as_mut().unwrap()[0][0][0] += 10.0 * tol.balance;
    assert!(!record(&certify_equilibrium(&ctx, &bad), "limit_balance").pass);

    // budget lines move with an unbalanced trade
    let mut bad = lim.clone();
    let s = crate::market::settle(lim);
    bad.injections[0][0] += 10.0 * tol.budget * s.scale / lim.prices.energy[0].abs().max(1e-9);
    assert!(!record(&certify_equilibrium(&ctx, &bad), "budget_balance_energy").pass);

    let mut bad = lim.clone();
    bad.welfare += 10.0 * tol.welfare * (1.0 + loc.welfare.abs());
    assert!(
        !record(
            &check_equivalence(&ctx, loc, &bad, &alloc),
            "welfare_equivalence"
        )
        .pass
    );

    let mut bad = lim.clone();
    bad.prices.energy[1] += ctx.units.price_from_cents_per_kwh(10.0 * tol.price);
    assert!(
        !record(
            &check_equivalence(&ctx, loc, &bad, &alloc),
            "uniform_price_identity"
        )
        .pass
    );

    let mut short = alloc.clone();
    short.w[0][0][0] -= 10.0 * tol.decomposition;
    assert!(
        !record(
            &check_envelopes(&ctx, &short, 10, 1),
            "envelope_decomposition"
        )
        .pass
    );
}

#[test]
fn redistribution_detects_a_skewed_income() {
    let case = binding_case();
    let (_, res) = cleared(&case);
    let loc = &res[0];
    assert!(check_redistribution(&case.ctx(), loc)[0].pass);
    let mut bad = loc.clone();
    // raise prosumer 0's locational price where it trades
    let t = (0..bad.horizon())
        .max_by(|&a, &b| {
            loc.injections[0][a]
                .abs()
                .total_cmp(&loc.injections[0][b].abs())
        })
        .unwrap();
    bad.prices.prosumer.as_mut().unwrap()[t][0] += 1.0;
    assert!(!check_redistribution(&case.ctx(), &bad)[0].pass);
}

#[test]
fn oracle_matches_solver_on_a_slack_pair() {
    let a = battery(0, 1, 0.3, 0.1, 0.05, vec![0.04, -0.01], 50.0);
    let b = battery(1, 2, 0.3, 0.2, 0.05, vec![-0.02, 0.01], 50.0);
    let case = Case::new(chain(0.01), vec![a, b]);
    let res = case.market().clear_locational(&settings()).unwrap();
    let out = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::Locational,
        None,
        &OracleConfig::default(),
    )
    .unwrap();
    let w = out.welfare.unwrap();
    assert!(out.warning.is_none(), "{:?}", out.warning);
    assert!(
        (w - res.welfare).abs() <= 1e-6 * (1.0 + res.welfare.abs()),
        "oracle {w} solver {}",
        res.welfare
    );
    // the grid can only beat the solver by the interior-point accuracy
    assert!(w <= res.welfare + 1e-7 * (1.0 + res.welfare.abs()));
}

#[test]
fn oracle_agrees_when_the_band_binds() {
    let exporter = battery(0, 2, 0.02, 0.005, 0.01, vec![1.0], 0.0);
    let importer = battery(1, 1, 4.0, 0.8, 1.0, vec![0.0], 200.0);
    let case = Case::new(chain(0.1), vec![exporter, importer]);
    let res = case.market().clear_locational(&settings()).unwrap();
    let out = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::Locational,
        None,
        &OracleConfig::default(),
    )
    .unwrap();
    let w = out.welfare.unwrap();
    assert!(
        (w - res.welfare).abs() <= 1e-6 * (1.0 + res.welfare.abs()),
        "oracle {w} solver {}",
        res.welfare
    );
}

#[test]
fn active_sets_follow_an_oblique_ridge() {
    // trades at the shared cap, where the grid alone can stall short of
    // the optimum
    use crate::scenario::{generate_synthetic, stranded_pair, SyntheticParams};
    use crate::units::Units;
    let mut sc = stranded_pair();
    let units = Units {
        delta_hours: 0.5,
        ..Units::default()
    };
    let params = SyntheticParams {
        seed: 2,
        prosumers: 2,
        nodes: Some(vec![1, 2]),
        households: 4.0,
        ..SyntheticParams::default()
    };
    sc.units = units;
    sc.fleet = generate_synthetic(&params, 2, &units, 2).unwrap();
    for (p, a) in sc.fleet.iter_mut().zip([[5.0, 3.5], [-6.0, -4.0]]) {
        p.net_supply_kw = a.to_vec();
        p.x0_kwh = vec![p.capacity_kwh[0] * 0.5];
    }
    let model = sc.build().unwrap();
    let market = crate::market::Market::new(&model.feeder, &model.fleet, &model.map).unwrap();
    let res = market.clear_locational(&settings()).unwrap();
    let exact = brute_force_oracle(
        &model.fleet,
        &model.map,
        Mechanism::Locational,
        None,
        &OracleConfig::default(),
    )
    .unwrap();
    let w = exact.welfare.unwrap();
    assert_eq!(exact.gap, 0.0);
    assert!(
        (w - res.welfare).abs() <= 1e-9 * (1.0 + res.welfare.abs()),
        "oracle {w} solver {}",
        res.welfare
    );
    let grid = OracleConfig {
        active_sets: false,
        ..OracleConfig::default()
    };
    let g = brute_force_oracle(&model.fleet, &model.map, Mechanism::Locational, None, &grid)
        .unwrap()
        .welfare
        .unwrap();
    assert!(g <= w + 1e-6 * (1.0 + w.abs()), "grid {g} exact {w}");
}

#[test]
fn oracle_respects_symmetry() {
    let a = battery(0, 1, 0.4, 0.1, 0.05, vec![0.02], 30.0);
    let b = battery(1, 1, 0.4, 0.1, 0.05, vec![0.02], 30.0);
    let case = Case::new(chain(0.01), vec![a, b]);
    let out = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::Locational,
        None,
        &OracleConfig::default(),
    )
    .unwrap();
    // the optimum sits on the shared trade cap, where asymmetric points lose
    // only quadratically and tie with it in floating point near 1e-8
    assert!(
        (out.controls[0][0] - out.controls[1][0]).abs() < 1e-6,
        "{out:?}"
    );
    assert!((out.injections[0][0] + out.injections[1][0]).abs() < 1e-12);
}

#[test]
fn oracle_confirms_empty_envelope_market() {
    let case = stranded_pair_case();
    let alloc = allocate(&case.map, ObjectiveMode::Sqnorm, 1e-4, &settings()).unwrap();
    let cfg = OracleConfig::default();
    let doe = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::UniformDoe,
        Some(&alloc),
        &cfg,
    )
    .unwrap();
    assert!(doe.welfare.is_none());
    let lim = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::UniformLimit,
        Some(&alloc),
        &cfg,
    )
    .unwrap();
    assert!(lim.welfare.is_some());
}

#[test]
fn oracle_refuses_large_instances() {
    let mk = |id| battery(id, 1, 0.3, 0.1, 0.05, vec![0.0; 4], 1.0);
    let case = Case::new(chain(0.01), vec![mk(0), mk(1)]);
    let err = brute_force_oracle(
        &case.fleet,
        &case.map,
        Mechanism::Locational,
        None,
        &OracleConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, OracleError::TooLarge { .. }));
}

#[test]
fn coarse_grids_warn() {
    let a = battery(0, 1, 0.3, 0.1, 0.05, vec![0.04, -0.01], 50.0);
    let b = battery(1, 2, 0.3, 0.2, 0.05, vec![-0.02, 0.01], 50.0);
    let case = Case::new(chain(0.01), vec![a, b]);
    let cfg = OracleConfig {
        points: 3,
        refinements: 0,
        requested_gap: 1e-9,
        active_sets: false,
    };
    let out =
        brute_force_oracle(&case.fleet, &case.map, Mechanism::Locational, None, &cfg).unwrap();
    assert!(matches!(
        out.warning,
        Some(OracleWarning::GridTooCoarse { .. })
    ));
}

#[test]
fn slater_margins_are_reported() {
    let case = slack_case();
    let ctx = case.ctx();
    let alloc = EnvelopeAllocation::equal(&case.map);
    let margins = slater_margins(&ctx, &Mechanism::ALL, Some(&alloc));
    assert_eq!(margins.len(), 3);
    assert!(
        margins.iter().all(|m| m.holds && m.margin > 0.0),
        "{margins:?}"
    );
    // the importer without a battery has a degenerate state box
    let case = stranded_pair_case();
    let margins = slater_margins(&case.ctx(), &[Mechanism::Locational], None);
    assert!(!margins[0].holds, "{margins:?}");
    let report = VerificationReport::new("f".into(), vec![]).with_slater(margins);
    assert!(report.to_table().contains("no strictly feasible point"));
    assert!(report.to_json_lines().contains("slater_margin"));
}
