use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridmarket"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .join("scenario.toml")
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("GRIDMARKET_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn clear(mechanism: &str, scenario: &Path, out: &Path) -> Output {
    run(&[
        "--json",
        "clear",
        "--mechanism",
        mechanism,
        "-s",
        scenario.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ])
}

/// Data rows of a CSV after the units comment and the header.
fn csv(path: &Path) -> (String, String, usize) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let units = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().to_string();
    (units, header, lines.filter(|l| !l.is_empty()).count())
}

#[test]
fn limit_clearing_balances_the_budget_and_the_bundle_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("desk13");
    for m in ["locational", "uniform-limit"] {
        let o = clear(m, &sc, dir.path());
        assert!(o.status.success(), "{m}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        let total = v["budget_total_cents"].as_f64().unwrap();
        let scale = v["budget_scale_cents"].as_f64().unwrap();
        assert!(
            total.abs() <= 1e-6 * scale.max(1.0),
            "{m}: budget {total} on scale {scale}"
        );
    }

    let o = run(&["verify", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    for name in [
        "welfare_equivalence",
        "uniform_price_identity",
        "surplus_redistribution",
        "budget_balance_limits",
    ] {
        let line = table
            .lines()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("{name} missing:\n{table}"));
        assert!(line.ends_with("PASS"), "{line}");
    }
    assert!(dir.path().join("verification.json").is_file());

    let o = run(&["--json", "verify", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn result_tables_have_documented_headers_and_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = clear("uniform-limit", &scenario("desk13"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("uniform-limit");
    let (n, t, nodes) = (10, 48, 12);
    let comps = 2 * nodes;
    let expect = [
        ("prices_energy.csv", "t,lambda_cents_per_kwh", t),
        (
            "prices_locational.csv",
            "t,node,lambda_cents_per_kwh",
            t * nodes,
        ),
        (
            "prices_limits.csv",
            "t,component,node,kind,beta_cents_per_pu2",
            t * comps,
        ),
        ("injections.csv", "t,prosumer_id,node,p_kw", t * n),
        ("voltages.csv", "t,node,v_pu", t * nodes),
        (
            "incomes.csv",
            "prosumer_id,node,energy_cents,limits_cents,total_cents",
            n,
        ),
        ("budget.csv", "t,energy_cents,limits_cents,total_cents", t),
    ];
    for (file, header, rows) in expect {
        let (units, h, r) = csv(&out.join(file));
        assert!(units.starts_with("# s_base_kva=100"), "{file}: {units}");
        assert_eq!(h, header, "{file}");
        assert_eq!(r, rows, "{file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mechanism"], "uniform-limit");

    let o = run(&["report", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, h, r) = csv(&dir.path().join("report/fig_uniform_price.csv"));
    assert_eq!(h, "mechanism,t,hour,lambda_cents_per_kwh");
    assert_eq!(r, t);
}

#[test]
fn envelope_clearing_without_room_to_trade_exits_one_with_an_explanation() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "clear",
        "-m",
        "uniform-doe",
        "-s",
        scenario("stranded-pair").to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("infeasible") && err.contains("envelope"),
        "{err}"
    );
    assert!(!dir.path().join("uniform-doe").exists());

    let o = clear("uniform-doe", &scenario("stranded-pair"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"], "infeasible");
    assert_eq!(v["exit_code"], 1);

    let o = clear("uniform-limit", &scenario("stranded-pair"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        run(&["clear", "-m", "nodal", "-s", "x.toml", "-o", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    let o = run(&[
        "--json",
        "clear",
        "-m",
        "locational",
        "-s",
        missing.to_str().unwrap(),
        "-o",
        d,
    ]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"], "input");
    assert_eq!(run(&["verify", d]).status.code(), Some(2));
}

#[test]
fn generated_scenarios_are_reproducible_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "gen",
            "--seed",
            "7",
            "-n",
            "4",
            "--horizon",
            "12",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "scenario.toml",
        "topology.csv",
        "fleet.toml",
        "profiles.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let res = dir.path().join("res");
    let o = clear("locational", &a.join("scenario.toml"), &res);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, _, rows) = csv(&res.join("locational/injections.csv"));
    assert_eq!(rows, 4 * 12);

    let env = dir.path().join("env");
    let o = run(&[
        "doe",
        "-s",
        a.join("scenario.toml").to_str().unwrap(),
        "-o",
        env.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, h, _) = csv(&env.join("envelopes.csv"));
    assert_eq!(h, "t,prosumer_id,component_index,w_value");
}

#[test]
fn shipped_scenarios_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, name, seed) in [
        ("desk13", "desk13", "1"),
        ("stranded-pair", "stranded-pair", "0"),
    ] {
        let out = dir.path().join(name);
        let o = run(&[
            "gen",
            "--kind",
            kind,
            "-n",
            "10",
            "--seed",
            seed,
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let shipped = scenario(name).parent().unwrap().to_path_buf();
        for entry in std::fs::read_dir(&shipped).unwrap() {
            let f = entry.unwrap().file_name();
            assert_eq!(
                std::fs::read(shipped.join(&f)).unwrap(),
                std::fs::read(out.join(&f)).unwrap(),
                "{name}/{f:?}"
            );
        }
    }
}
