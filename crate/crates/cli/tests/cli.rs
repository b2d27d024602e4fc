use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qarlab::spatial::{SqarDecay, SqarFamily, SqarPriors, StationSet};
use qarlab::qar::QuantileProcess;

const CHAIN: [&str; 6] = ["--iterations", "2000", "--burn-in", "1000", "--thin", "2"];

fn qarlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qarlab"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("run qarlab")
}

fn ok(args: &[&str]) -> Output {
    let out = qarlab(args);
    assert!(
        out.status.success(),
        "qarlab {args:?} failed\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fit_sc(dir: &Path, scenario: &str, k: &str, seed: &str) -> PathBuf {
    let data = dir.join(format!("{scenario}.csv"));
    ok(&["simulate", "--scenario", scenario, "--t", "150", "--seed", seed, "--out", s(&data)]);
    let out = dir.join(format!("fit_{scenario}"));
    let mut args = vec!["fit", "--data", s(&data), "--out", s(&out), "--seed", "7", "--k", k, "--bounds", "unit"];
    args.extend(CHAIN);
    ok(&args);
    out
}

#[test]
fn sc1_round_trip_centres_theta1_on_zero() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_sc(dir.path(), "SC1", "1", "11");
    for f in ["draws.csv", "summary.json", "theta_grid.csv", "density_grid.csv"] {
        assert!(fit.join(f).exists(), "{f}");
    }
    let (header, rows) = read_csv(&fit.join("theta_grid.csv"));
    assert_eq!(header, ["series", "tau", "j", "mean", "lower", "upper"]);
    let t1: Vec<f64> = rows.iter().filter(|r| r[2] == "1").map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(t1.len(), 99);
    let avg = t1.iter().sum::<f64>() / t1.len() as f64;
    assert!(avg.abs() < 0.15, "mean theta_1 = {avg}");

    let summary = json(&fit.join("summary.json"));
    let cfg = &summary["config"];
    assert_eq!(cfg["chain"]["iterations"], 2000);
    assert!(cfg["chain"]["adapt_eps"].is_number());
    assert!(cfg["priors"]["sigma_ab"].is_number());
    assert_eq!(cfg["tau_grid"].as_array().unwrap().len(), 99);
    assert_eq!(summary["bounds"][0]["lower"], 0.0);
    assert_eq!(summary["bounds"][0]["upper"], 1.0);
    let names: Vec<&str> = summary["params"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["eta1.a", "eta1.b", "eta2.a", "eta2.b"]);

    ok(&["assess", "--fit", s(&fit)]);
    let m = json(&fit.join("metrics.json"));
    let r1 = m["series"][0]["r1_bar"].as_f64().unwrap();
    let dt = m["series"][0]["delta_tilde"].as_f64().unwrap();
    assert!((r1 - (1.0 - dt)).abs() < 1e-12);
    assert_eq!(m["series"][0]["n_terms"], 149);
    assert!(m["average"]["p_tilde"][0]["value"].as_f64().unwrap() >= 0.0);
    assert!(fit.join("metrics_profile.csv").exists());
}

#[test]
fn every_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for (sc, k) in [("SC2", "1"), ("SC3", "1"), ("SC4", "1"), ("SC5", "2"), ("SC6", "2"), ("SC7", "2")] {
        let fit = fit_sc(dir.path(), sc, k, "3");
        ok(&["assess", "--fit", s(&fit)]);
        assert!(fit.join("metrics.json").exists(), "{sc}");
    }
}

#[test]
fn fits_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["simulate", "--scenario", "SC4", "--t", "120", "--seed", "5", "--out", s(&data)]);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["--threads", threads, "fit", "--data", s(&data), "--out", s(&out), "--seed", "9"];
        args.extend(CHAIN);
        ok(&args);
        std::fs::read(out.join("draws.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "4"));
}

#[test]
fn missing_cell_is_a_parse_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "y,z\n0.2,0.1\n0.4,\n0.5,0.3\n").unwrap();
    let out = qarlab(&["fit", "--data", s(&data), "--out", s(&dir.path().join("o")), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":3:") && err.contains("missing"), "{err}");
}

#[test]
fn kx2006_rejects_negative_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "y\n1.2\n0.8\n-0.4\n1.5\n2.0\n").unwrap();
    let out = qarlab(&[
        "fit", "--family", "kx2006", "--data", s(&data), "--out", s(&dir.path().join("o")), "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("original scale") && err.contains("all positive"), "{err}");
}

#[test]
fn kx2006_fits_positive_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let rows: String = (0..80).map(|i| format!("{}\n", 2.0 + (i as f64 * 0.7).sin())).collect();
    std::fs::write(&data, format!("y\n{rows}")).unwrap();
    let out = dir.path().join("o");
    let mut args = vec!["fit", "--family", "kx2006", "--data", s(&data), "--out", s(&out), "--seed", "2"];
    args.extend(CHAIN);
    ok(&args);
    assert!(json(&out.join("summary.json"))["bounds"][0].is_null());
    ok(&["assess", "--fit", s(&out)]);
}

#[test]
fn seed_is_mandatory_for_fit_and_simulate() {
    let out = qarlab(&["fit", "--data", "x.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qarlab(&["simulate", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["simulate", "--scenario", "SC2", "--t", "100", "--seed", "1", "--out", s(&data)]);
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"chain": {"iterations": 1500, "burn_in": 500, "thin": 10}, "level": 0.9, "tau_grid": [0.1, 0.5, 0.9]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--seed", "4", "--thin", "5"]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["config"]["chain"]["thin"], 5);
    assert_eq!(summary["config"]["chain"]["seed"], 4);
    assert_eq!(summary["n_draws"], 200);
    assert_eq!(read_csv(&out.join("theta_grid.csv")).1.len(), 2 * 3);

    std::fs::write(&cfg, r#"{"chian": {}}"#).unwrap();
    let bad = qarlab(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--seed", "4"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn assess_rejects_mismatched_draws() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_sc(dir.path(), "SC1", "1", "2");
    let draws = fit.join("draws.csv");
    let text = std::fs::read_to_string(&draws).unwrap();
    let trimmed: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_owned() + "\n")
        .collect();
    std::fs::write(&draws, trimmed).unwrap();
    let out = qarlab(&["assess", "--fit", s(&fit)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("do not match"));

    let summary = fit.join("summary.json");
    let text = std::fs::read_to_string(&summary).unwrap().replacen("\"family\": \"qar\"", "\"family\": \"foo\"", 1);
    std::fs::write(&summary, text).unwrap();
    assert_eq!(qarlab(&["assess", "--fit", s(&fit)]).status.code(), Some(3));
}

#[test]
fn coverage_writes_averaged_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov");
    ok(&[
        "coverage", "--scenario", "SC1", "--b", "2", "--t", "150", "--seed", "1", "--out", s(&out),
        "--iterations", "1500", "--burn-in", "500", "--thin", "5",
    ]);
    let c = json(&out.join("coverage.json"));
    for field in ["mean_cvg_theta0", "mean_cvg_theta1"] {
        let v = c[field].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{field} = {v}");
    }
    assert_eq!(c["b"], 2);
    assert_eq!(c["failures"], 0);
    let (header, rows) = read_csv(&out.join("coverage.csv"));
    assert_eq!(header, ["tau", "cvg_theta0", "cvg_theta1"]);
    assert_eq!(rows.len(), 99);
}

#[test]
fn mqar_fit_writes_joint_density() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("m.csv");
    ok(&["simulate", "--family", "mqar", "--rho", "0.5", "--t", "150", "--seed", "8", "--out", s(&data)]);
    let out = dir.path().join("o");
    let mut args = vec![
        "fit", "--family", "mqar", "--data", s(&data), "--out", s(&out), "--seed", "3", "--cond", "0.4", "--cond-min",
        "0.6",
    ];
    args.extend(CHAIN);
    ok(&args);
    let (header, rows) = read_csv(&out.join("joint_density.csv"));
    assert_eq!(header, ["cond_max", "cond_min", "y_max", "y_min", "density"]);
    assert_eq!(rows.len(), 51 * 51);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["series"], serde_json::json!(["max", "min"]));
    ok(&["assess", "--fit", s(&out)]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["series"].as_array().unwrap().len(), 2);
}

#[test]
fn krige_at_observed_sites_reproduces_in_sample_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let st = dir.path().join("st.csv");
    std::fs::write(&st, "id,x,y,elev\nA,0,0,10\nB,1,0,20\nC,0,1.5,30\nD,2,1,5\n").unwrap();
    let data = dir.path().join("s.csv");
    ok(&["simulate", "--family", "sqar", "--stations", s(&st), "--t", "60", "--seed", "4", "--out", s(&data)]);
    let fit = dir.path().join("fit");
    ok(&[
        "fit", "--family", "sqar", "--data", s(&data), "--stations", s(&st), "--out", s(&fit), "--seed", "2",
        "--iterations", "1500", "--burn-in", "500", "--thin", "10", "--bounds", "unit",
    ]);
    ok(&["krige", "--fit", s(&fit), "--sites", s(&st), "--tau", "0.2,0.5,0.8", "--cond-y", "0.5"]);
    let (header, rows) = read_csv(&fit.join("surface.csv"));
    assert_eq!(header, ["x", "y", "tau", "cond_y", "q_mean"]);
    assert_eq!(rows.len(), 4 * 3);

    // in-sample posterior means from the draws
    let stations = StationSet::new(
        ["A", "B", "C", "D"].map(String::from).to_vec(),
        vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.5), (2.0, 1.0)],
    )
    .unwrap();
    let (dh, drows) = read_csv(&data);
    assert_eq!(dh, ["A", "B", "C", "D"]);
    let panel: Vec<Vec<f64>> = drows.iter().map(|r| r.iter().map(|v| v.parse().unwrap()).collect()).collect();
    let fam = SqarFamily::new(panel, stations, SqarPriors::default(), SqarDecay::default(), true).unwrap();
    let (_, draws) = read_csv(&fit.join("draws.csv"));
    let draws: Vec<Vec<f64>> = draws.iter().map(|r| r.iter().map(|v| v.parse().unwrap()).collect()).collect();
    for (row_idx, row) in rows.iter().enumerate() {
        let site = row_idx / 3;
        let tau: f64 = row[2].parse().unwrap();
        let expect = draws
            .iter()
            .map(|t| fam.decode(t).unwrap().site_model(site).unwrap().quantile(tau, &[0.5]).unwrap())
            .sum::<f64>()
            / draws.len() as f64;
        let got: f64 = row[4].parse().unwrap();
        assert!((got - expect).abs() < 1e-8, "site {site} tau {tau}: {got} vs {expect}");
    }

    let qfit = fit_sc(dir.path(), "SC1", "1", "1");
    assert_eq!(qarlab(&["krige", "--fit", s(&qfit), "--sites", s(&st)]).status.code(), Some(2));
}
