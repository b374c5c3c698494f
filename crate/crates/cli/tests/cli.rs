use std::path::Path;
use std::process::Command;

use conc_cli::scenario::{parse, parse_with_env, Instance, Radius};

const CIRCLE: &str = "\
# unit circle, V = 1
[problem]
n = 2
k = 1
p = 3

[geometry]
instance = circle
radius = 1

[potential]
model = constant
value = 1
";

fn conc(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_conc"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("CONC_OUT")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (h, rows)
}

#[test]
fn parses_sections_and_dotted_keys() {
    let sc = parse("c", &format!("{CIRCLE}run.epsilon = 0.1, 0.05\nrun.I = 2\n")).unwrap();
    assert_eq!(sc.problem.n, 2);
    assert_eq!(sc.problem.p, 3.0);
    assert_eq!(sc.geometry.instance, Instance::Circle);
    assert_eq!(sc.geometry.radius, Radius::Fixed(1.0));
    assert_eq!(sc.run.epsilons, vec![0.1, 0.05]);
    assert_eq!(sc.run.order, 2);
    let st = parse("s", "problem.n = 2\nproblem.p = 3\ngeometry.radius = stationary\npotential.model = gaussian\n").unwrap();
    assert_eq!(st.geometry.radius, Radius::Stationary);
}

#[test]
fn epsilon_range() {
    let sc = parse("c", &format!("{CIRCLE}[run]\nepsilon_min = 0.1\nepsilon_max = 0.5\nepsilon_count = 5\n")).unwrap();
    assert_eq!(sc.run.epsilons.len(), 5);
    assert!((sc.run.epsilons[4] - 0.5).abs() < 1e-15 && (sc.run.epsilons[1] - 0.2).abs() < 1e-15);
}

#[test]
fn missing_key_names_it() {
    let e = parse("c", "problem.n = 2\nproblem.k = 1\n").unwrap_err();
    assert!(e.message.contains("problem.p"), "{e}");
    assert_eq!(e.line, 3);
}

#[test]
fn bad_value_reports_line_and_column() {
    let e = parse("c", "problem.n = 2\nproblem.p = three\n").unwrap_err();
    assert_eq!((e.line, e.column), (2, 13));
    assert!(e.message.contains("problem.p"));
    let e = parse("c", "problem.n = 2\n  bogus.key = 1\n").unwrap_err();
    assert_eq!((e.line, e.column), (2, 3));
    let e = parse("c", "problem.n = 2\nproblem.n = 3\n").unwrap_err();
    assert!(e.message.contains("duplicate"));
    let e = parse("c", "problem.n 2\n").unwrap_err();
    assert_eq!(e.line, 1);
}

#[test]
fn scope_and_subcriticality() {
    let sc = parse("a", "problem.n = 2\nproblem.k = 1\nproblem.p = 3\n").unwrap();
    let v = sc.validation();
    assert_eq!(v.sigma, 1.5);
    assert_eq!(v.codim, 1);
    // N = 2 has no upper bound on p
    let sc = parse("b", "problem.n = 3\nproblem.k = 1\nproblem.p = 5\n").unwrap();
    assert!(sc.validation().critical_exponent.is_none());
    assert!(sc.validation().subcriticality_margin.is_infinite());
    let e = parse("c", "problem.n = 5\nproblem.k = 1\nproblem.p = 3\n").unwrap_err();
    assert!(e.message.contains("N = n − k = 4"), "{e}");
    let e = parse("d", "problem.n = 4\nproblem.k = 1\nproblem.p = 5\n").unwrap_err();
    assert!(e.message.contains("subcritical"), "{e}");
    assert!(parse("e", "problem.n = 2\nproblem.p = 3\nrun.tol_fp = 0\n").is_err());
}

#[test]
fn environment_overrides() {
    let env = vec![("CONC_RUN_EPSILON".to_string(), "0.2,0.1".to_string()), ("CONC_RUN_I".into(), "4".into()), ("HOME".into(), "/".into())];
    let sc = parse_with_env("c", CIRCLE, env).unwrap();
    assert_eq!(sc.run.epsilons, vec![0.2, 0.1]);
    assert_eq!(sc.run.order, 4);
}

#[test]
fn validate_prints_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "c.scn", CIRCLE);
    let out = conc(dir.path(), &["validate", "--scenario", &s]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sigma"], 1.5);
    assert_eq!(v["N"], 1);
    let bad = write_scenario(dir.path(), "bad.scn", "problem.n = 5\nproblem.k = 1\nproblem.p = 3\n");
    let out = conc(dir.path(), &["validate", "--scenario", &bad]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_key_exits_with_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "m.scn", "problem.n = 2\n");
    let out = conc(dir.path(), &["ground-state", "--scenario", &s]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("problem.p") && err.contains("parse error at 2:1"), "{err}");
}

#[test]
#[allow(clippy::approx_constant)]
fn ground_state_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "c.scn", CIRCLE);
    let out = conc(dir.path(), &["ground-state", "--scenario", &s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = read_csv(&dir.path().join("out/ground_state.csv"));
    assert_eq!(h, ["r", "w", "wp"]);
    let w0: f64 = rows[0][1].parse().unwrap();
    assert!((w0 - 1.4142136).abs() < 1e-6, "{w0}");
    assert!((w0 - 2f64.sqrt()).abs() < 1e-8);
    let ids: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/identities.json")).unwrap()).unwrap();
    assert_eq!(ids[0]["identity"], "sigma");
}

#[test]
fn gap_scan_finds_resonances() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "c.scn", &format!("{CIRCLE}run.epsilon_min = 0.5\nrun.epsilon_max = 2\nrun.epsilon_count = 151\n"));
    let out = conc(dir.path(), &["gap-scan", "--scenario", &s, "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, res) = read_csv(&dir.path().join("out/resonances.csv"));
    let eps: Vec<f64> = res.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((eps[0] - 3f64.sqrt()).abs() < 1e-5 && (eps[1] - 3f64.sqrt() / 2.0).abs() < 1e-5, "{eps:?}");
    let (h, rows) = read_csv(&dir.path().join("out/gap_scan.csv"));
    assert_eq!(h, ["epsilon", "dist_to_spectrum", "admissible", "inv_norm"]);
    // local minima of the distance sit at the scan points nearest √3/ℓ
    let d: Vec<(f64, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    let minima: Vec<f64> = (1..d.len() - 1).filter(|&i| d[i].1 < d[i - 1].1 && d[i].1 < d[i + 1].1).map(|i| d[i].0).collect();
    for target in [3f64.sqrt(), 3f64.sqrt() / 2.0] {
        assert!(minima.iter().any(|m| (m - target).abs() <= 0.01), "{target} {minima:?}");
    }
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "c.scn", &format!("{CIRCLE}run.epsilon = 0.3, 0.4, 0.7\n"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let st = Command::new(env!("CARGO_BIN_EXE_conc"))
            .args(["jacobi", "--scenario", &s, "--seed", "11", "--threads", threads, "--out"])
            .arg(d)
            .status()
            .unwrap();
        // the unit circle with V ≡ 1 is not stationary but J is still assembled
        assert!(st.code() == Some(0) || st.code() == Some(2));
        let st = Command::new(env!("CARGO_BIN_EXE_conc")).args(["gap-scan", "--scenario", &s, "--threads", threads, "--out"]).arg(d).status().unwrap();
        assert!(st.success());
    }
    for f in ["gap_scan.csv", "jacobi_spectrum.csv", "jacobi.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn check_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // the unit circle is not stationary for the floored Gaussian
    let s = write_scenario(dir.path(), "g.scn", "problem.n = 2\nproblem.p = 3\ngeometry.radius = 1\npotential.model = gaussian\n");
    let out = conc(dir.path(), &["stationary", "--scenario", &s]);
    assert_eq!(out.status.code(), Some(2));
    let st = write_scenario(dir.path(), "s.scn", "problem.n = 2\nproblem.p = 3\ngeometry.radius = stationary\npotential.model = gaussian\n");
    let out = conc(dir.path(), &["stationary", "--scenario", &st]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/stationary.json")).unwrap()).unwrap();
    assert!((v["radius"].as_f64().unwrap() - 0.87428).abs() < 1e-5);
}

#[test]
fn flat_solve_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "f.scn", "problem.n = 2\nproblem.p = 3\ngeometry.instance = line\nrun.I = 2\nrun.epsilon = 0.05\n");
    let out = conc(dir.path(), &["solve", "--scenario", &s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["scenario"], "f");
    assert_eq!(m["converged"], true);
    assert_eq!(m["I"], 2);
    assert!(m["final_residual"].as_f64().unwrap() < 1e-10);
    let (h, _) = read_csv(&dir.path().join("out/fixedpoint_trace.csv"));
    assert_eq!(h, ["iter", "norm_phib", "norm_phistar", "norm_Phi", "norm_e", "ratio"]);
}
