use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dae-transport");

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn assert_svg(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

const GAUSS2: &str = r#"{"dim": 2, "components": [{"weight": 1, "mean": [0, 0], "cov": [[2, 0], [0, 1]]}]}"#;

#[test]
fn fig2_writes_four_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("trajectory", &example("fig2.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for panel in ["continuous", "one_shot", "composed_tau0.05", "composed_tau0.5"] {
        assert_svg(&dir.path().join(format!("{panel}_orbits.svg")));
        let (header, rows) = csv_rows(&dir.path().join(format!("{panel}_trajectory.csv")));
        assert_eq!(header, ["time", "particle_id", "x1", "x2"]);
        assert!(rows.iter().all(|r| r.iter().all(|v| v.parse::<f64>().is_ok())));
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("{panel}_diagnostics.json"))).unwrap())
                .unwrap();
        assert_eq!(side["grid_particles"], 81);
        assert_eq!(side["sample_particles"], 50);
    }
}

#[test]
fn trajectory_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run_config("trajectory", &example("fig2.json"), d.path(), &[]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["continuous_trajectory.csv", "composed_tau0.05_orbits.svg", "one_shot_diagnostics.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    run_config("trajectory", &example("fig2.json"), c.path(), &["--seed", "5"]);
    assert_ne!(
        fs::read(a.path().join("continuous_trajectory.csv")).unwrap(),
        fs::read(c.path().join("continuous_trajectory.csv")).unwrap()
    );
}

#[test]
fn fig1_variances_narrow() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("pushforward", &example("fig1.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_svg(&dir.path().join("densities.svg"));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("moments.json")).unwrap()).unwrap();
    let vars: Vec<f64> = m["curves"].as_array().unwrap().iter().map(|c| c["variance"].as_f64().unwrap()).collect();
    assert_eq!(vars.len(), 3);
    assert_eq!(vars[0], 1.0);
    assert!((vars[1] - 1.0 / 2.25).abs() < 1e-12);
    assert!((vars[2] - 0.25).abs() < 1e-12);

    // the t = 0 curve is the standard normal density
    let (header, rows) = csv_rows(&dir.path().join("densities.csv"));
    assert_eq!(header, ["time", "x", "density"]);
    for r in rows.iter().filter(|r| r[0] == "0") {
        let x: f64 = r[1].parse().unwrap();
        let d: f64 = r[2].parse().unwrap();
        let exact = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((d - exact).abs() < 1e-15);
    }
}

#[test]
fn fig3_continuous_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("pushforward", &example("fig3.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_svg(&dir.path().join("abstract.svg"));
    let (header, rows) = csv_rows(&dir.path().join("abstract.csv"));
    assert_eq!(header, ["time", "sigma1", "sigma2", "entropy", "source"]);
    let at = rows.iter().find(|r| r[0] == "0.4" && r[4] == "continuous").unwrap();
    assert!((at[1].parse::<f64>().unwrap() - 1.2f64.sqrt()).abs() < 1e-12);
    assert!((at[2].parse::<f64>().unwrap() - 0.2f64.sqrt()).abs() < 1e-12);
    for source in ["continuous", "one_shot", "composed"] {
        assert!(rows.iter().any(|r| r[4] == source));
    }
}

#[test]
fn zero_particles_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"distribution": {GAUSS2}, "mode": "one_shot", "schedule": {{"t": 0.5}}, "particles": {{"n": 0}}}}"#),
    );
    let out = run_config("trajectory", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("particles.n"));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"mode\": \"one_shot\",\n  \"schedule\": {\"t\": 0.5,}\n}\n");
    let out = run_config("trajectory", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn singularity_gives_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"distribution": {GAUSS2}, "mode": "continuous", "schedule": {{"t_end": 0.6, "steps": 60}},
                "particles": {{"n": 5}}}}"#
        ),
    );
    let out = run_config("trajectory", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning"));
    let (_, rows) = csv_rows(&dir.path().join("continuous_trajectory.csv"));
    let last: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!(last > 0.4 && last < 0.5, "{last}");
}

#[test]
fn abstract_chart_needs_diagonal_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"distribution": {"dim": 2, "components": [{"weight": 1, "mean": [0, 0], "cov": [[2, 0.5], [0.5, 1]]}]}}"#,
    );
    let out = run_config("pushforward", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("diagonal"));
}

#[test]
fn verify_default_passes_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(&["verify", "--seed", "3", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let bytes = fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(bytes, fs::read(b.path().join("manifest.json")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(m["passed"], true);
    let checks = m["checks"].as_array().unwrap();
    assert!(checks.len() >= 6);
    for c in checks {
        for key in ["name", "tolerance", "max_abs", "passed", "grid_size", "seed"] {
            assert!(c.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn verify_tight_tolerance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"verify": {"tolerances": {"variational_regression": 1e-12, "continuity_mixture": 1e-12}}}"#,
    );
    let out = run_config("verify", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["passed"], false);
}

#[test]
fn verify_seed_moves_values_not_verdicts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(&["verify", "--seed", "1", "--out", a.path().to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["verify", "--seed", "2", "--out", b.path().to_str().unwrap()]).status.code(), Some(0));
    let load = |d: &Path| -> serde_json::Value {
        serde_json::from_slice(&fs::read(d.join("manifest.json")).unwrap()).unwrap()
    };
    let (ma, mb) = (load(a.path()), load(b.path()));
    let name = |c: &serde_json::Value| c["name"].as_str().unwrap().to_string();
    let va = ma["checks"].as_array().unwrap().iter().find(|c| name(c) == "variational_regression").unwrap();
    let vb = mb["checks"].as_array().unwrap().iter().find(|c| name(c) == "variational_regression").unwrap();
    assert_ne!(va["max_abs"], vb["max_abs"]);
}

#[test]
fn missing_config_and_bad_args() {
    assert_eq!(run(&["trajectory"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
