use std::path::Path;
use std::process::{Command, Output};

use bellsim::photonsim::ScenarioConfig;

fn bellsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bellsim"))
        .args(args)
        .env_remove("BELLSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verdict_exit_codes() {
    let d = bellsim(&["verdict", "--scenario", "d"]);
    assert_eq!(d.status.code(), Some(0));
    assert!(stdout(&d).contains("locality: CLOSED, freedom-of-choice: CLOSED"));

    let c = bellsim(&["verdict", "--scenario", "c"]);
    assert_eq!(c.status.code(), Some(1));
    assert!(stdout(&c).contains("freedom-of-choice: OPEN"));

    let det = bellsim(&["verdict", "--scenario", "d", "--deterministic"]);
    assert_eq!(det.status.code(), Some(1));
    assert!(stdout(&det).contains("locality: OPEN, freedom-of-choice: OPEN"));
}

#[test]
fn run_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = bellsim(&[
        "run",
        "--scenario",
        "d",
        "--duration",
        "120",
        "--seed",
        "3",
        "--out",
        p(&run_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in [
        "alice.bin",
        "bob.bin",
        "alice.csv",
        "bob.csv",
        "config.toml",
        "manifest.json",
    ] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let m = manifest(&run_dir);
    let cfg = ScenarioConfig::load(&run_dir.join("config.toml")).unwrap();
    assert_eq!(
        m["config_hash"].as_str(),
        Some(cfg.config_hash().unwrap().as_str())
    );
    assert_eq!(m["seed"], 3);

    let an_dir = dir.path().join("analysis");
    let out = bellsim(&["analyze", p(&run_dir), "--out", p(&an_dir), "--histogram"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("run verdict: locality: CLOSED"));
    let a = manifest(&an_dir);
    let n = a["details"]["coincidences"].as_u64().unwrap() as f64;
    // 8.4 Hz predicted over 120 s.
    assert!(
        (n - 8.38 * 120.0).abs() < 5.0 * (8.38f64 * 120.0).sqrt(),
        "{n}"
    );
    let s = a["details"]["estimate"]["s"].as_f64().unwrap();
    assert!(s > 2.0 && s < 2.0 * 2f64.sqrt(), "{s}");
    let bell = std::fs::read_to_string(an_dir.join("bell.csv")).unwrap();
    assert!(bell.starts_with("estimate,S,sigma_S"));
    assert_eq!(
        std::fs::read_to_string(an_dir.join("correlations.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    assert!(an_dir.join("histogram.csv").exists());

    // The CSV mirrors analyze identically to the binary files.
    let csv_dir = dir.path().join("analysis_csv");
    let out = bellsim(&[
        "analyze",
        "--alice",
        p(&run_dir.join("alice.csv")),
        "--bob",
        p(&run_dir.join("bob.csv")),
        "--out",
        p(&csv_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(csv_dir.join("bell.csv")).unwrap(),
        std::fs::read(an_dir.join("bell.csv")).unwrap()
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    for d in [&one, &two] {
        let out = bellsim(&[
            "run",
            "--scenario",
            "a",
            "--duration",
            "5",
            "--seed",
            "11",
            "--no-csv",
            "--out",
            p(d),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for f in ["alice.bin", "bob.bin", "config.toml"] {
        assert_eq!(
            std::fs::read(one.join(f)).unwrap(),
            std::fs::read(two.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(!one.join("alice.csv").exists());
    let other = dir.path().join("other");
    bellsim(&[
        "run",
        "--scenario",
        "a",
        "--duration",
        "5",
        "--seed",
        "12",
        "--no-csv",
        "--out",
        p(&other),
    ]);
    assert_ne!(
        std::fs::read(one.join("alice.bin")).unwrap(),
        std::fs::read(other.join("alice.bin")).unwrap()
    );
}

#[test]
fn zero_duration_run_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = bellsim(&[
        "run",
        "--scenario",
        "d",
        "--duration",
        "0",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        std::fs::metadata(dir.path().join("alice.bin"))
            .unwrap()
            .len(),
        0
    );
    assert_eq!(manifest(dir.path())["details"]["alice_tags"], 0);
}

#[test]
fn disjoint_streams_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let alice = dir.path().join("a.csv");
    let bob = dir.path().join("b.csv");
    std::fs::write(
        &alice,
        "time_ps,channel,setting\n1000,0,0\n2000000,1,1\n5000000,0,1\n",
    )
    .unwrap();
    std::fs::write(
        &bob,
        "time_ps,channel,setting\n900000000000000,0,0\n900000002000000,1,0\n",
    )
    .unwrap();
    let out = bellsim(&[
        "analyze",
        "--alice",
        p(&alice),
        "--bob",
        p(&bob),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("no significant correlation peak"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn malformed_inputs_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    std::fs::write(&counts, "alice_proj,bob_proj,count\nH,H,10\nH,V,ten\n").unwrap();
    let out = bellsim(&[
        "tomo",
        "--counts",
        p(&counts),
        "--out",
        p(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("counts.csv:3:"), "{}", stderr(&out));

    let tags = dir.path().join("tags.csv");
    std::fs::write(&tags, "time_ps,channel,setting\n10,0,0\n20,0,7\n").unwrap();
    let out = bellsim(&[
        "analyze",
        "--alice",
        p(&tags),
        "--bob",
        p(&tags),
        "--out",
        p(&dir.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tags.csv:3:"), "{}", stderr(&out));
}

#[test]
fn exploit_mode_with_closed_loopholes_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset("d").unwrap();
    cfg.mode = bellsim::photonsim::HiddenVariableMode::SettingAwareSource;
    cfg.run_duration = 1.0;
    let path = dir.path().join("exploit.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = bellsim(&[
        "run",
        "--config",
        p(&path),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("causality violation"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn tomography_from_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = bellsim(&[
        "tomo",
        "--simulate",
        "0.883",
        "100000",
        "--bootstrap",
        "50",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let tangle: f64 = metrics
        .lines()
        .find(|l| l.starts_with("tangle,"))
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!((tangle - 0.68).abs() < 0.03, "{tangle}");
    let real = std::fs::read_to_string(dir.path().join("rho_real.csv")).unwrap();
    assert_eq!(real.lines().count(), 5);
    assert!(dir.path().join("rho_imag.csv").exists());

    let pure = bellsim(&[
        "tomo",
        "--simulate",
        "1.0",
        "100000",
        "--bootstrap",
        "10",
        "--out",
        p(&dir.path().join("p")),
    ]);
    assert_eq!(pure.status.code(), Some(0));
    assert!(
        stdout(&pure).contains("tangle                   1.0000"),
        "{}",
        stdout(&pure)
    );
}

#[test]
fn table_runs_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = bellsim(&[
        "scenario-table",
        "--duration",
        "60",
        "--seed",
        "5",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("scenario_table.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let status: Vec<(&str, &str, &str)> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
    assert_eq!(
        status,
        [
            ("a", "open", "open"),
            ("b", "open", "open"),
            ("c", "closed", "open"),
            ("d", "closed", "closed")
        ]
    );
    for r in &rows {
        let (s, sigma): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(s <= 2.0 * 2f64.sqrt() + 4.0 * sigma);
    }
}

#[test]
fn thread_override_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(env!("CARGO_BIN_EXE_bellsim"))
        .args([
            "tomo",
            "--simulate",
            "0.9",
            "1000",
            "--bootstrap",
            "8",
            "--out",
            p(dir.path()),
        ])
        .env("BELLSIM_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(env!("CARGO_BIN_EXE_bellsim"))
        .args(["tomo", "--simulate", "0.9", "1000", "--out", p(dir.path())])
        .env("BELLSIM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn export_settings_writes_bits() {
    let dir = tempfile::tempdir().unwrap();
    let out = bellsim(&[
        "export-settings",
        "--scenario",
        "b",
        "--duration",
        "0.001",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bits = std::fs::read(dir.path().join("settings_alice.bits")).unwrap();
    assert_eq!(bits.len(), 1000);
    assert!(bits.iter().all(|&b| b <= 1));
}
