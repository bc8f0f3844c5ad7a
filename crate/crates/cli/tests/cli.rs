use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecash_sim::ledger_io::{LedgerHeader, LedgerWriter, FORMAT_VERSION};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecash-sim"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of a `key<TAB>value` summary line.
fn field(o: &Output, key: &str) -> Option<String> {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")).map(str::to_string))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_minimal_scenario() {
    let o = run(&["validate", path_str(&scenarios().join("minimal.toml"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&o, "valid").as_deref(), Some("true"));
    assert_eq!(field(&o, "scenario_digest").map(|d| d.len()), Some(64));
}

#[test]
fn invalid_scenario_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(scenarios().join("minimal.toml")).unwrap().replace(
        "initial_count = 10",
        "initial_count = 10\nbirth_rate = -0.5\ndeath_rate = -1.0",
    );
    fs::write(&bad, text).unwrap();
    for sub in ["validate", "simulate"] {
        let mut args = vec![sub, path_str(&bad)];
        let out = dir.path().join("out");
        if sub == "simulate" {
            args.extend(["--out", path_str(&out)]);
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{sub}: {}", stderr(&o));
        let err = stderr(&o);
        assert!(err.contains("birth_rate") && err.contains("death_rate"), "{err}");
        assert!(!out.join("ledger.csv").exists());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("minimal.toml");
    let digest = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", path_str(&sc), "--out", path_str(&out)];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(out.join("ledger.csv").exists());
        assert!(out.join("daily.csv").exists());
        assert_eq!(field(&o, "conservation").as_deref(), Some("holds"));
        field(&o, "ledger_digest").unwrap()
    };
    let a = digest("a", None);
    let b = digest("b", None);
    let c = digest("c", Some("2"));
    let d = digest("d", Some("1"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    // The scenario's own seed is 1.
    assert_eq!(a, d);
}

#[test]
fn replicates_go_to_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("minimal.toml");
    let o = run(&[
        "simulate",
        path_str(&sc),
        "--out",
        path_str(dir.path()),
        "--replicates",
        "3",
        "--seed",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for s in 7..10 {
        assert!(dir.path().join(format!("seed-{s}/ledger.csv")).exists());
    }
}

#[test]
fn detect_on_empty_ledger_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let header = LedgerHeader {
        format_version: FORMAT_VERSION,
        scenario_digest: "0".repeat(64),
        seed: 1,
        start_date: chrono::NaiveDate::from_ymd_opt(1998, 1, 1).unwrap(),
        duration_days: 60,
    };
    LedgerWriter::create(&path, &header).unwrap().finish().unwrap();
    for system in ["currency", "merchant"] {
        let o = run(&["detect", path_str(&path), "--system", system]);
        assert_eq!(o.status.code(), Some(4), "{system}: {}", stderr(&o));
        assert!(stdout(&o).is_empty());
    }
}

#[test]
fn detect_needs_history_past_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "simulate",
        path_str(&scenarios().join("minimal.toml")),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[
        "detect",
        path_str(&out.join("ledger.csv")),
        "--system",
        "currency",
        "--window",
        "monthly",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn report_rebuilds_from_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let sc = scenarios().join("minimal.toml");
    let o = run(&["simulate", path_str(&sc), "--out", path_str(&run_dir)]);
    assert_eq!(o.status.code(), Some(0));
    let rep = dir.path().join("rep");
    let r = run(&[
        "report",
        path_str(&run_dir.join("ledger.csv")),
        "--out",
        path_str(&rep),
        "--scenario",
        path_str(&sc),
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert_eq!(
        fs::read(run_dir.join("daily.csv")).unwrap(),
        fs::read(rep.join("daily.csv")).unwrap()
    );
    for key in ["issued", "redeemed", "balances", "conservation"] {
        assert_eq!(field(&o, key), field(&r, key), "{key}");
    }
}

fn quiet_copy(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(scenarios().join("paper-fig2.toml")).unwrap();
    let a = text.find("[[attacks]]").unwrap();
    let b = text.find("# Monitoring").unwrap();
    let path = dir.join("quiet.toml");
    fs::write(&path, format!("{}{}", &text[..a], &text[b..])).unwrap();
    path
}

#[test]
fn street_corner_ledger_through_both_monitors() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("attack");
    let o = run(&[
        "simulate",
        path_str(&scenarios().join("paper-fig2.toml")),
        "--out",
        path_str(&run_dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&o, "conservation").as_deref(), Some("holds"));
    for f in ["redemption.svg", "locked.svg", "red_stars.svg", "summary.txt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }

    let det = dir.path().join("det");
    let d = run(&[
        "detect",
        path_str(&run_dir.join("ledger.csv")),
        "--system",
        "currency",
        "--window",
        "monthly",
        "--k",
        "3",
        "--out",
        path_str(&det),
    ]);
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(det.join("alarms.json")).unwrap()).unwrap();
    let first_in_attack = report["days"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|d| d["flagged"].as_bool() == Some(true))
        .filter_map(|d| d["date"].as_str())
        .find(|d| *d >= "1998-04-01");
    assert_eq!(first_in_attack, Some("1998-04-02"));

    let quiet_dir = dir.path().join("quiet");
    let q = run(&[
        "simulate",
        path_str(&quiet_copy(dir.path())),
        "--out",
        path_str(&quiet_dir),
    ]);
    assert_eq!(q.status.code(), Some(0), "{}", stderr(&q));
    let m = run(&[
        "detect",
        path_str(&quiet_dir.join("ledger.csv")),
        "--system",
        "merchant",
        "--window",
        "weekly",
        "--k",
        "3",
    ]);
    assert_eq!(m.status.code(), Some(0), "{}", stderr(&m));
    assert_eq!(field(&m, "alarm_days").as_deref(), Some("0"));
    let rate: f64 = field(&m, "flag_rate").unwrap().parse().unwrap();
    assert!(rate <= 0.01, "{rate}");
}

#[test]
fn replicate_paper_without_attack_fails_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let sc = quiet_copy(dir.path());
    let o = run(&[
        "replicate-paper",
        "--scenario",
        path_str(&sc),
        "--attack-seeds",
        "1",
        "--quiet-seeds",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let table = stdout(&o);
    for id in ["3", "4", "5", "7"] {
        assert!(
            table.lines().any(|l| l.starts_with(&format!("FAIL\t{id}\t"))),
            "criterion {id} should fail:\n{table}"
        );
    }
    let err = stderr(&o);
    assert!(err.contains("- expected:") && err.contains("+ observed:"), "{err}");
}

#[test]
fn replicate_paper_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let once = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "replicate-paper",
            "--out",
            path_str(&out),
            "--attack-seeds",
            "2",
            "--quiet-seeds",
            "1",
        ]);
        assert!(matches!(o.status.code(), Some(0 | 5)), "{}", stderr(&o));
        (o.stdout, fs::read(out.join("criteria.tsv")).unwrap())
    };
    let a = once("a");
    let b = once("b");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a.1).unwrap().lines().count(), 8);
}

#[test]
fn replicate_paper_default_run_reports_every_criterion() {
    let o = run(&["replicate-paper"]);
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 7, "{table}");
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 5, "{row}");
        assert!(matches!(cols[0], "PASS" | "FAIL"));
        assert_eq!(cols[1], (i + 1).to_string());
    }
    let all_pass = rows.iter().all(|r| r.starts_with("PASS"));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 5 }), "{}", stderr(&o));
}
