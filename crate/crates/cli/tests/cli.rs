use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn geolink(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolink"))
        .current_dir(dir)
        .env_remove("GEOLINK_EMBED_ENDPOINT")
        .args(args)
        .output()
        .expect("spawn geolink")
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = geolink(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    if out.stdout.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&out.stdout).expect("stdout is JSON")
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Runs the full pipeline in a fresh directory and returns it.
fn pipeline(kind: &str) -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out-dir", "src"]);
    let counts = ok(
        d,
        &[
            "build-db",
            "--dump",
            "src/geonames.txt",
            "--admin1-codes",
            "src/admin1CodesASCII.txt",
            "--country-info",
            "src/countryInfo.txt",
            "--out",
            "db.tsv",
        ],
    );
    assert_eq!(counts["countries"], 10);
    assert_eq!(counts["admin1"], 30);
    assert_eq!(counts["cities"], 160);
    ok(
        d,
        &[
            "split",
            "--mentions",
            "src/mentions.tsv",
            "--test-fraction",
            "0.1",
            "--seed",
            "42",
            "--train-out",
            "train.tsv",
            "--test-out",
            "test.tsv",
        ],
    );
    let mut args = vec![
        "build-index",
        "--db",
        "db.tsv",
        "--provider",
        "test:64:7",
        "--kind",
        kind,
        "--out",
        "loc.idx",
    ];
    if kind == "usergeo" {
        args.extend(["--mentions", "train.tsv"]);
    }
    ok(d, &args);
    let test = std::fs::read_to_string(d.join("test.tsv")).unwrap();
    let inputs: String = test
        .lines()
        .map(|l| format!("{}\n", l.split('\t').next().unwrap()))
        .collect();
    std::fs::write(d.join("inputs.txt"), inputs).unwrap();
    ok(
        d,
        &[
            "link",
            "--index",
            "loc.idx",
            "--provider",
            "test:64:7",
            "--input",
            "inputs.txt",
            "--out",
            "pred.tsv",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--predictions",
            "pred.tsv",
            "--truth",
            "test.tsv",
            "--index",
            "loc.idx",
            "--out",
            "report.json",
        ],
    );
    ok(
        d,
        &[
            "curve",
            "--predictions",
            "pred.tsv",
            "--truth",
            "test.tsv",
            "--out",
            "curve.csv",
        ],
    );
    tmp
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn end_to_end_pipeline_produces_report_and_curve() {
    let tmp = pipeline("usergeo");
    let d = tmp.path();
    let report: serde_json::Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["n"], 200);
    for level in ["country", "admin", "city"] {
        let m = &report["metrics"][level];
        assert_eq!(m["coverage"], 1.0, "threshold 0 accepts everything");
        assert!(m["accuracy"].as_f64().unwrap() > 0.0);
    }
    let c = report["metrics"]["country"]["accuracy"].as_f64().unwrap();
    let a = report["metrics"]["admin"]["accuracy"].as_f64().unwrap();
    let ci = report["metrics"]["city"]["accuracy"].as_f64().unwrap();
    assert!(c >= a && a >= ci, "hierarchical match is monotone");
    let buckets = &report["buckets"]["country"];
    let bucketed: u64 = buckets
        .as_object()
        .unwrap()
        .values()
        .map(|b| b["n"].as_u64().unwrap())
        .sum();
    assert_eq!(bucketed, 200, "every example lands in one bucket");

    let curve = read(d, "curve.csv");
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("threshold,precision,coverage,level"));
    assert_eq!(lines.count(), 30, "10 thresholds x 3 levels");

    let sidecar: serde_json::Value =
        serde_json::from_str(&read(d, "report.json.run.json")).unwrap();
    assert_eq!(sidecar["command"], "evaluate");
    assert_eq!(sidecar["config_hash"], report["config_hash"]);
    assert_eq!(sidecar["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn pipeline_outputs_are_deterministic() {
    let a = pipeline("usergeo");
    let b = pipeline("usergeo");
    for name in [
        "db.tsv",
        "train.tsv",
        "test.tsv",
        "loc.idx",
        "pred.tsv",
        "report.json",
        "curve.csv",
    ] {
        assert_eq!(
            read(a.path(), name),
            read(b.path(), name),
            "{name} differs between runs"
        );
    }
}

#[test]
fn usergeo_with_no_mentions_equals_namegeo_decisions() {
    let name = pipeline("namegeo");
    let d = name.path();
    std::fs::write(d.join("none.tsv"), "").unwrap();
    ok(
        d,
        &[
            "build-index",
            "--db",
            "db.tsv",
            "--provider",
            "test:64:7",
            "--kind",
            "usergeo",
            "--mentions",
            "none.tsv",
            "--out",
            "user.idx",
        ],
    );
    ok(
        d,
        &[
            "link",
            "--index",
            "user.idx",
            "--provider",
            "test:64:7",
            "--input",
            "inputs.txt",
            "--out",
            "user_pred.tsv",
        ],
    );
    assert_eq!(read(d, "pred.tsv"), read(d, "user_pred.tsv"));
}

#[test]
fn perfect_predictions_score_one() {
    let tmp = pipeline("namegeo");
    let d = tmp.path();
    // Turn the truth file into predictions that are all correct.
    let perfect: String = read(d, "test.tsv")
        .lines()
        .map(|l| format!("{l}\t1\ttrue\n"))
        .collect();
    std::fs::write(d.join("perfect.tsv"), perfect).unwrap();
    ok(
        d,
        &[
            "evaluate",
            "--predictions",
            "perfect.tsv",
            "--truth",
            "test.tsv",
            "--out",
            "p.json",
        ],
    );
    let report: serde_json::Value = serde_json::from_str(&read(d, "p.json")).unwrap();
    for level in ["country", "admin", "city"] {
        assert_eq!(report["metrics"][level]["accuracy"], 1.0);
        assert_eq!(report["metrics"][level]["precision"], 1.0);
    }
    for entry in report["per_country_f1"].as_object().unwrap().values() {
        assert_eq!(entry["f1"], 1.0);
    }
}

#[test]
fn config_file_supplies_settings_and_flags_override() {
    let tmp = pipeline("namegeo");
    let d = tmp.path();
    std::fs::write(
        d.join("run.toml"),
        "index = \"loc.idx\"\nprovider = \"test:64:7\"\nthreshold = 1.0\n",
    )
    .unwrap();
    let strict = ok(
        d,
        &[
            "--config",
            "run.toml",
            "link",
            "--input",
            "inputs.txt",
            "--out",
            "strict.tsv",
        ],
    );
    assert!(strict["accepted"].as_u64().unwrap() < strict["inputs"].as_u64().unwrap());
    let summary = ok(
        d,
        &[
            "--config",
            "run.toml",
            "link",
            "--threshold",
            "0",
            "--input",
            "inputs.txt",
            "--out",
            "loose.tsv",
        ],
    );
    assert_eq!(summary["accepted"], summary["inputs"]);
    assert_eq!(read(d, "loose.tsv"), read(d, "pred.tsv"));
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = pipeline("namegeo");
    let d = tmp.path();
    std::fs::write(d.join("empty.txt"), "").unwrap();
    let empty_dump = geolink(
        d,
        &[
            "build-db",
            "--dump",
            "empty.txt",
            "--admin1-codes",
            "src/admin1CodesASCII.txt",
            "--country-info",
            "src/countryInfo.txt",
            "--out",
            "x.tsv",
        ],
    );
    assert_eq!(code(&empty_dump), 1);

    let missing = geolink(
        d,
        &[
            "link",
            "--index",
            "absent.idx",
            "--provider",
            "test:64:7",
            "--input",
            "inputs.txt",
            "--out",
            "q.tsv",
        ],
    );
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.idx"));

    let wrong_provider = geolink(
        d,
        &[
            "link",
            "--index",
            "loc.idx",
            "--provider",
            "test:64:8",
            "--input",
            "inputs.txt",
            "--out",
            "q.tsv",
        ],
    );
    assert_eq!(code(&wrong_provider), 1);

    let bad_threshold = geolink(
        d,
        &[
            "link",
            "--index",
            "loc.idx",
            "--provider",
            "test:64:7",
            "--threshold",
            "1.5",
            "--input",
            "inputs.txt",
            "--out",
            "q.tsv",
        ],
    );
    assert_eq!(code(&bad_threshold), 1);

    let no_provider = geolink(
        d,
        &[
            "link",
            "--index",
            "loc.idx",
            "--input",
            "inputs.txt",
            "--out",
            "q.tsv",
        ],
    );
    assert_eq!(code(&no_provider), 1);

    let misaligned = geolink(
        d,
        &[
            "evaluate",
            "--predictions",
            "pred.tsv",
            "--truth",
            "train.tsv",
            "--out",
            "q.json",
        ],
    );
    assert_eq!(code(&misaligned), 1);

    assert_eq!(code(&geolink(d, &["no-such-command"])), 1);
}

#[test]
fn unreachable_service_exits_with_two() {
    let tmp = pipeline("namegeo");
    let d = tmp.path();
    let socket: PathBuf = d.join("missing.sock");
    let out = Command::new(env!("CARGO_BIN_EXE_geolink"))
        .current_dir(d)
        .env(
            "GEOLINK_EMBED_ENDPOINT",
            format!("unix:{}", socket.display()),
        )
        .args([
            "link",
            "--index",
            "loc.idx",
            "--input",
            "inputs.txt",
            "--out",
            "q.tsv",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reverse_geocode_maps_points_to_cities() {
    let tmp = pipeline("namegeo");
    let d = tmp.path();
    // Take three city coordinates straight from the database; each must map to itself.
    let db = read(d, "db.tsv");
    let cities: Vec<Vec<&str>> = db
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|f| f[7] == "city")
        .take(3)
        .collect();
    let points: String = cities
        .iter()
        .map(|f| format!("{}\t{}\n", f[4], f[5]))
        .collect();
    std::fs::write(d.join("pts.tsv"), points).unwrap();
    let summary = ok(
        d,
        &[
            "reverse-geocode",
            "--db",
            "db.tsv",
            "--input",
            "pts.tsv",
            "--out",
            "rg.tsv",
        ],
    );
    assert_eq!(summary["rows"], 3);
    let out = read(d, "rg.tsv");
    for (line, f) in out.lines().zip(&cities) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[2].to_lowercase(), f[0].to_lowercase());
    }
}
