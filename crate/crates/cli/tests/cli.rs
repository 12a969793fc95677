use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use repfed::output::{read_rows, MetricsRow, NodeRow};
use repfed_cli::{run_statistics, summarize, SummaryRow, SweepSpec, SUMMARY_FILE};

const TINY: &str = r#"
[generation]
n_centers = 4
patients_per_center = 200
seed = 3

[federation]
rounds = 4

[federation.clustering]
n_clusters = 1

[dp]
enabled = false

[[adversaries]]
clients = [3]
t_honest = 1
t_ramp = 2
eps_max = 0.5
distribution = "gaussian"
"#;

fn repfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repfed")).args(args).env_remove("REPFED_OUT").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = repfed(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    for cmd in ["generate", "run"] {
        let out = repfed(&[cmd, "--config", s(&missing), "--out", s(tmp.path())]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
    }
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", "[federation]\nrounds = \"many\"\n");
    let out = repfed(&["run", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let zero = write(tmp.path(), "zero.toml", "[generation]\nn_centers = 0\n");
    assert_eq!(repfed(&["generate", "--config", s(&zero), "--out", s(tmp.path())]).status.code(), Some(2));
    assert_eq!(repfed(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn generate_is_reproducible_and_counts_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[generation]\nn_centers = 10\npatients_per_center = 50\nseed = 8\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["generate", "--config", s(&cfg), "--out", s(&b)]);
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    assert_eq!(names.iter().filter(|n| n.starts_with("center_") && n.ends_with(".csv")).count(), 10);
    assert!(names.contains(&"metadata.toml".to_string()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
}

#[test]
fn run_outputs_have_frozen_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", TINY);
    let out = tmp.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(
        header(&out.join("metrics.csv")),
        "round,global_c_index,stability,messages_sent,cumulative_messages,selected"
    );
    assert_eq!(header(&out.join("reputation.csv")), "round,observer,subject,score");
    assert_eq!(header(&out.join("node_reputation.csv")), "round,node,cluster,adversarial,score");
    assert_eq!(header(&out.join("assignment.csv")), "client,cluster");
    assert!(out.join("run_report.txt").exists() && out.join("config.toml").exists());

    // Emitted CSVs parse back and re-serialise to the same bytes.
    let metrics: Vec<MetricsRow> = read_rows(&out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 5);
    let again = tmp.path().join("again.csv");
    repfed::output::write_rows(&again, &metrics).unwrap();
    assert_eq!(fs::read(&again).unwrap(), fs::read(out.join("metrics.csv")).unwrap());
    let nodes: Vec<NodeRow> = read_rows(&out.join("node_reputation.csv")).unwrap();
    assert_eq!(nodes.iter().filter(|n| n.adversarial == 1).count(), 5);
}

#[test]
fn zero_rounds_logs_initialisation_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &TINY.replace("rounds = 4", "rounds = 0"));
    let out = tmp.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    let metrics: Vec<MetricsRow> = read_rows(&out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 1);
    assert_eq!((metrics[0].round, metrics[0].global_c_index), (0, 0.5));
}

#[test]
fn fedavg_reputation_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", TINY);
    let out = tmp.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&out), "--method", "fedavg"]);
    let text = fs::read_to_string(out.join("reputation.csv")).unwrap();
    let scores: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 5 * 4 * 3);
    assert!(scores.iter().all(|&v| v == 1.0));
}

#[test]
fn reputation_beats_plain_averaging_under_attack() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("quickstart.toml");
    let final_c = |method: &str| {
        let out = tmp.path().join(method);
        ok(&["run", "--config", s(&cfg), "--out", s(&out), "--method", method, "--seed", "1", "--no-dp"]);
        let m: Vec<MetricsRow> = read_rows(&out.join("metrics.csv")).unwrap();
        m.last().unwrap().global_c_index
    };
    let (ours, fedavg) = (final_c("ours"), final_c("fedavg"));
    assert!(ours > fedavg, "ours {ours} vs fedavg {fedavg}");
}

#[test]
fn bad_method_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", TINY);
    let out = repfed(&["run", "--config", s(&cfg), "--out", s(tmp.path()), "--method", "median"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_fans_out_and_summary_matches_raw_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "base.toml", &TINY.replace("rounds = 4", "rounds = 2"));
    let spec = write(
        tmp.path(),
        "sweep.toml",
        "parameter = \"eps_max\"\nvalues = [0.05, 0.1, 0.2, 0.5]\nbase_config = \"base.toml\"\nseeds = [1, 2]\n",
    );
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", s(&spec), "--out", s(&out), "--plot"]);
    let rows: Vec<SummaryRow> = read_rows(&out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.seeds == 2));
    let runs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 4);
    assert!(out.join("eps_max=0.5/seed_2/metrics.csv").exists());
    assert!(out.join("summary.gp").exists() && out.join("reputation_trend.csv").exists());

    let recomputed = summarize(&out, &SweepSpec::load(&spec).unwrap()).unwrap();
    assert_eq!(recomputed, rows);
    let m: Vec<MetricsRow> = read_rows(&out.join("eps_max=0.5/seed_1/metrics.csv")).unwrap();
    let n: Vec<MetricsRow> = read_rows(&out.join("eps_max=0.5/seed_2/metrics.csv")).unwrap();
    let (a, b) = (run_statistics(&m).unwrap(), run_statistics(&n).unwrap());
    assert!((rows[3].final_c_index_mean - (a.0 + b.0) / 2.0).abs() < 1e-12);
}

#[test]
fn empty_seed_list_fails_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "base.toml", TINY);
    let spec = write(
        tmp.path(),
        "sweep.toml",
        "parameter = \"alpha\"\nvalues = [0.1]\nbase_config = \"base.toml\"\nseeds = []\n",
    );
    let out = tmp.path().join("sweep");
    assert_eq!(repfed(&["sweep", "--config", s(&spec), "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn report_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &TINY.replace("rounds = 4", "rounds = 10"));
    let mut dirs = Vec::new();
    for method in ["ours", "tffl_proxy", "fedavg"] {
        let d = tmp.path().join(method);
        ok(&["run", "--config", s(&cfg), "--out", s(&d), "--method", method]);
        dirs.push(d);
    }

    let single = ok(&["report", s(&dirs[0])]);
    let lines: Vec<&str> = single.lines().skip(1).collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["round", "ours"]);

    let out = tmp.path().join("cmp");
    ok(&["report", s(&dirs[0]), s(&dirs[1]), s(&dirs[2]), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["round", "ours", "tffl_proxy", "fedavg"]);
    assert_eq!(rows.len(), 11);
    assert!(rows[1..].iter().all(|r| r.len() == 4));
    assert!(out.join("comparison.txt").exists());

    let short = tmp.path().join("short");
    let cfg3 = write(tmp.path(), "c3.toml", &TINY.replace("rounds = 4", "rounds = 3"));
    ok(&["run", "--config", s(&cfg3), "--out", s(&short)]);
    let bad = repfed(&["report", s(&dirs[0]), s(&short)]);
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("short") && msg.contains("3 rounds"), "{msg}");
}
