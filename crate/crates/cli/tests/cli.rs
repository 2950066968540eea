use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn cognet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cognet")).args(args).output().expect("spawn cognet")
}

fn scenario(name: &str) -> String {
    scenarios().join(name).display().to_string()
}

fn first_error_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).lines().next().unwrap_or_default().to_string()
}

fn is_error_line(line: &str, kind: &str) -> bool {
    line.starts_with(&format!("error[{kind}]: "))
}

#[test]
fn run_writes_summary_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = cognet(&["run", &scenario("generic.toml"), "--out", &out, "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stderr.is_empty());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "generic");
    assert_eq!(summary["seed"], 7);
    assert!(dir.path().join("series.csv").is_file());
    assert!(dir.path().join("metadata.json").is_file());
}

#[test]
fn same_seed_gives_byte_identical_summaries() {
    for name in ["generic.toml", "aco_diamond.toml", "market.toml"] {
        let runs: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let o = cognet(&["run", &scenario(name), "--out", &dir.path().display().to_string(), "--seed", "11", "--quiet"]);
                assert!(o.status.success(), "{name}: {}", first_error_line(&o));
                std::fs::read(dir.path().join("summary.json")).unwrap()
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{name}");
    }
}

#[test]
fn thread_count_does_not_change_the_summary() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_cognet"))
            .env("COGNET_THREADS", threads)
            .args(["run", &scenario("aco_dag.toml"), "--out", &dir.path().display().to_string(), "--quiet"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", first_error_line(&o));
        std::fs::read(dir.path().join("summary.json")).unwrap()
    };
    assert_eq!(run("1"), run("4"));
    let o = Command::new(env!("CARGO_BIN_EXE_cognet")).env("COGNET_THREADS", "zero").args(["oracle", "x"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(is_error_line(&first_error_line(&o), "config"));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cognet(&["run", &scenario("diverge.toml"), "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(is_error_line(&first_error_line(&o), "diverged"), "{}", first_error_line(&o));
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"generic\"\ngraph = \"missing.json\"\n").unwrap();
    let o = cognet(&["run", &bad.display().to_string()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(is_error_line(&first_error_line(&o), "io"), "{}", first_error_line(&o));

    std::fs::write(&bad, "kind = \"generic\"\ngraph = 5\n").unwrap();
    let o = cognet(&["run", &bad.display().to_string()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(is_error_line(&first_error_line(&o), "parse"));

    let o = cognet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(is_error_line(&first_error_line(&o), "usage"));
}

#[test]
fn detect_reports_the_bilinear_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = cognet(&["detect", &scenario("bilinear.toml"), "--out", &out, "--quiet"]);
    assert!(o.status.success(), "{}", first_error_line(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("feedback.json")).unwrap()).unwrap();
    let walks = report["walks"].as_array().unwrap();
    assert_eq!(walks.len(), 1);
    assert_eq!(walks[0]["is_feedback_loop"], true);

    let o = cognet(&["detect", &scenario("bilinear.toml"), "--out", &out, "--max-size", "1", "--quiet"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("feedback.json")).unwrap()).unwrap();
    assert!(report["walks"].as_array().unwrap().is_empty());
}

#[test]
fn detect_on_an_unordered_space_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = cognet(&["detect", &scenario("unordered.toml"), "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(is_error_line(&first_error_line(&o), "unordered_space"));
}

#[test]
fn plotdata_emits_tidy_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(cognet(&["run", &scenario("aco_diamond.toml"), "--out", &out, "--quiet"]).status.success());
    let o = cognet(&["plotdata", &out, "running_best"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,series,value"));
    let values: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 200);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));

    let o = cognet(&["plotdata", &out, "nope"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(first_error_line(&o).contains("available: best_length"));

    let empty = tempfile::tempdir().unwrap();
    let o = cognet(&["plotdata", &empty.path().display().to_string(), "separation"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plotdata_separation_after_a_coupled_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(cognet(&["run", &scenario("generic.toml"), "--out", &out, "--quiet"]).status.success());
    let file = dir.path().join("sep.csv");
    let o = cognet(&["plotdata", &out, "separation", "--out", &file.display().to_string()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(file).unwrap();
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn oracle_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(cognet(&["run", &scenario("aco_dag.toml"), "--out", &out, "--quiet"]).status.success());
    let o = cognet(&["oracle", &dir.path().join("instance.json").display().to_string()]);
    assert!(o.status.success(), "{}", first_error_line(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["length"].as_f64().unwrap() - 6.573544615002209).abs() < 1e-12);

    let o = cognet(&["profile", &scenario("generic.toml"), "--out", &out, "--quiet", "--horizon", "20"]);
    assert!(o.status.success(), "{}", first_error_line(&o));
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("profile.json")).unwrap()).unwrap();
    let alpha = p["profile"]["alpha"].as_f64().unwrap();
    assert!(alpha > 0.0 && alpha < 1.0, "{alpha}");
}
