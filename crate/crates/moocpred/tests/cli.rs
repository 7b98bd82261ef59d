//! End-to-end checks of the command-line interface: exit codes and the
//! synth -> train -> predict -> report flow.

use std::path::Path;
use std::process::{Command, Output};

use moocpred_core::synth::ScenarioConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moocpred"))
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Writes a 2-set, 2-iteration, 40-student scenario and a config with a
/// small enough model for fast runs. Returns (scenario path, config path).
fn fixture(root: &Path) -> (String, String) {
    let scenario_path = root.join("scenario.json");
    let mut scenario = ScenarioConfig::small(9);
    scenario.course_sets = 2;
    scenario.students_per_course = 40;
    std::fs::write(&scenario_path, serde_json::to_string(&scenario).unwrap()).unwrap();

    let config_path = root.join("run.conf");
    std::fs::write(
        &config_path,
        concat!(
            "seed = 9\n",
            "bilstm_units = 4\n",
            "attention_hidden = 4\n",
            "head_dense = [4]\n",
            "projection_width = 8\n",
            "dropout = 0.0\n",
            "max_epochs = 2\n",
            "patience = 1\n",
        ),
    )
    .unwrap();
    (
        scenario_path.to_str().unwrap().to_string(),
        config_path.to_str().unwrap().to_string(),
    )
}

#[test]
fn missing_required_flag_exits_two() {
    let output = bin().arg("synth").output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
}

#[test]
fn unknown_scenario_exits_two_and_lists_the_bundled_ones() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["synth", "--scenario", "nope"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
    let message = stderr(&output);
    assert!(message.contains("small") && message.contains("medium"), "{message}");
}

#[test]
fn missing_corpus_exits_three() {
    let output = bin()
        .args(["ingest", "--corpus", "/definitely/not/here"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", stderr(&output));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "bogus = 1\n").unwrap();
    let output = bin()
        .arg("--config")
        .arg(&conf)
        .args(["ingest", "--corpus", "x"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
    assert!(stderr(&output).contains("bogus"), "{}", stderr(&output));
}

#[test]
fn synth_train_predict_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (scenario, config) = fixture(dir.path());
    let corpus = dir.path().join("corpus");
    let corpus_s = corpus.to_str().unwrap();

    let output = bin()
        .args(["synth", "--scenario", &scenario, "--out", corpus_s])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));

    let output = bin().args(["ingest", "--corpus", corpus_s]).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(stdout(&output).contains("4 courses"), "{}", stdout(&output));

    // The newest iteration of the first set is a valid n-1-same target.
    let target = "algebra-00-02";
    let ingest = stdout(&output);
    assert!(ingest.contains(target), "unexpected course ids: {ingest}");

    let model = dir.path().join("model.json");
    let output = bin()
        .args(["--config", &config, "train", "--corpus", corpus_s])
        .args(["--target", target, "--setting", "n-1-same", "--arch", "bo"])
        .args(["--level", "0.6", "--out", model.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));

    let output = bin()
        .args(["predict", "--model", model.to_str().unwrap()])
        .args(["--corpus", corpus_s, "--course", target])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let csv = stdout(&output);
    assert!(csv.starts_with("# config_hash="), "{csv}");
    assert_eq!(csv.lines().nth(1), Some("student,p_fail,label"));
    // Scores cover the whole course population, 40 students.
    assert_eq!(csv.lines().count(), 42, "{csv}");

    let report = dir.path().join("report.json");
    let output = bin()
        .args(["--config", &config, "experiment", "run", "--corpus", corpus_s])
        .args(["--level", "0.6", "--setting", "n-1-diff", "--arch", "bo"])
        .args(["--out", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));

    let output = bin()
        .args(["experiment", "table", "--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let table = stdout(&output);
    assert!(table.starts_with("course,"), "{table}");
    assert!(table.contains(target), "{table}");

    let tables = dir.path().join("tables");
    let output = bin()
        .args(["report", "--report", report.to_str().unwrap()])
        .args(["--out", tables.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let rendered =
        std::fs::read_to_string(tables.join("transfer_filtered_l60.csv")).unwrap();
    assert!(rendered.starts_with("# config_hash="), "{rendered}");
}

#[test]
fn train_rejects_the_per_fold_setting() {
    let dir = tempfile::tempdir().unwrap();
    let (scenario, config) = fixture(dir.path());
    let corpus = dir.path().join("corpus");
    bin()
        .args(["synth", "--scenario", &scenario])
        .arg("--out")
        .arg(&corpus)
        .output()
        .unwrap();
    let output = bin()
        .args(["--config", &config, "train"])
        .arg("--corpus")
        .arg(&corpus)
        .args(["--target", "algebra-00-02", "--setting", "1-1-same"])
        .args(["--arch", "bo", "--level", "0.6"])
        .arg("--out")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
}
