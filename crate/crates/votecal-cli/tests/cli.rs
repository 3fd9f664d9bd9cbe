//! CLI behavior: exit codes, diagnostics, output shapes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn votecal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votecal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path, name: &str, questions: u32, seed: u64) {
    let out = votecal(
        &[
            "synth",
            "--questions",
            &questions.to_string(),
            "--responses",
            "8",
            "--q-beta",
            "4,4",
            "--correct-beta",
            "8,2",
            "--incorrect-beta",
            "2,8",
            "--answers",
            "4",
            "--seed",
            &seed.to_string(),
            "--out",
            name,
        ],
        dir,
    );
    assert_ok(&out);
}

#[test]
fn validate_accepts_well_formed_and_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.jsonl", 10, 1);

    let ok = votecal(
        &["validate", "--data", "data.jsonl", "--role", "calibration"],
        dir.path(),
    );
    assert_ok(&ok);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("10 questions"), "summary: {stdout}");
    assert!(stdout.contains("80 responses"));

    // corrupt one line and expect a line-numbered diagnostic, nonzero exit
    let mut lines: Vec<String> = fs::read_to_string(dir.path().join("data.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[4] = "{broken".into();
    fs::write(dir.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let bad = votecal(&["validate", "--data", "bad.jsonl"], dir.path());
    assert!(!bad.status.success());
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains(":5:"), "diagnostics: {stderr}");
    assert!(!stderr.contains("panicked"), "no stack traces for user errors");
}

#[test]
fn aggregate_writes_one_choice_row_per_question() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.jsonl", 7, 2);
    let out = votecal(
        &[
            "aggregate",
            "--data",
            "data.jsonl",
            "--method",
            "mv",
            "--out",
            "choices.csv",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let csv = fs::read_to_string(dir.path().join("choices.csv")).unwrap();
    let rows: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(rows.len(), 8, "header + 7 questions");
    assert_eq!(rows[0], "question_id,method,chosen,correct");

    let json = votecal(
        &[
            "aggregate",
            "--data",
            "data.jsonl",
            "--method",
            "bon",
            "--format",
            "json",
            "--out",
            "choices.json",
        ],
        dir.path(),
    );
    assert_ok(&json);
    let value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("choices.json")).unwrap())
            .unwrap();
    assert_eq!(value["rows"].as_array().unwrap().len(), 7);
    assert_eq!(value["kind"], "choices");
    assert!(value["metadata"]["dataset_sha256"].is_string());
}

#[test]
fn aggregate_optimal_refuses_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("unlabeled.jsonl"),
        concat!(
            r#"{"question_id": "q1", "gold": "A", "responses": [{"answer": "A", "score": 0.9}, {"answer": "B", "score": 0.4}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = votecal(
        &[
            "aggregate",
            "--data",
            "unlabeled.jsonl",
            "--method",
            "optimal",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unlabeled"), "diagnostic: {stderr}");
    assert!(!dir.path().join("x.csv").exists(), "no partial output");
}

#[test]
fn unknown_method_and_missing_file_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.jsonl", 5, 3);

    let unknown = votecal(
        &[
            "aggregate",
            "--data",
            "data.jsonl",
            "--method",
            "telepathy",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown method"));

    let missing = votecal(
        &["validate", "--data", "nope.jsonl"],
        dir.path(),
    );
    assert!(!missing.status.success());

    let badflag = votecal(&["evaluate", "--bogus"], dir.path());
    assert!(!badflag.status.success());
}

#[test]
fn calibrate_then_evaluate_and_sweep_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "cal.jsonl", 60, 4);
    synth(dir.path(), "test.jsonl", 80, 5);

    for (family, artifact) in [("logit", "logit.json"), ("linear", "linear.json"), ("kde", "kde.json")] {
        let out = votecal(
            &[
                "calibrate",
                "--data",
                "cal.jsonl",
                "--family",
                family,
                "--out",
                artifact,
            ],
            dir.path(),
        );
        assert_ok(&out);
    }

    let eval = votecal(
        &[
            "evaluate",
            "--data",
            "test.jsonl",
            "--method",
            "mv",
            "--method",
            "artifact:logit.json",
            "--ns",
            "1,2,4,8",
            "--trials",
            "5",
            "--seed",
            "11",
            "--out",
            "scaling",
        ],
        dir.path(),
    );
    assert_ok(&eval);
    let csv = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    // mv, logit_wv, plus auto-added pass and optimal, at 4 budgets each
    assert_eq!(csv.trim_end().lines().count(), 1 + 4 * 4);
    let envelope: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scaling.json")).unwrap())
            .unwrap();
    assert_eq!(envelope["metadata"]["seed"], "11");
    assert!(envelope["metadata"]["artifacts"]
        .as_str()
        .unwrap()
        .starts_with("logit_wv"));

    let matched = votecal(
        &[
            "report",
            "matched",
            "--scaling",
            "scaling.json",
            "--method-a",
            "logit_wv",
            "--method-b",
            "mv",
            "--out",
            "matched.json",
        ],
        dir.path(),
    );
    assert_ok(&matched);
    let matched_value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("matched.json")).unwrap())
            .unwrap();
    assert!(matched_value["matched_n"].is_number());

    let sweep = votecal(
        &[
            "sweep",
            "--data",
            "cal.jsonl",
            "--family",
            "linear",
            "--out",
            "sweep",
        ],
        dir.path(),
    );
    assert_ok(&sweep);
    let sweep_csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep_csv.trim_end().lines().count(), 1 + 201);

    let qm = votecal(
        &[
            "report",
            "qm-mae",
            "--data",
            "test.jsonl",
            "--calib",
            "kde.json",
            "--out",
            "qm.json",
        ],
        dir.path(),
    );
    assert_ok(&qm);
    assert!(String::from_utf8_lossy(&qm.stdout).contains("mae_calibrated"));

    let gap = votecal(
        &[
            "report",
            "weight-gap",
            "--data",
            "test.jsonl",
            "--calib",
            "kde.json",
            "--out",
            "gap",
        ],
        dir.path(),
    );
    assert_ok(&gap);
    assert!(dir.path().join("gap.csv").exists());
    assert!(dir.path().join("gap.json").exists());

    // weight-gap demands a kde artifact
    let wrong = votecal(
        &[
            "report",
            "weight-gap",
            "--data",
            "test.jsonl",
            "--calib",
            "logit.json",
            "--out",
            "gap2",
        ],
        dir.path(),
    );
    assert!(!wrong.status.success());
}

#[test]
fn synth_config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "num_questions": 12,
        "responses_per_question": 4,
        "difficulty": {"fixed": 0.6},
        "score_law_correct": {"a": 2.0, "b": 1.0},
        "score_law_incorrect": {"a": 1.0, "b": 2.0},
        "answer_universe": 4,
        "seed": 9,
    });
    fs::write(
        dir.path().join("cfg.json"),
        serde_json::to_string(&config).unwrap(),
    )
    .unwrap();
    let from_config = votecal(
        &["synth", "--config", "cfg.json", "--out", "a.jsonl"],
        dir.path(),
    );
    assert_ok(&from_config);
    let from_flags = votecal(
        &[
            "synth",
            "--questions",
            "12",
            "--responses",
            "4",
            "--q",
            "0.6",
            "--correct-beta",
            "2,1",
            "--incorrect-beta",
            "1,2",
            "--answers",
            "4",
            "--seed",
            "9",
            "--out",
            "b.jsonl",
        ],
        dir.path(),
    );
    assert_ok(&from_flags);
    assert_eq!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}
