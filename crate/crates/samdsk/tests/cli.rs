use std::path::Path;
use std::process::{Command, Output};

use samdsk::proposals::ProposalFile;
use samdsk::raster::save_prob_stack;
use samdsk_core::{BinaryMask, ProbStack};
use serde_json::{json, Value};

fn samdsk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samdsk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Left half foreground; proposals are the two left quadrants and the top right one.
fn worked_instance(dir: &Path) {
    let s1 = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2).unwrap();
    let s2 = BinaryMask::from_fn(4, 4, |r, c| r >= 2 && c < 2).unwrap();
    let s3 = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c >= 2).unwrap();
    ProposalFile::from_masks("worked", &[s1, s2, s3], json!({"kind": "test"}))
        .unwrap()
        .save(&dir.join("proposals.json"))
        .unwrap();
    let mut data = vec![0.0f32; 32];
    for i in 0..16 {
        let fg = if i % 4 < 2 { 1.0 } else { 0.0 };
        data[i] = fg;
        data[16 + i] = 1.0 - fg;
    }
    save_prob_stack(&dir.join("probs.rast"), &ProbStack::new(4, 4, 2, data).unwrap()).unwrap();
}

#[test]
fn match_on_the_worked_instance() {
    let dir = tempfile::tempdir().unwrap();
    worked_instance(dir.path());
    let props = dir.path().join("proposals.json");
    let probs = dir.path().join("probs.rast");
    let out_dir = dir.path().join("out");

    let wide = ok_json(&samdsk(&[
        "match", "--proposals", p(&props), "--probs", p(&probs), "--v-upper", "2", "--out", p(&out_dir),
    ]));
    assert_eq!(wide["beta"], json!(1.0));
    assert_eq!(wide["z"], json!([[0, 1]]));
    assert_eq!(wide["case"], "case1");
    assert_eq!(wide["image_id"], "worked");
    assert_eq!(read_json(&out_dir.join("assignment.json")), wide);
    let ann = read_json(&out_dir.join("annotation.json"));
    assert_eq!(ann["masks"], json!([[0, 8, 8]]));

    let narrow = ok_json(&samdsk(&["match", "--proposals", p(&props), "--probs", p(&probs)]));
    assert_eq!(narrow["beta"], json!(0.5));
    assert_eq!(narrow["z"], json!([[0]]));
    assert_eq!(narrow["case"], "case2");
}

#[test]
fn verify_seed_7_passes() {
    let out = samdsk(&["verify", "--trials", "1000", "--seed", "7"]);
    let report = ok_json(&out);
    assert_eq!(report["passed"], json!(true));
    assert_eq!(report["equivalence"]["mismatches"], json!([]));
    assert_eq!(report["equivalence"]["trials"], json!(1000));
    assert_eq!(report["bound"]["violations"], json!([]));
    assert_eq!(report["bound"]["case2"], json!(1000));
}

fn gen(dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["gen-synth", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok_json(&samdsk(&args))
}

const SMALL: &[&str] = &["--size", "32", "--human", "4", "--unlabeled", "12", "--test", "4"];

#[test]
fn perfect_fidelity_run_admits_the_pool_in_round_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = SMALL.to_vec();
    args.extend_from_slice(&["--fidelity", "1", "--drift", "0", "--human-drift", "0"]);
    gen(&data, &args);
    let run = dir.path().join("run");
    let summary = ok_json(&samdsk(&[
        "run", "--manifest", p(&data.join("manifest.json")), "--run-dir", p(&run), "--v-upper", "6",
    ]));
    let history = read_json(&run.join("history.json"));
    assert_eq!(history["rounds"][0]["added"], json!(12));
    assert_eq!(history["rounds"][1]["added"], json!(0));
    assert_eq!(summary["stop"], "no-admissions");
    assert_eq!(summary["labeled"], json!(16));
    assert_eq!(summary["unlabeled"], json!(0));
    assert_eq!(read_json(&run.join("summary.json")), summary);
    assert!(!run.join("run.lock").exists());
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, SMALL);
    let manifest = data.join("manifest.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    ok_json(&samdsk(&["run", "--manifest", p(&manifest), "--run-dir", p(&a)]));
    let first = ok_json(&samdsk(&["run", "--manifest", p(&manifest), "--run-dir", p(&b), "--max-rounds", "1"]));
    assert_eq!(first["rounds"], json!(1));
    ok_json(&samdsk(&["run", "--manifest", p(&manifest), "--run-dir", p(&b)]));
    for f in ["state.json", "history.json", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    // a different seed cannot continue this state
    let out = samdsk(&["run", "--manifest", p(&manifest), "--run-dir", p(&b), "--seed", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, SMALL);
    let run = dir.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("run.lock"), "1\n").unwrap();
    let out = samdsk(&["run", "--manifest", p(&data.join("manifest.json")), "--run-dir", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    assert!(!run.join("state.json").exists());
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, SMALL);
    gen(&b, SMALL);
    let mut files = 0;
    for sub in ["features", "proposals", "gt"] {
        for e in std::fs::read_dir(a.join(sub)).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(
                std::fs::read(a.join(sub).join(&name)).unwrap(),
                std::fs::read(b.join(sub).join(&name)).unwrap()
            );
            files += 1;
        }
    }
    assert_eq!(files, 20 + 20 + 20);
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn coverage_and_selection_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, SMALL);
    let cov = ok_json(&samdsk(&["coverage", "--manifest", p(&data.join("manifest.json"))]));
    assert_eq!(cov["images"].as_array().unwrap().len(), 8);
    assert!(cov["mean_dice"].as_f64().unwrap() > 0.9);

    let sel = ok_json(&samdsk(&["report-selection", "--instances", "60", "--buckets", "5"]));
    let buckets = sel["buckets"].as_array().unwrap();
    assert_eq!(buckets.len(), 5);
    let top = buckets[0]["mean_iou_annotation"].as_f64().unwrap();
    let bottom = buckets[4]["mean_iou_annotation"].as_f64().unwrap();
    assert!(top > bottom);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    worked_instance(dir.path());
    let props = dir.path().join("proposals.json");
    let probs = dir.path().join("probs.rast");

    assert_eq!(samdsk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(samdsk(&["match", "--probs", p(&probs)]).status.code(), Some(1));
    assert_eq!(samdsk(&["verify", "--trials", "0"]).status.code(), Some(1));
    // two classes listed for a binary task
    let mismatch = samdsk(&["match", "--proposals", p(&props), "--probs", p(&probs), "--v-upper", "1,2"]);
    assert_eq!(mismatch.status.code(), Some(1));
    let lower_above_upper =
        samdsk(&["match", "--proposals", p(&props), "--probs", p(&probs), "--v-lower", "3", "--v-upper", "2"]);
    assert_eq!(lower_above_upper.status.code(), Some(1));
    assert_eq!(samdsk(&["--help"]).status.code(), Some(0));

    let bad = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/malformed/rle_short.proposals.json");
    let out = samdsk(&["match", "--proposals", p(&bad), "--probs", p(&probs)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rle_short.proposals.json") && stderr.contains("p1"), "{stderr}");
    let missing = samdsk(&["run", "--manifest", "/nonexistent/manifest.json", "--run-dir", p(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));

    // lower bounds that no assignment can meet
    let out = samdsk(&["match", "--proposals", p(&props), "--probs", p(&probs), "--v-lower", "4", "--v-upper", "4"]);
    assert_eq!(out.status.code(), Some(2));
}
