use std::path::Path;
use std::process::{Command, Output};

fn satstereo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satstereo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = satstereo(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stage_by_stage_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "tile", "--size", "192"], d);
    let out = ok(&["pairs", "--manifest", "tile/manifest.json", "--out", "pairs.json"], d);
    assert!(out.starts_with("3 of 3"), "{out}");

    let pair = ["--pairs", "pairs.json", "--pair", "img00__img01"];
    ok(&[&["match"][..], &pair, &["--out", "m.csv"]].concat(), d);
    let text = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(text.starts_with("x1,y1,x2,y2"));
    assert!(text.lines().count() > 20);

    let out = ok(&[&["orient"][..], &pair, &["--matches", "m.csv", "--lsm", "--out", "o.json"]].concat(), d);
    assert!(out.contains("success true"), "{out}");

    ok(&[&["densify"][..], &pair, &["--orientation", "o.json", "--out", "dsm.asc"]].concat(), d);
    assert!(d.join("dsm.json").is_file());
    let out = ok(&["dsm-eval", "--dsm", "dsm.asc", "--truth", "tile/truth.asc", "--out", "eval.json"], d);
    assert!(out.starts_with("completeness"), "{out}");
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert!(eval["rmse"].as_f64().unwrap() < 1.0, "{eval}");
}

#[test]
fn imported_matches_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "tile", "--size", "128"], d);
    ok(&["pairs", "--manifest", "tile/manifest.json", "--out", "pairs.json"], d);
    std::fs::write(
        d.join("ext.csv"),
        "x1,y1,x2,y2,score\n10,10,12,11,0.9\n10,10,12,11,0.8\n500,10,1,1,0.5\n20,30,21,30,1.5\n",
    )
    .unwrap();
    let out = ok(
        &["match", "--pairs", "pairs.json", "--pair", "img00__img01", "--method", "ext", "--import", "ext.csv", "--out", "m.csv"],
        d,
    );
    assert_eq!(out.trim(), "4 rows, 1 accepted, 1 duplicates, 2 rejected");

    std::fs::write(d.join("bad.csv"), "a,b,c\n1,2,3\n").unwrap();
    let out = satstereo(
        &["match", "--pairs", "pairs.json", "--pair", "img00__img01", "--import", "bad.csv", "--out", "m.csv"],
        d,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}

#[test]
fn run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "tile", "--size", "160", "--noise", "2"], d);
    std::fs::write(
        d.join("run.toml"),
        "manifest = \"tile/manifest.json\"\nrun_id = \"r1\"\nlsm = \"both\"\ndense = false\nseed = 3\n",
    )
    .unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_satstereo"))
        .args(["run", "--config", "run.toml"])
        .env("SATSTEREO_WORKERS", "2")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("sift: 1/3 successful"), "{stdout}");
    assert!(d.join("runs/r1/stats.json").is_file());
    assert!(d.join("runs/r1/img00__img01/sift+lsm/orientation.json").is_file());

    let again = ok(&["run", "--config", "run.toml"], d);
    assert!(again.contains("(3 tasks resumed)"), "{again}");

    ok(&["report", "--run", "runs/r1"], d);
    let tables = d.join("runs/r1/tables");
    let success = std::fs::read_to_string(tables.join("success_rate.csv")).unwrap();
    assert!(success.contains("sift,3,1,33.33"), "{success}");
    for f in ["inlier_ratio.csv", "epipolar_rms.csv", "completeness.csv", "rmse.csv", "lsm_changes.csv"] {
        assert!(tables.join(f).is_file(), "{f}");
    }
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), "{\"methods\": []}").unwrap();
    let out = satstereo(&["run", "--config", "run.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one method"));
}
