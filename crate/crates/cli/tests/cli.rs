use std::path::Path;
use std::process::{Command, Output};

fn partmanip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partmanip")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = partmanip(dir.path(), &["run", "--categories", "bottle,lamp", "--seeds", "3", "--output", "out"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("Bottle") && table.contains("1.00 (3/3)"), "{table}");
    for f in ["episodes.jsonl", "report.txt", "report.jsonl"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join("out/episodes.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let again = partmanip(dir.path(), &["report", "--categories", "bottle,lamp", "--seeds", "3", "--output", "out"]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), table);
}

#[test]
fn thresholds_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "categories = [\"door\"]\nseeds = 2\n\n[providers]\ndescribe = \"perturbed-offline\"\nground = \"perturbed-offline\"\nsegment = \"perturbed-offline\"\nnoise = 0.5\n\n[thresholds]\nmin_iou = 0.999\n",
    )
    .unwrap();
    let out = partmanip(dir.path(), &["--config", "run.toml", "run"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold violated"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seeds = 0\n").unwrap();
    let out = partmanip(dir.path(), &["--config", "run.toml", "run"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("typo.toml"), "sedes = 3\n").unwrap();
    assert_eq!(partmanip(dir.path(), &["--config", "typo.toml", "run"]).status.code(), Some(2));
}

#[test]
fn dataset_and_grounding_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = partmanip(dir.path(), &["gen-dataset", "--split", "test", "--out", "test.txt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 200 parts"));
    assert!(dir.path().join("test.txt").exists());
    let out = partmanip(dir.path(), &["eval-grounding", "--categories", "pen", "--seeds", "2", "--levels", "0,0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("0 ") && l.contains("1.000")), "{text}");
    assert_eq!(text.lines().count(), 3);
    let missing = partmanip(dir.path(), &["eval-affordance", "--model", "absent.bin"]);
    assert_eq!(missing.status.code(), Some(2));
}
