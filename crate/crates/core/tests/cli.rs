use std::path::Path;
use std::process::{Command, Output};

fn har_kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_har-kit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_prints_a_complete_config() {
    let out = har_kit(&["validate", "-c", "simclr_motionsense", "--dataset", "data"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("# config hash "));
    assert!(stdout.contains("temperature = 0.1"));
    assert!(stdout.contains("[classifier.train]"));
}

#[test]
fn unknown_keys_get_a_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "dataset = \"x\"\n[windowing]\nwin_lne = 5\n").unwrap();
    let out = har_kit(&["validate", "-c", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("windowing.win_lne: unknown key (did you mean \"win_len\"?)"));
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");

    let missing_dataset = har_kit(&["run", "-c", "ecdf_motionsense", "-o", s(&out_dir)]);
    assert_eq!(missing_dataset.status.code(), Some(2));
    assert!(text(&missing_dataset.stderr).contains("dataset: required"));

    let absent = dir.path().join("absent");
    let bad_data = har_kit(&["run", "-c", "ecdf_motionsense", "--dataset", s(&absent), "-o", s(&out_dir)]);
    assert_eq!(bad_data.status.code(), Some(3));

    let unknown_preset = har_kit(&["validate", "-c", "no_such_preset"]);
    assert_eq!(unknown_preset.status.code(), Some(2));

    let clash = har_kit(&["run", "-c", "ecdf_motionsense", "--fast", "--deterministic"]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn synth_run_rerun_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("run");
    let synth = har_kit(&["synth", "-o", s(&data), "--subjects", "8", "--seconds", "6"]);
    assert!(synth.status.success(), "{}", text(&synth.stderr));

    let args = ["run", "-c", "ecdf_motionsense", "--dataset", s(&data), "-o", s(&out_dir)];
    let first = har_kit(&args);
    assert!(first.status.success(), "{}", text(&first.stderr));
    assert!(text(&first.stdout).contains("ecdf_rf: test mean F1"));

    let second = har_kit(&args);
    assert!(second.status.success());
    assert!(text(&second.stdout).contains("up to date"));

    // a different seed is a different experiment and needs --force
    let mut reseeded = args.to_vec();
    reseeded.extend(["--seed", "3"]);
    assert_eq!(har_kit(&reseeded).status.code(), Some(2));
    reseeded.push("--force");
    assert!(har_kit(&reseeded).status.success());

    let report = har_kit(&["report", "-o", s(&out_dir)]);
    assert!(report.status.success(), "{}", text(&report.stderr));
    let digest = text(&report.stdout);
    assert!(digest.contains("ecdf_rf"));
    assert!(digest.to_lowercase().contains("confusion"));
    for f in ["manifest.json", "summary.json", "report.jsonl", "confusion.csv", "features/train.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
}
