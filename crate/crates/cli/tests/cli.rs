use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sttformer::data::ntu::to_skeleton_text;
use sttformer::data::sttd::read_sttd;
use sttformer::data::{make_synthetic_dataset, CaptureInfo};

fn sttf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sttf"))
        .args(args)
        .env_remove("STTF_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_every_flag_and_exits_zero() {
    let o = sttf(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["convert", "synth", "train", "eval", "fuse", "gradcheck", "ablate"] {
        assert!(text(&o.stdout).contains(sub), "{sub} missing from top-level help");
        assert_eq!(code(&sttf(&[sub, "--help"])), 0, "{sub} --help");
    }
    let train = text(&sttf(&["train", "--help"]).stdout);
    for flag in [
        "--config", "--seed", "--mode", "--n ", "--no-pe", "--no-iffa", "--k1", "--k2", "--precision", "--out",
    ] {
        assert!(train.contains(flag), "train --help lacks {flag}");
    }
    assert!(train.contains("joint") && train.contains("f64"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&sttf(&["train", "--bogus"])), 1);
    assert_eq!(code(&sttf(&[])), 1);
    assert_eq!(code(&sttf(&["gradcheck", "--mode", "sideways"])), 1);

    let o = sttf(&["gradcheck", "--n", "5"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("must divide t0=12"), "{}", text(&o.stderr));

    let o = sttf(&["gradcheck", "--k2", "2"]);
    assert_eq!(code(&o), 1);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = sttf(&["train", "--preset", "tiny", "--train-data", p(&missing), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("not a directory"));
    let o = sttf(&["eval", "--run", p(&missing)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("does not exist"));
    let o = sttf(&["train", "--config", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"heads": 4, "colour": 1}}"#).unwrap();
    let o = sttf(&["gradcheck", "--config", p(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("colour"));
}

#[test]
fn thread_cap_is_validated() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_sttf"))
            .args(["convert", "--input", ".", "--output", "/nonexistent-unused", "--format", "skeleton"])
            .env("STTF_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("zero")), 1);
    assert_eq!(code(&run("0")), 1);
}

fn skeleton_fixture(dir: &Path, stem: &str, label: usize, seed: u64) {
    let mut seq = make_synthetic_dataset(label + 1, 1, 6, 25, seed).pop().unwrap();
    seq.info = CaptureInfo { subject_id: 1, camera_id: 1, setup_id: 1 };
    fs::write(dir.join(format!("{stem}.skeleton")), to_skeleton_text(&seq)).unwrap();
}

fn convert(input: &Path, output: &Path, format: &str) -> Output {
    sttf(&["convert", "--input", p(input), "--output", p(output), "--format", format])
}

#[test]
fn convert_counts_and_warnings() {
    let root = tempfile::tempdir().unwrap();
    let (input, output) = (root.path().join("in"), root.path().join("out"));
    fs::create_dir(&input).unwrap();

    let o = convert(&input, &output, "sttd");
    assert_eq!(code(&o), 0);
    assert!(text(&o.stderr).contains("warning"));

    skeleton_fixture(&input, "S001C001P001R001A001", 0, 1);
    let o = convert(&input, &output, "sttd");
    assert_eq!(code(&o), 0);
    assert!(text(&o.stdout).contains("converted 1 of 1"));

    skeleton_fixture(&input, "S001C002P003R002A003", 2, 2);
    fs::write(input.join("S001C001P001R001A002.skeleton"), "6\n1\nnot a body header\n").unwrap();
    let o = convert(&input, &output, "sttd");
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("converted 2 of 3"));
    assert!(text(&o.stderr).contains("S001C001P001R001A002.skeleton"));

    let seq = read_sttd(&output.join("S001C002P003R002A003.sttd")).unwrap();
    assert_eq!(seq.label, 2);
    assert_eq!(seq.info, CaptureInfo { subject_id: 3, camera_id: 2, setup_id: 1 });
    assert_eq!((seq.frames(), seq.joints()), (6, 25));

    // back to text and in again: same values
    let (text_dir, again) = (root.path().join("text"), root.path().join("again"));
    assert_eq!(code(&convert(&output, &text_dir, "skeleton")), 0);
    assert_eq!(code(&convert(&text_dir, &again, "sttd")), 0);
    assert_eq!(read_sttd(&again.join("S001C002P003R002A003.sttd")).unwrap(), seq);

    let broken = root.path().join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("S001C001P001R001A001.skeleton"), "garbage").unwrap();
    fs::write(broken.join("nameless.skeleton"), "1\n0\n").unwrap();
    let o = convert(&broken, &root.path().join("none"), "sttd");
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_gate() {
    let out = tempfile::tempdir().unwrap();
    let o = sttf(&["gradcheck", "--out", p(out.path())]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("max relative error"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("gradcheck.json")).unwrap()).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);

    let o = sttf(&["gradcheck", "--tol", "1e-15"]);
    assert_eq!(code(&o), 2);
}

/// Every file below `root` with its bytes, keyed by relative path.
fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                pending.push(path);
            } else {
                let bytes = fs::read(&path).unwrap();
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_reproducible_and_fuses_three_modes() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let o = sttf(&["synth", "--preset", "tiny", "--out", p(&data), "--per-class", "3", "--eval-per-class", "2"]);
    assert_eq!(code(&o), 0);

    let train = |mode: &str, out: &Path| {
        let o = sttf(&[
            "train", "--preset", "tiny", "--mode", mode, "--precision", "f64", "--epochs", "2", "--milestones", "1",
            "--batch-size", "4", "--seed", "7",
            "--train-data", p(&data.join("train")), "--eval-data", p(&data.join("eval")), "--out", p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    };
    let runs: Vec<PathBuf> = ["joint", "bone", "motion"].iter().map(|m| root.path().join(m)).collect();
    for (m, dir) in ["joint", "bone", "motion"].iter().zip(&runs) {
        train(m, dir);
    }
    let again = root.path().join("joint-again");
    train("joint", &again);
    let (a, b) = (files(&runs[0]), files(&again));
    assert_eq!(a.iter().map(|f| f.0.clone()).collect::<Vec<_>>(), [
        PathBuf::from("checkpoints/best.ckpt"),
        PathBuf::from("checkpoints/last.ckpt"),
        PathBuf::from("config.json"),
        PathBuf::from("log.jsonl"),
    ]);
    assert_eq!(a, b, "same seed and config must give identical bytes");
    assert_eq!(fs::read_to_string(runs[0].join("log.jsonl")).unwrap().lines().count(), 2);

    // config snapshot reproduces the run
    let from_config = root.path().join("from-config");
    let o = sttf(&["train", "--config", p(&runs[0].join("config.json")), "--out", p(&from_config)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(files(&from_config), a);

    let o = sttf(&["eval", "--run", p(&runs[1]), "--checkpoint", "last"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(runs[1].join("eval.json").is_file());

    let fused = root.path().join("fused");
    let mut args = vec!["fuse", "--out", p(&fused), "--runs"];
    args.extend(runs.iter().map(|r| p(r)));
    let o = sttf(&args);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(fused.join("fusion.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["rows"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["joint", "bone", "motion", "fusion"]);
    let first = fs::read(fused.join("fusion.json")).unwrap();
    assert_eq!(code(&sttf(&args)), 0);
    assert_eq!(fs::read(fused.join("fusion.json")).unwrap(), first);
}

#[test]
fn ablate_n_sweep_keeps_every_row() {
    let out = tempfile::tempdir().unwrap();
    let o = sttf(&[
        "ablate", "--preset", "tiny", "--axis", "n", "--n-list", "1,6", "--epochs", "1", "--milestones", "",
        "--per-class", "2", "--eval-per-class", "2", "--precision", "f64", "--out", p(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let table = text(&o.stdout);
    assert!(table.contains("n=1") && table.contains("n=6"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("ablation.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["n"], 6);

    let o = sttf(&["ablate", "--preset", "tiny", "--n-list", "1,5", "--out", p(out.path())]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("variant n=5"));
}
