use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn featlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featlens")).args(args).output().unwrap()
}

fn featlens_with_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featlens"))
        .env("FEATLENS_THREADS", threads)
        .args(args)
        .output()
        .unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let out = featlens(&["synth", "--out", dir.to_str().unwrap(), "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn accuracy_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1");
    let out = tmp.path().join("out");
    let run = featlens(&["accuracy", "--train-bundle", s(&data.join("train")), "--out", s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("accuracy.json")).unwrap();
    assert!(text.starts_with('{') && text.ends_with("}\n"));
    assert!(text.contains("\"splits\""));
    assert!(!out.join("accuracy.csv").exists());
}

#[test]
fn adversaries_without_validation_bundle_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let run = featlens(&["adversaries", "--train-bundle", s(&data.join("train")), "--out", s(&tmp.path().join("o"))]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("validation bundle required for KLD"));
}

#[test]
fn unknown_flag_fails() {
    let run = featlens(&["report", "--no-such-flag"]);
    assert!(!run.status.success());
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn missing_bundle_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let run = featlens(&["accuracy", "--train-bundle", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing"));
}

#[test]
fn k_other_than_five_needs_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");
    let train = data.join("train");
    let base = ["archetypes", "--train-bundle", s(&train), "--k", "7", "--out"];
    let bare = featlens(&[&base[..], &[s(&tmp.path().join("a"))]].concat());
    assert!(!bare.status.success());
    let with = featlens(&[&base[..], &[s(&tmp.path().join("b")), "--thresholds", "5-7,3-4,1-2,0"]].concat());
    assert!(with.status.success(), "{}", String::from_utf8_lossy(&with.stderr));
    assert!(tmp.path().join("b/archetypes.json").exists());
}

#[test]
fn report_is_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "7");
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "4"), ("c", "4")] {
        let out = tmp.path().join(name);
        let run = featlens_with_threads(
            &[
                "report",
                "--train-bundle",
                s(&data.join("train")),
                "--val-bundle",
                s(&data.join("val")),
                "--ref-class",
                "automobile",
                "--format",
                "json,csv,svg",
                "--random",
                "dirichlet",
                "--dirichlet-draws",
                "100",
                "--seed",
                "7",
                "--out",
                s(&out),
            ],
            threads,
        );
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        assert_eq!(files.len(), 18);
        outputs.push(files);
    }
    assert!(outputs[0] == outputs[1]);
    assert!(outputs[1] == outputs[2]);
}

#[test]
fn synth_is_deterministic_and_accepts_a_spec_file() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, "5");
    synth(&b, "5");
    for split in ["train", "val"] {
        for f in ["manifest.json", "embeddings.bin", "labels.bin", "predictions.bin", "saliency.bin"] {
            assert_eq!(fs::read(a.join(split).join(f)).unwrap(), fs::read(b.join(split).join(f)).unwrap(), "{f}");
        }
    }

    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"dim": 4, "separation": 6.0, "baseline": 1.0, "pixels_per_instance": 0, "seed": 11,
            "classes": [{"name": "x", "n_train": 20, "n_val": 5, "std": 1.0, "palette": 0},
                        {"name": "y", "n_train": 10, "n_val": 5, "std": 1.0, "palette": 3}],
            "overlap_pairs": []}"#,
    )
    .unwrap();
    let c = tmp.path().join("c");
    let run = featlens(&["synth", "--out", s(&c), "--spec", s(&spec)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::metadata(c.join("train/labels.bin")).unwrap().len(), 30 * 4);
    assert!(!c.join("train/saliency.bin").exists());
}
