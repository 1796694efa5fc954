use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn readpred(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readpred"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = readpred(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path) {
    ok(
        dir,
        &[
            "simulate",
            "--out-dir",
            "study",
            "--seed",
            "7",
            "--participants",
            "12",
            "--words",
            "60",
            "--words-per-participant",
            "30",
        ],
    );
}

#[test]
fn simulate_compare_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    ok(
        dir,
        &[
            "cloze",
            "--words",
            "study/words.tsv",
            "--responses",
            "study/cloze.tsv",
            "--out",
            "cloze_preds.tsv",
        ],
    );
    ok(
        dir,
        &[
            "import-probs",
            "--words",
            "study/words.tsv",
            "--preds",
            "cloze_preds.tsv",
            "--name",
            "copy",
            "--out",
            "copy.tsv",
        ],
    );
    let md = ok(
        dir,
        &[
            "compare",
            "--words",
            "study/words.tsv",
            "--fixations",
            "study/fixations.tsv",
            "--cloze",
            "study/cloze.tsv",
            "--pred",
            "copy=copy.tsv",
            "--out",
            "report",
            "--sequential",
        ],
    );
    assert!(
        md.contains("| Co-variable | baseline | cloze | copy |"),
        "{md}"
    );
    for ext in ["json", "tsv", "md"] {
        assert!(dir.join("report").with_extension(ext).exists());
    }
    let from_json = ok(
        dir,
        &["report", "--input", "report.json", "--format", "tsv"],
    );
    assert_eq!(
        from_json,
        fs::read_to_string(dir.join("report.tsv")).unwrap()
    );
    let from_tsv = ok(dir, &["report", "--input", "report.tsv"]);
    assert_eq!(from_tsv, fs::read_to_string(dir.join("report.md")).unwrap());
}

#[test]
fn assemble_fit_remef() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    ok(
        dir,
        &[
            "assemble",
            "--words",
            "study/words.tsv",
            "--fixations",
            "study/fixations.tsv",
            "--cloze",
            "study/cloze.tsv",
            "--out",
            "ds.tsv",
        ],
    );
    let table = ok(
        dir,
        &[
            "fit",
            "--dataset",
            "ds.tsv",
            "--predictor",
            "cloze",
            "--out",
            "m1.json",
        ],
    );
    assert!(table.contains("cloze"));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("m1.json")).unwrap()).unwrap();
    assert_eq!(fit["p"], 9);
    assert!(fit["dataset_hash"].is_string());
    let t: f64 = ok(dir, &["remef", "--fit", "m1.json", "--dataset", "ds.tsv"])
        .trim()
        .parse()
        .unwrap();
    assert!(t.abs() < 0.5, "{t}");

    ok(dir, &["fit", "--dataset", "ds.tsv", "--out", "m0.json"]);
    let t0: f64 = ok(dir, &["remef", "--fit", "m0.json", "--dataset", "ds.tsv"])
        .trim()
        .parse()
        .unwrap();
    assert!(t0.abs() > t.abs());

    // A fit on different rows cannot be paired with this dataset.
    ok(
        dir,
        &[
            "assemble",
            "--words",
            "study/words.tsv",
            "--fixations",
            "study/fixations.tsv",
            "--cloze",
            "study/cloze.tsv",
            "--exclude-line-edges",
            "--out",
            "edges.tsv",
        ],
    );
    assert_eq!(
        readpred(
            dir,
            &["remef", "--fit", "m1.json", "--dataset", "edges.tsv"]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn ngram_train_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    fs::write(
        dir.join("corpus.txt"),
        "el gato come pescado.\nel perro come carne.\n\nun gato duerme.\n",
    )
    .unwrap();
    ok(
        dir,
        &[
            "ngram",
            "train",
            "--corpus",
            "corpus.txt",
            "--order",
            "3",
            "--out",
            "model.tsv",
        ],
    );
    let dump = fs::read_to_string(dir.join("model.tsv")).unwrap();
    assert!(dump.starts_with("#readpred-ngram\tv1\n"), "{dump}");
    ok(
        dir,
        &[
            "ngram",
            "score",
            "--model",
            "model.tsv",
            "--words",
            "study/words.tsv",
            "--out",
            "ngram.tsv",
        ],
    );
    let preds = fs::read_to_string(dir.join("ngram.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 61);
    ok(
        dir,
        &[
            "ngram",
            "train",
            "--corpus",
            "corpus.txt",
            "--method",
            "add-k",
            "--k",
            "0.5",
            "--out",
            "addk.tsv",
        ],
    );
    assert_eq!(
        readpred(
            dir,
            &[
                "ngram",
                "train",
                "--corpus",
                "corpus.txt",
                "--order",
                "3",
                "--lambda",
                "0.5,0.5,0.5",
                "--out",
                "x.tsv"
            ]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let words = fs::read_to_string(dir.join("study/words.tsv")).unwrap();
    let mut lines: Vec<&str> = words.lines().collect();
    let dup = lines[1].to_string();
    lines.push(&dup);
    fs::write(dir.join("dup.tsv"), lines.join("\n") + "\n").unwrap();
    let out = readpred(dir, &["annotate", "--words", "dup.tsv", "--out", "a.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate word_id"));

    fs::write(dir.join("bad.tsv"), "word_id\tprob\n0\t1.5\n").unwrap();
    let out = readpred(
        dir,
        &[
            "import-probs",
            "--words",
            "study/words.tsv",
            "--preds",
            "bad.tsv",
            "--name",
            "x",
            "--out",
            "o.tsv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = readpred(
        dir,
        &[
            "cloze",
            "--words",
            "study/words.tsv",
            "--responses",
            "study/cloze.tsv",
            "--out",
            "c.tsv",
            "--clamp-eps",
            "0.7",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    // Missing input files are I/O failures, not validation errors.
    let out = readpred(dir, &["annotate", "--words", "nope.tsv", "--out", "a.tsv"]);
    assert_eq!(out.status.code(), Some(1));

    ok(
        dir,
        &[
            "annotate",
            "--words",
            "study/words.tsv",
            "--out",
            "annotated.tsv",
        ],
    );
    let header = fs::read_to_string(dir.join("annotated.tsv")).unwrap();
    assert!(header.lines().next().unwrap().contains("len_freq"));
}

#[test]
fn non_convergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    ok(
        dir,
        &[
            "assemble",
            "--words",
            "study/words.tsv",
            "--fixations",
            "study/fixations.tsv",
            "--cloze",
            "study/cloze.tsv",
            "--out",
            "ds.tsv",
        ],
    );
    let out = readpred(
        dir,
        &[
            "fit",
            "--dataset",
            "ds.tsv",
            "--out",
            "f.json",
            "--max-evals",
            "4",
            "--restarts",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("f.json")).unwrap()).unwrap();
    assert_eq!(fit["converged"], false);
}
