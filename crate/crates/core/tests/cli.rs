use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mbclassify"));
    c.env_remove("MBCLASSIFY_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(schedule: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_dataset(
        &data,
        &SyntheticConfig {
            per_class: 8,
            seed: 3,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("dataset = \"data\"\npreset = \"desk\"\nseed = 3\n\n[train]\nbatch_size = 8\n{schedule}"),
    )
    .unwrap();
    Fixture { dir, data, config }
}

const SGD_THEN_ADAM: &str = "\n[[train.schedule]]\noptimizer = \"sgd\"\nepochs = 3\n\n[[train.schedule]]\noptimizer = \"adam\"\nepochs = 2\n";

#[test]
fn train_evaluate_predict_round_trip() {
    let f = fixture(SGD_THEN_ADAM);
    let out = f.dir.path().join("out");
    let o = run(&["train", "--config", p(&f.config), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = out.join("checkpoint.dsqc");
    assert!(ckpt.exists());

    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let labels: Vec<&str> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(labels, ["sgd", "sgd", "sgd", "adam", "adam"]);
    for name in [
        "report.json",
        "confusion.csv",
        "roc.csv",
        "classification_report.txt",
        "timing.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }

    // Validation subset reproduces the final validation accuracy of fit.
    let last = history.lines().last().unwrap();
    let val_acc: f64 = last.split(',').nth(4).unwrap().parse().unwrap();
    let eval_out = f.dir.path().join("eval");
    let o = run(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&f.data),
        "--subset",
        "validation",
        "--out",
        p(&eval_out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reported: f64 = stdout(&o)
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((reported - val_acc).abs() < 1e-6, "{reported} vs {val_acc}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["accuracy"].as_f64().unwrap(), reported);

    let image = f.data.join(
        std::fs::read_dir(&f.data)
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .file_name(),
    );
    let image = std::fs::read_dir(image)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let o = run(&["predict", "--checkpoint", p(&ckpt), p(&image)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[0].rsplitn(7, ' ').collect();
    let probs: f64 = fields[1..6].iter().map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((probs - 1.0).abs() < 1e-4);
    assert!(lines[1].starts_with("summary images=1 ok=1 failed=0 mean_ms="));

    let missing = f.dir.path().join("missing.png");
    let o = run(&["predict", "--checkpoint", p(&ckpt), p(&image), p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().contains("error"));
}

#[test]
fn identical_runs_write_identical_files() {
    let f = fixture("\n[[train.schedule]]\noptimizer = \"adam\"\nepochs = 2\n");
    let (a, b) = (f.dir.path().join("a"), f.dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", p(&f.config), "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in [
        "checkpoint.dsqc",
        "history.csv",
        "report.json",
        "confusion.csv",
        "roc.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn output_directory_from_environment() {
    let f = fixture("\n[[train.schedule]]\noptimizer = \"adam\"\nepochs = 1\n");
    let env_out = f.dir.path().join("from_env");
    let o = bin()
        .args(["train", "--config", p(&f.config)])
        .env("MBCLASSIFY_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_out.join("checkpoint.dsqc").exists());
}

#[test]
fn malformed_config_exits_2_with_line() {
    let f = fixture("");
    std::fs::write(&f.config, "seed = 1\n[train]\nbatch_size = \"many\"\n").unwrap();
    let o = run(&["train", "--config", p(&f.config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    std::fs::write(&f.config, "seed = 1\ncolour = \"red\"\n").unwrap();
    let o = run(&["train", "--config", p(&f.config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    assert_eq!(
        run(&["train", "--config", "/nonexistent/run.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numeric_abort_exits_3() {
    let f =
        fixture("\n[[train.schedule]]\noptimizer = \"sgd\"\nepochs = 1\nlearning_rate = 1e30\n");
    let o = run(&[
        "train",
        "--config",
        p(&f.config),
        "--out",
        p(&f.dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1"));
}

#[test]
fn checkpoint_and_data_errors() {
    let f = fixture("\n[[train.schedule]]\noptimizer = \"adam\"\nepochs = 1\n");
    let out = f.dir.path().join("out");
    assert_eq!(
        run(&["train", "--config", p(&f.config), "--out", p(&out)])
            .status
            .code(),
        Some(0)
    );
    let ckpt = out.join("checkpoint.dsqc");

    // Four classes against a five-class checkpoint.
    let four = f.dir.path().join("four");
    write_synthetic_dataset(
        &four,
        &SyntheticConfig {
            classes: 4,
            per_class: 2,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let o = run(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&four),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let empty = f.dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&empty),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let junk = f.dir.path().join("junk.dsqc");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(
        run(&["inspect", "--checkpoint", p(&junk)]).status.code(),
        Some(4)
    );
    assert_eq!(
        run(&["predict", "--checkpoint", p(&junk), p(&junk)])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn inspect_presets() {
    let o = run(&["inspect", "--preset", "fidelity-b3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("Trainable params: 7685 "), "{text}");
    assert!(text.contains("Total params: 12015913 "));
    let dense = text.lines().find(|l| l.starts_with("dense")).unwrap();
    assert!(dense.contains("(None, 5)"), "{dense}");
    assert_eq!(stdout(&run(&["inspect", "--preset", "fidelity-b3"])), text);

    let desk = stdout(&run(&["inspect", "--preset", "desk"]));
    assert!(desk.contains("Total params: 3569 "));
    assert!(desk.contains("Trainable params: 3569 "));
    assert!(desk.contains("Non-trainable params: 0 "));

    assert_eq!(run(&["inspect", "--preset", "b9"]).status.code(), Some(2));
}
