//! Train the desk network on a generated five-color corpus with a hybrid
//! Adam then SGD schedule, evaluate the held-out split and classify one file
//! from the reloaded checkpoint.

use mbclassify::dataset::{split, Loader, SplitConfig};
use mbclassify::metrics::{emit_report, render_report_table};
use mbclassify::nn::{build_network, load_checkpoint, NetworkSpec};
use mbclassify::optim::{Schedule, Segment};
use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};
use mbclassify::trainer::{evaluate, fit, predict, CheckpointTarget, ProgressPrinter, TrainConfig};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    let synth = SyntheticConfig {
        per_class: 60,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let index = write_synthetic_dataset(&data, &synth)?;
    let split_cfg = SplitConfig {
        seed: 4,
        ..SplitConfig::default()
    };
    let (train, val) = split(&index.samples, &split_cfg)?;
    println!("{} training / {} validation images", train.len(), val.len());

    let spec = NetworkSpec::desk();
    let (net, mut store) = build_network::<f32>(&spec, 4)?;
    let mut train = Loader::new(train, (64, 64), true);
    let mut val = Loader::new(val, (64, 64), true);

    let mut cfg = TrainConfig::new(Schedule::new(vec![Segment::adam(3), Segment::sgd(2)])?, 4);
    cfg.batch_size = 16;
    let ckpt = dir.path().join("run/checkpoint.dsqc");
    cfg.checkpoint = Some(CheckpointTarget {
        path: ckpt.clone(),
        init_seed: 4,
        classes: index.classes.clone(),
        split: Some(split_cfg),
    });
    let outcome = fit(
        &net,
        &mut store,
        &mut train,
        Some(&mut val),
        &cfg,
        &mut ProgressPrinter,
    )?;
    print!("{}", outcome.history.to_csv());

    let loaded = load_checkpoint::<f32>(&ckpt)?;
    let eval = evaluate(&loaded.network, &loaded.store, &mut val, 32)?;
    println!(
        "validation accuracy {:.4} loss {:.4}",
        eval.accuracy, eval.loss
    );
    print!("{}", render_report_table(&index.classes, &eval.report));
    let files = emit_report(
        &dir.path().join("run"),
        &index.classes,
        &eval.report,
        eval.loss,
        &eval.confusion,
        &eval.roc,
        Some(&outcome.history),
    )?;
    println!("wrote {}", files.report.display());

    let sample = &index.samples[0];
    let p = predict(
        &loaded.network,
        &loaded.store,
        &loaded.header.classes,
        &sample.image_path,
    )?;
    println!(
        "{} -> {} (true {}) p = {:.3?}",
        sample.image_path.display(),
        p.class_name,
        sample.class_name,
        p.probabilities
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
