//! Confusion matrix, per-class report, top-k and one-vs-rest ROC for a small
//! hand-written set of predictions, plus the files an evaluation run writes.

use mbclassify::metrics::{
    class_report, confusion, emit_report, predictions, render_report_table, roc_auc, top_k_accuracy,
};
use mbclassify::optim::scce_loss;
use mbclassify::Tensor;

pub fn run_example() -> anyhow::Result<()> {
    let classes: Vec<String> = ["healthy", "rust", "blight"].map(String::from).to_vec();
    let y_true = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
    #[rustfmt::skip]
    let probs = Tensor::new(vec![10, 3], vec![
        0.8, 0.1, 0.1,
        0.6, 0.3, 0.1,
        0.4, 0.5, 0.1,
        0.7, 0.2, 0.1,
        0.2, 0.7, 0.1,
        0.1, 0.8, 0.1,
        0.3, 0.3, 0.4,
        0.1, 0.2, 0.7,
        0.2, 0.1, 0.7,
        0.3, 0.2, 0.5,
    ])?;

    let y_pred = predictions(&probs)?;
    let cm = confusion(&y_true, &y_pred, 3)?;
    println!("confusion (rows actual, columns predicted):");
    for (c, name) in classes.iter().enumerate() {
        println!("  {name:<8} {:?}", cm.row(c));
    }
    let report = class_report(&cm);
    print!("{}", render_report_table(&classes, &report));

    for k in 1..=3 {
        println!(
            "top-{k} accuracy {:.2}",
            top_k_accuracy(&probs, &y_true, k)?
        );
    }
    let roc = roc_auc(&probs, &y_true)?;
    for curve in &roc.curves {
        println!(
            "{} AUC {:.4} over {} thresholds",
            classes[curve.class],
            curve.auc.unwrap_or(f64::NAN),
            curve.thresholds.len()
        );
    }
    let loss = scce_loss(&probs, &y_true)?;
    println!("loss {loss:.6}");

    let uniform = Tensor::full(vec![4, 5], 0.2f64)?;
    println!(
        "uniform 5-way loss {:.9} (ln 5 = {:.9})",
        scce_loss(&uniform, &[0, 1, 2, 3])?,
        5f64.ln()
    );

    let dir = tempfile::tempdir()?;
    let files = emit_report(dir.path(), &classes, &report, loss, &cm, &roc, None)?;
    println!("{}", std::fs::read_to_string(&files.confusion)?);
    println!("{}", std::fs::read_to_string(&files.report)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
