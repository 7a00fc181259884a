//! Evaluation metrics and report files.
//!
//! Ties in argmax and top-k rankings go to the lower class index.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `k x k` counts; rows are actual classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn row(&self, actual: usize) -> &[u64] {
        &self.counts[actual * self.k..(actual + 1) * self.k]
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        self.row(actual).iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|a| self.get(a, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&a, &p) in y_true.iter().zip(y_pred) {
        if a >= k || p >= k {
            return Err(Error::Data(format!(
                "label pair ({a}, {p}) out of range for {k} classes"
            )));
        }
        cm.counts[a * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// The class has no samples; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_report(cm: &ConfusionMatrix) -> ClassReport {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.row_sum(c);
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let total = cm.total();
    let avg = |f: &dyn Fn(&ClassMetrics) -> f64, weighted: bool| -> f64 {
        if weighted {
            if total == 0 {
                return 0.0;
            }
            per_class
                .iter()
                .map(|m| f(m) * m.support as f64)
                .sum::<f64>()
                / total as f64
        } else if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let averages = |weighted| Averages {
        precision: avg(&|m| m.precision, weighted),
        recall: avg(&|m| m.recall, weighted),
        f1: avg(&|m| m.f1, weighted),
        support: total,
    };
    ClassReport {
        macro_avg: averages(false),
        weighted_avg: averages(true),
        per_class,
        accuracy: cm.accuracy(),
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of `[n, k]` probabilities.
pub fn predictions<T: Element>(probs: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, _) = rows(probs)?;
    Ok((0..n).map(|i| argmax(probs.row(i))).collect())
}

fn rows<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.dims() {
        &[n, k] => Ok((n, k)),
        d => Err(Error::InvalidShape(format!(
            "expected [n, k] scores, got {d:?}"
        ))),
    }
}

fn check_labels(y_true: &[usize], n: usize, k: usize) -> Result<()> {
    if y_true.len() != n {
        return Err(Error::Data(format!("{} labels for {n} rows", y_true.len())));
    }
    if let Some(&y) = y_true.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Fraction of rows whose true class ranks among the `k` highest scores.
pub fn top_k_accuracy<T: Element>(probs: &Tensor<T>, y_true: &[usize], k: usize) -> Result<f64> {
    let (n, classes) = rows(probs)?;
    if k == 0 || k > classes {
        return Err(Error::Usage(format!(
            "top-k needs 1 <= k <= {classes}, got {k}"
        )));
    }
    check_labels(y_true, n, classes)?;
    if n == 0 {
        return Ok(0.0);
    }
    let hits = y_true
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = probs.row(i);
            let py = row[y];
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &p)| p > py || (p == py && j < y))
                .count();
            rank < k
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// One-vs-rest curve of one class. `auc` is `None` when the class has no
/// positives or no negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)` when defined.
    pub points: Vec<(f64, f64)>,
    /// Score threshold of each point; the first is `+inf`.
    pub thresholds: Vec<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub curves: Vec<RocCurve>,
    /// Mean over classes whose curve is defined.
    pub auc_macro: Option<f64>,
}

/// Threshold sweep over the distinct scores, highest first.
pub fn roc_curve(class: usize, scores: &[f64], positive: &[bool]) -> RocCurve {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let frac = |x: usize, d: usize| if d == 0 { 0.0 } else { x as f64 / d as f64 };
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((frac(fp, neg), frac(tp, pos)));
        thresholds.push(s);
    }
    let auc = (pos > 0 && neg > 0).then(|| {
        points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    });
    RocCurve {
        class,
        points,
        thresholds,
        auc,
    }
}

pub fn roc_auc<T: Element>(scores: &Tensor<T>, y_true: &[usize]) -> Result<RocReport> {
    let (n, k) = rows(scores)?;
    check_labels(y_true, n, k)?;
    let curves: Vec<RocCurve> = (0..k)
        .map(|c| {
            let s: Vec<f64> = (0..n).map(|i| scores.row(i)[c].widen()).collect();
            let pos: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
            roc_curve(c, &s, &pos)
        })
        .collect();
    let defined: Vec<f64> = curves.iter().filter_map(|c| c.auc).collect();
    let auc_macro =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(RocReport { curves, auc_macro })
}

/// One completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub optimizer: String,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Metrics per epoch. Wall-clock time is kept out so identical runs give
    /// identical files; see [`History::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("epoch,optimizer,train_accuracy,train_loss,val_accuracy,val_loss\n");
        let opt = |v: Option<f64>| v.map(fmt_g).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                csv_field(&r.optimizer),
                fmt_g(r.train_accuracy),
                fmt_g(r.train_loss),
                opt(r.val_accuracy),
                opt(r.val_loss)
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{}", r.epoch, fmt_g(r.seconds));
        }
        s
    }
}

/// Format with six significant digits in the style of C's `%g`.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{v:.*}", (5 - exp) as usize))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn confusion_csv(cm: &ConfusionMatrix, classes: &[String]) -> String {
    let mut s = String::from("actual");
    for c in classes {
        s.push(',');
        s.push_str(&csv_field(c));
    }
    s.push('\n');
    for (i, name) in classes.iter().enumerate().take(cm.num_classes()) {
        s.push_str(&csv_field(name));
        for v in cm.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn roc_csv(roc: &RocReport, classes: &[String]) -> String {
    let mut s = String::from("class,threshold,fpr,tpr\n");
    for c in &roc.curves {
        let name = csv_field(classes.get(c.class).map_or("", String::as_str));
        for (&(fpr, tpr), &t) in c.points.iter().zip(&c.thresholds) {
            let _ = writeln!(s, "{name},{},{},{}", fmt_g(t), fmt_g(fpr), fmt_g(tpr));
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassEntry {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub auc: Option<f64>,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// Serialized evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub loss: f64,
    pub per_class: Vec<PerClassEntry>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub auc_macro: Option<f64>,
}

impl EvaluationReport {
    pub fn new(classes: &[String], report: &ClassReport, roc: &RocReport, loss: f64) -> Self {
        let per_class = report
            .per_class
            .iter()
            .enumerate()
            .map(|(i, m)| PerClassEntry {
                class: classes.get(i).cloned().unwrap_or_else(|| i.to_string()),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support: m.support,
                auc: roc.curves.get(i).and_then(|c| c.auc),
                precision_undefined: m.precision_undefined,
                recall_undefined: m.recall_undefined,
            })
            .collect();
        EvaluationReport {
            accuracy: report.accuracy,
            loss,
            per_class,
            macro_avg: report.macro_avg.clone(),
            auc_macro: roc.auc_macro,
        }
    }
}

/// Fixed-width text table: one row per class, then accuracy, macro and
/// weighted averages, two decimals per metric.
pub fn render_report_table(classes: &[String], report: &ClassReport) -> String {
    let width = classes
        .iter()
        .map(|c| c.chars().count())
        .chain([12])
        .max()
        .unwrap_or(12);
    let mut s = format!(
        "{:>width$} {:>9} {:>9} {:>9} {:>9}\n\n",
        "", "precision", "recall", "f1-score", "support"
    );
    for (name, m) in classes.iter().zip(&report.per_class) {
        let _ = writeln!(
            s,
            "{name:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            m.precision, m.recall, m.f1, m.support
        );
    }
    s.push('\n');
    let total = report.macro_avg.support;
    let _ = writeln!(
        s,
        "{:>width$} {:>9} {:>9} {:>9.2} {:>9}",
        "accuracy", "", "", report.accuracy, total
    );
    for (label, a) in [
        ("macro avg", &report.macro_avg),
        ("weighted avg", &report.weighted_avg),
    ] {
        let _ = writeln!(
            s,
            "{label:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            a.precision, a.recall, a.f1, a.support
        );
    }
    let flagged: Vec<&str> = classes
        .iter()
        .zip(&report.per_class)
        .filter(|(_, m)| m.precision_undefined || m.recall_undefined)
        .map(|(c, _)| c.as_str())
        .collect();
    if !flagged.is_empty() {
        let _ = writeln!(
            s,
            "\nundefined metrics reported as 0 for: {}",
            flagged.join(", ")
        );
    }
    s
}

/// Files written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub table: PathBuf,
    pub confusion: PathBuf,
    pub roc: PathBuf,
    pub history: Option<PathBuf>,
}

/// Write `report.json`, `classification_report.txt`, `confusion.csv`,
/// `roc.csv` and, when given, `history.csv` plus `timing.csv`.
pub fn emit_report(
    out_dir: &Path,
    classes: &[String],
    report: &ClassReport,
    loss: f64,
    cm: &ConfusionMatrix,
    roc: &RocReport,
    history: Option<&History>,
) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir)?;
    let summary = EvaluationReport::new(classes, report, roc, loss);
    let mut json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?;
    json.push('\n');
    let files = ReportFiles {
        report: out_dir.join("report.json"),
        table: out_dir.join("classification_report.txt"),
        confusion: out_dir.join("confusion.csv"),
        roc: out_dir.join("roc.csv"),
        history: history.map(|_| out_dir.join("history.csv")),
    };
    std::fs::write(&files.report, json)?;
    std::fs::write(&files.table, render_report_table(classes, report))?;
    std::fs::write(&files.confusion, confusion_csv(cm, classes))?;
    std::fs::write(&files.roc, roc_csv(roc, classes))?;
    if let Some(h) = history {
        write_history(out_dir, h)?;
    }
    Ok(files)
}

/// Write `history.csv` and `timing.csv`.
pub fn write_history(out_dir: &Path, history: &History) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("history.csv"), history.to_csv())?;
    std::fs::write(out_dir.join("timing.csv"), history.timing_csv())?;
    Ok(())
}
