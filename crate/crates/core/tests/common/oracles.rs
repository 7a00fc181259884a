//! Brute-force reference implementations of the evaluation metrics.

use mbclassify::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub k: usize,
    pub y_true: Vec<usize>,
    pub scores: Tensor<f64>,
}

/// Random labels and scores; scores are quantized so ties are common.
pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(2..=6);
    let n = rng.random_range(1..=200);
    let levels = rng.random_range(2..=40) as f64;
    let y_true = (0..n).map(|_| rng.random_range(0..k)).collect();
    let scores = Tensor::from_fn(vec![n, k], |_| {
        (rng.random::<f64>() * levels).floor() / levels
    })
    .unwrap();
    Instance { k, y_true, scores }
}

pub fn oracle_precision_recall(y_true: &[usize], y_pred: &[usize], c: usize) -> (f64, f64) {
    let tp = y_true
        .iter()
        .zip(y_pred)
        .filter(|&(&t, &p)| t == c && p == c)
        .count();
    let predicted = y_pred.iter().filter(|&&p| p == c).count();
    let actual = y_true.iter().filter(|&&t| t == c).count();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (div(tp, predicted), div(tp, actual))
}

pub fn oracle_top_k(scores: &Tensor<f64>, y_true: &[usize], k: usize) -> f64 {
    let kk = scores.dims()[1];
    let hits = y_true
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = scores.row(i);
            let mut order: Vec<usize> = (0..kk).collect();
            // Stable sort keeps the lower index first among equal scores.
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
            order[..k].contains(&y)
        })
        .count();
    hits as f64 / y_true.len() as f64
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn oracle_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|p| *p.1)
        .map(|p| *p.0)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|p| !*p.1)
        .map(|p| *p.0)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn column(t: &Tensor<f64>, c: usize) -> Vec<f64> {
    (0..t.dims()[0]).map(|i| t.row(i)[c]).collect()
}
