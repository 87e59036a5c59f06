//! Linear evaluation of frozen features: multinomial logistic regression by
//! full-batch gradient descent with Armijo backtracking.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (not the biases).
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop once the gradient norm drops to this value.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Fraction of the samples used for fitting; the rest is held out.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_l2() -> f64 {
    1e-4
}

fn default_max_iter() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-5
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: default_l2(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Held-out top-1 accuracy.
    pub accuracy: f64,
    /// Held-out accuracy per class; `None` for a class absent from the split.
    pub per_class: Vec<Option<f64>>,
    /// `classes x (dim + 1)`, bias in the last column.
    pub weights: Matrix,
    /// Training objective after each iteration (index 0 is the start point).
    pub loss_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Fit on a seeded 80/20 split of `features` and report held-out accuracy.
pub fn linear_probe(features: &Matrix, labels: &[usize], config: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    if features.rows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidInput("linear probe needs at least two classes".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::InvalidParameter("train_fraction must lie in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut substream(seed, Stream::ProbeSplit));
    let n_train = ((labels.len() as f64) * config.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, labels.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let x_train = features.select_rows(train_idx);
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let fit = fit_softmax(&x_train, &y_train, classes, config);

    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for &i in test_idx {
        let pred = predict(&fit.weights, features.row(i));
        counts[labels[i]] += 1;
        if pred == labels[i] {
            hits[labels[i]] += 1;
        }
    }
    let total_hits: usize = hits.iter().sum();
    Ok(ProbeResult {
        accuracy: total_hits as f64 / test_idx.len() as f64,
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
            .collect(),
        weights: fit.weights,
        loss_trace: fit.loss_trace,
        grad_norm: fit.grad_norm,
        iterations: fit.iterations,
    })
}

struct Fit {
    weights: Matrix,
    loss_trace: Vec<f64>,
    grad_norm: f64,
    iterations: usize,
}

fn logits(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..w.rows())
        .map(|c| {
            let row = w.row(c);
            row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[d]
        })
        .collect()
}

fn predict(w: &Matrix, x: &[f64]) -> usize {
    let z = logits(w, x);
    // first maximum wins, so ties break deterministically
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Mean cross-entropy plus `l2/2 ||W||^2`, and optionally its gradient.
fn objective(w: &Matrix, x: &Matrix, y: &[usize], l2: f64, grad: Option<&mut Matrix>) -> f64 {
    let d = x.cols();
    let n = x.rows() as f64;
    let mut total = 0.0;
    let mut g = grad;
    if let Some(g) = g.as_deref_mut() {
        g.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    }
    for (row, &label) in x.iter_rows().zip(y) {
        let z = logits(w, row);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[label];
        if let Some(g) = g.as_deref_mut() {
            for (c, zc) in z.iter().enumerate() {
                let p = (zc - lse).exp() - if c == label { 1.0 } else { 0.0 };
                let gr = g.row_mut(c);
                for (gv, xv) in gr[..d].iter_mut().zip(row) {
                    *gv += p * xv / n;
                }
                gr[d] += p / n;
            }
        }
    }
    let mut penalty = 0.0;
    for c in 0..w.rows() {
        let row = w.row(c);
        penalty += row[..d].iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = g.as_deref_mut() {
            for (gv, wv) in g.row_mut(c)[..d].iter_mut().zip(&row[..d]) {
                *gv += l2 * wv;
            }
        }
    }
    total / n + 0.5 * l2 * penalty
}

fn fit_softmax(x: &Matrix, y: &[usize], classes: usize, config: &ProbeConfig) -> Fit {
    let d = x.cols();
    let mut w = Matrix::zeros(classes, d + 1);
    let mut g = Matrix::zeros(classes, d + 1);
    let mut loss = objective(&w, x, y, config.l2, Some(&mut g));
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut grad_norm = g.frobenius_norm();
    while iterations < config.max_iter && grad_norm > config.tol {
        let g2 = grad_norm * grad_norm;
        // Armijo backtracking; try a larger step first so easy problems move fast
        step *= 2.0;
        let mut accepted = None;
        while step > 1e-12 {
            let mut cand = w.clone();
            cand.as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .for_each(|(c, gv)| *c -= step * gv);
            let l = objective(&cand, x, y, config.l2, None);
            if l <= loss - 0.5 * step * g2 {
                accepted = Some((cand, l));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, l)) = accepted else { break };
        w = cand;
        loss = objective(&w, x, y, config.l2, Some(&mut g));
        debug_assert!((loss - l).abs() <= 1e-9 * l.abs().max(1.0));
        trace.push(loss);
        grad_norm = g.frobenius_norm();
        iterations += 1;
    }
    Fit {
        weights: w,
        loss_trace: trace,
        grad_norm,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian;

    fn blobs(n: usize, classes: usize, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = substream(seed, Stream::Data);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % classes;
            let mut r = vec![0.0; classes];
            r[c] = 3.0;
            r.iter_mut().for_each(|v| *v += spread * gaussian(&mut rng));
            rows.push(r);
            labels.push(c);
        }
        (Matrix::from_rows(&rows), labels)
    }

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let (x, y) = blobs(200, 2, 0.3, 1);
        let r = linear_probe(&x, &y, &ProbeConfig::default(), 7).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn loss_never_increases() {
        let (x, y) = blobs(150, 3, 2.0, 2);
        let r = linear_probe(&x, &y, &ProbeConfig::default(), 3).unwrap();
        assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.loss_trace.len() > 2);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::zeros(4, 2);
        assert!(matches!(
            linear_probe(&x, &[1, 1, 1, 1], &ProbeConfig::default(), 0),
            Err(Error::InvalidInput(_))
        ));
    }
}
