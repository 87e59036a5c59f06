//! Positive scores as a noise detector.

use serde::Serialize;

use crate::data::PairBatch;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditResult {
    pub mean_clean: f64,
    pub mean_noisy: f64,
    /// AUROC of `-s+` as a detector of the noise flag.
    pub auroc: f64,
}

/// `<f(x_i), f(v_i)> / t` for every pair of the batch.
pub fn positive_scores(enc: &MlpEncoder, batch: &PairBatch) -> Result<Vec<f64>> {
    let a = enc.embed(&batch.anchors)?;
    let v = enc.embed(&batch.views)?;
    let t = enc.temperature();
    Ok(a.vectors
        .iter_rows()
        .zip(v.vectors.iter_rows())
        .map(|(x, y)| dot(x, y) / t)
        .collect())
}

/// Probability that a random noisy pair scores below a random clean pair,
/// ties counted half (the Mann-Whitney statistic, computed from mid-ranks).
pub fn auroc_low_is_positive(scores: &[f64], flags: &[bool]) -> Result<f64> {
    if scores.len() != flags.len() {
        return Err(Error::InvalidInput("score and flag counts differ".into()));
    }
    let n_pos = flags.iter().filter(|&&f| f).count();
    let n_neg = flags.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientClasses(format!(
            "need both noisy and clean pairs, got {n_pos} noisy and {n_neg} clean"
        )));
    }
    // rank -s so that "high" means "flagged"
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| (-scores[a]).total_cmp(&(-scores[b])));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(flags).filter(|(_, &f)| f).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn positive_score_audit(enc: &MlpEncoder, batch: &PairBatch) -> Result<AuditResult> {
    let s = positive_scores(enc, batch)?;
    let auroc = auroc_low_is_positive(&s, &batch.noise_flags)?;
    let mean = |want: bool| {
        let (sum, n) = s
            .iter()
            .zip(&batch.noise_flags)
            .filter(|(_, &f)| f == want)
            .fold((0.0, 0usize), |(a, n), (v, _)| (a + v, n + 1));
        sum / n as f64
    };
    Ok(AuditResult {
        mean_clean: mean(false),
        mean_noisy: mean(true),
        auroc,
    })
}
