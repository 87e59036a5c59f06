//! Batch-level contrastive objective: encoder -> scores -> per-anchor losses
//! -> batch mean, and the reverse path back to encoder parameters.

use serde::{Deserialize, Serialize};

use crate::encoder::{
    assemble_score_batches, pair_score_matrix, self_score_backward, two_view_pairing, MlpEncoder,
    NegativeMode,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{info_nce_with_grad, rince_with_grad, LossResult, RinceParams, ScoreBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContrastiveLoss {
    InfoNce,
    Rince(RinceParams),
}

impl ContrastiveLoss {
    pub fn evaluate(&self, batch: &ScoreBatch) -> Result<LossResult> {
        match self {
            ContrastiveLoss::InfoNce => info_nce_with_grad(batch),
            ContrastiveLoss::Rince(p) => rince_with_grad(batch, p),
        }
    }
}

/// Mean loss over anchors and its gradient with respect to every entry of
/// the score matrix it was computed from.
#[derive(Debug, Clone)]
pub struct ScoreObjective {
    pub loss: f64,
    pub grad_scores: Matrix,
    /// Positive score of each anchor, in anchor order.
    pub positive_scores: Vec<f64>,
}

/// Mean loss over all anchors of a score matrix with index-based masking.
pub fn masked_objective(
    scores: &Matrix,
    partner: &[usize],
    mode: NegativeMode,
    loss: &ContrastiveLoss,
) -> Result<ScoreObjective> {
    let anchors = assemble_score_batches(scores, partner, mode)?;
    let scale = 1.0 / anchors.len() as f64;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let mut total = 0.0;
    let mut positive_scores = Vec::with_capacity(anchors.len());
    for a in &anchors {
        let r = loss.evaluate(&a.batch)?;
        total += r.value;
        grad[(a.anchor, a.positive)] += scale * r.grad_s_plus;
        for (&j, g) in a.negatives.iter().zip(&r.grad_s_minus) {
            grad[(a.anchor, j)] += scale * g;
        }
        positive_scores.push(a.batch.s_plus);
    }
    Ok(ScoreObjective {
        loss: total * scale,
        grad_scores: grad,
        positive_scores,
    })
}

/// InfoNCE over a two-view score matrix where the self-pair is "removed" by
/// subtracting `e^{1/t}` from the full row sum instead of being masked out:
/// `-s_{i,p} + log(sum_j e^{s_ij} - e^{1/t})`.
///
/// The value matches the masked loss whenever every self-score equals `1/t`,
/// but the diagonal entries still receive gradient.
pub fn subtract_constant_info_nce(scores: &Matrix, partner: &[usize], t: f64) -> Result<ScoreObjective> {
    let rows = scores.rows();
    if rows != scores.cols() || partner.len() != rows || rows % 2 != 0 {
        return Err(Error::InvalidInput("expected a square two-view score matrix".into()));
    }
    if rows / 2 < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: rows / 2 });
    }
    let scale = 1.0 / rows as f64;
    let self_sim = (1.0 / t).exp();
    let mut grad = Matrix::zeros(rows, rows);
    let mut total = 0.0;
    let mut positive_scores = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = scores.row(i);
        let denom = row.iter().map(|s| s.exp()).sum::<f64>() - self_sim;
        let p = partner[i];
        total += denom.ln() - row[p];
        for (j, s) in row.iter().enumerate() {
            grad[(i, j)] += scale * s.exp() / denom;
        }
        grad[(i, p)] -= scale;
        positive_scores.push(row[p]);
    }
    Ok(ScoreObjective {
        loss: total * scale,
        grad_scores: grad,
        positive_scores,
    })
}

/// How the negative set is built for a batch of `N` (anchor, view) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    /// Index mask over all `2N` views (`K = 2N - 2`).
    #[default]
    TwoView,
    /// Anchors against views only (`K = N - 1`).
    OneSided,
    /// Two-view InfoNCE with the subtract-`e^{1/t}` self-pair removal.
    SubtractConstant,
}

/// Result of evaluating the full objective on one pair batch.
#[derive(Debug, Clone)]
pub struct EncoderObjective {
    pub loss: f64,
    /// Gradient in [`MlpEncoder::params`] order.
    pub grad: Vec<f64>,
    /// `<f(x_i), f(v_i)> / t` for each of the `N` pairs.
    pub positive_scores: Vec<f64>,
}

/// Mean contrastive loss of an encoder on `N` (anchor, view) pairs and its
/// gradient with respect to all encoder parameters.
pub fn encoder_objective(
    enc: &MlpEncoder,
    anchors: &Matrix,
    views: &Matrix,
    loss: &ContrastiveLoss,
    masking: Masking,
) -> Result<EncoderObjective> {
    if anchors.rows() != views.rows() {
        return Err(Error::InvalidInput(format!(
            "{} anchors but {} views",
            anchors.rows(),
            views.rows()
        )));
    }
    let n = anchors.rows();
    let t = enc.temperature();
    let (emb, cache) = enc.forward(&anchors.vstack(views))?;
    let full = pair_score_matrix(&emb, &emb, t)?;

    let (objective, grad_full) = match masking {
        Masking::TwoView => {
            let o = masked_objective(&full, &two_view_pairing(n), NegativeMode::TwoView, loss)?;
            let g = o.grad_scores.clone();
            (o, g)
        }
        Masking::SubtractConstant => {
            if !matches!(loss, ContrastiveLoss::InfoNce) {
                return Err(Error::InvalidParameter(
                    "subtract-constant masking is only defined for InfoNCE".into(),
                ));
            }
            let o = subtract_constant_info_nce(&full, &two_view_pairing(n), t)?;
            let g = o.grad_scores.clone();
            (o, g)
        }
        Masking::OneSided => {
            let mut block = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    block[(i, j)] = full[(i, n + j)];
                }
            }
            let partner: Vec<usize> = (0..n).collect();
            let o = masked_objective(&block, &partner, NegativeMode::OneSided, loss)?;
            let mut g = Matrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, n + j)] = o.grad_scores[(i, j)];
                }
            }
            (o, g)
        }
    };

    let grad_emb = self_score_backward(&emb.vectors, &grad_full, t);
    let grad = enc.backward(&cache, &grad_emb)?;
    let positive_scores = objective.positive_scores[..n].to_vec();
    Ok(EncoderObjective {
        loss: objective.loss,
        grad,
        positive_scores,
    })
}
