//! Contrastive losses over a single anchor: InfoNCE, RINCE, the exponential
//! symmetric loss and the generic "binary losses over pairs" objective.
//!
//! Every loss here takes scores that are already divided by the temperature.
//! Nothing in this module knows about encoders or temperatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One anchor's scores: a positive-pair score and `K >= 1` negative-pair scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatch {
    pub s_plus: f64,
    pub s_minus: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(s_plus: f64, s_minus: Vec<f64>) -> Result<Self> {
        let batch = Self { s_plus, s_minus };
        batch.validate()?;
        Ok(batch)
    }

    /// Number of negatives.
    pub fn k(&self) -> usize {
        self.s_minus.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_minus.is_empty() {
            return Err(Error::InvalidInput("score batch needs K >= 1 negatives".into()));
        }
        if !self.s_plus.is_finite() || self.s_minus.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("score batch contains a non-finite score".into()));
        }
        Ok(())
    }

    fn all_scores(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        std::iter::once(self.s_plus).chain(self.s_minus.iter().copied())
    }

    /// `log(e^{s+} + sum_i e^{s-_i})`.
    pub fn log_partition(&self) -> f64 {
        log_sum_exp(self.all_scores())
    }
}

/// Loss value together with its gradient with respect to every score.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_s_plus: f64,
    pub grad_s_minus: Vec<f64>,
}

/// RINCE hyper-parameters. `q` is the symmetry knob, `lambda` the density
/// weight; `q_start`/`q_end` are the endpoints of the optional linear q-warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RinceParams {
    pub q: f64,
    pub lambda: f64,
    #[serde(default = "default_q_start")]
    pub q_start: f64,
    #[serde(default = "default_q_end")]
    pub q_end: f64,
}

fn default_q_start() -> f64 {
    0.01
}

fn default_q_end() -> f64 {
    0.4
}

impl RinceParams {
    pub fn new(q: f64, lambda: f64) -> Result<Self> {
        let p = Self {
            q,
            lambda,
            q_start: default_q_start(),
            q_end: default_q_end(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_warmup(mut self, q_start: f64, q_end: f64) -> Result<Self> {
        self.q_start = q_start;
        self.q_end = q_end;
        self.validate()?;
        Ok(self)
    }

    /// Same parameters with a different `q` (used by the warmup schedule).
    pub fn at_q(self, q: f64) -> Result<Self> {
        let p = Self { q, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x <= 1.0;
        if !in_unit(self.q) {
            return Err(Error::InvalidParameter(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !in_unit(self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !in_unit(self.q_start) || !in_unit(self.q_end) || self.q_start > self.q_end {
            return Err(Error::InvalidParameter(format!(
                "warmup endpoints must satisfy 0 < q_start <= q_end <= 1, got ({}, {})",
                self.q_start, self.q_end
            )));
        }
        Ok(())
    }
}

impl Default for RinceParams {
    fn default() -> Self {
        Self {
            q: 0.5,
            lambda: 0.01,
            q_start: default_q_start(),
            q_end: default_q_end(),
        }
    }
}

/// Numerically stable `log(sum(exp(x)))`. Returns `-inf` for an empty input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// InfoNCE, `-log(e^{s+} / (e^{s+} + sum e^{s-}))`, with its score gradient.
pub fn info_nce_with_grad(batch: &ScoreBatch) -> Result<LossResult> {
    batch.validate()?;
    let lse = batch.log_partition();
    let max_neg = batch.s_minus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // When the positive dominates, lse - s+ cancels catastrophically; the
    // log1p form keeps tiny losses accurate.
    let value = if batch.s_plus >= max_neg {
        batch
            .s_minus
            .iter()
            .map(|s| (s - batch.s_plus).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        lse - batch.s_plus
    };
    let p_plus = (batch.s_plus - lse).exp();
    Ok(LossResult {
        value,
        grad_s_plus: p_plus - 1.0,
        grad_s_minus: batch.s_minus.iter().map(|s| (s - lse).exp()).collect(),
    })
}

/// RINCE, `-e^{q s+}/q + (lambda (e^{s+} + sum e^{s-}))^q / q`, with its score
/// gradient.
///
/// The power term is evaluated as `exp(q (ln lambda + lse))` and the two
/// `1/q`-sized terms are combined through `expm1`, which keeps the value
/// accurate as `q -> 0` where both terms individually blow up.
pub fn rince_with_grad(batch: &ScoreBatch, params: &RinceParams) -> Result<LossResult> {
    batch.validate()?;
    params.validate()?;
    let q = params.q;
    let lse = batch.log_partition();
    let log_power = params.lambda.ln() + lse;
    let value = ((q * log_power).exp_m1() - (q * batch.s_plus).exp_m1()) / q;
    // d/ds_j (lambda * Z)^q / q = (lambda Z)^q * softmax_j
    let power = (q * log_power).exp();
    Ok(LossResult {
        value,
        grad_s_plus: -(q * batch.s_plus).exp() + power * (batch.s_plus - lse).exp(),
        grad_s_minus: batch.s_minus.iter().map(|s| power * (s - lse).exp()).collect(),
    })
}

/// The q = 1 form written out directly: `-(1 - lambda) e^{s+} + lambda sum e^{s-}`.
pub fn rince_q1_closed_form(batch: &ScoreBatch, lambda: f64) -> f64 {
    -(1.0 - lambda) * batch.s_plus.exp() + lambda * batch.s_minus.iter().map(|s| s.exp()).sum::<f64>()
}

/// Binary label of a pair: positive (related views) or negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    pub fn from_sign(y: f64) -> Self {
        if y >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

/// Exponential loss `l(s, y) = -y e^s` and its derivative in `s`.
pub fn exp_loss(s: f64, y: Label) -> Result<(f64, f64)> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("score {s} is not finite")));
    }
    let v = -y.sign() * s.exp();
    Ok((v, v))
}

/// A binary classification loss `l(s, y)` with its derivative in `s`.
#[derive(Debug, Clone, Copy)]
pub enum BinaryLoss {
    /// `-y e^s`; symmetric with constant 0.
    Exponential,
    /// `log(1 + e^{-y s})`; not symmetric.
    Logistic,
    /// The per-pair terms of InfoNCE with the rest of the partition function
    /// frozen at `exp(log_partition)`: the positive term is
    /// `-log(e^s / (e^s + Z))` and the negative term `-log(1 - e^s / (e^s + Z))`.
    InfoNceInduced { log_partition: f64 },
    /// Caller-supplied loss.
    Custom {
        name: &'static str,
        value: fn(f64, Label) -> f64,
        grad: fn(f64, Label) -> f64,
    },
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl BinaryLoss {
    pub fn name(&self) -> &'static str {
        match self {
            BinaryLoss::Exponential => "exponential",
            BinaryLoss::Logistic => "logistic",
            BinaryLoss::InfoNceInduced { .. } => "infonce-induced",
            BinaryLoss::Custom { name, .. } => name,
        }
    }

    pub fn value(&self, s: f64, y: Label) -> f64 {
        let ys = y.sign() * s;
        match *self {
            BinaryLoss::Exponential => -y.sign() * s.exp(),
            BinaryLoss::Logistic => softplus(-ys),
            BinaryLoss::InfoNceInduced { log_partition } => match y {
                Label::Pos => softplus(log_partition - s),
                Label::Neg => softplus(s - log_partition),
            },
            BinaryLoss::Custom { value, .. } => value(s, y),
        }
    }

    pub fn grad(&self, s: f64, y: Label) -> f64 {
        match *self {
            BinaryLoss::Exponential => -y.sign() * s.exp(),
            BinaryLoss::Logistic => -y.sign() * sigmoid(-y.sign() * s),
            BinaryLoss::InfoNceInduced { log_partition } => match y {
                Label::Pos => -sigmoid(log_partition - s),
                Label::Neg => sigmoid(s - log_partition),
            },
            BinaryLoss::Custom { grad, .. } => grad(s, y),
        }
    }
}

/// `l(s+, 1) + lambda * sum_i l(s-_i, -1)`.
///
/// With the exponential loss this differs from RINCE at q = 1 only in the
/// positive coefficient: `rince_q1 = symmetric_objective + lambda e^{s+}`.
pub fn symmetric_objective(batch: &ScoreBatch, lambda: f64, loss: &BinaryLoss) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    batch.validate()?;
    let negatives: f64 = batch.s_minus.iter().map(|&s| loss.value(s, Label::Neg)).sum();
    Ok(loss.value(batch.s_plus, Label::Pos) + lambda * negatives)
}

/// Linear q schedule: `q_start + progress (q_end - q_start)`.
pub fn q_warmup(progress: f64, params: &RinceParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::InvalidParameter(format!(
            "warmup progress must lie in [0, 1], got {progress}"
        )));
    }
    Ok(params.q_start + progress * (params.q_end - params.q_start))
}

/// Largest deviations from the symmetry condition over `points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryResidual {
    /// max |(l(s,1) + l(s,-1)) - median of that sum over the points|
    pub value: f64,
    /// max |dl(s,1)/ds + dl(s,-1)/ds|
    pub grad: f64,
}

pub fn symmetry_residual(loss: &BinaryLoss, points: &[f64]) -> Result<SymmetryResidual> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("symmetry check needs at least two sample points".into()));
    }
    let sums: Vec<f64> = points
        .iter()
        .map(|&s| loss.value(s, Label::Pos) + loss.value(s, Label::Neg))
        .collect();
    let centre = median(&sums);
    let value = sums.iter().map(|v| (v - centre).abs()).fold(0.0, f64::max);
    let grad = points
        .iter()
        .map(|&s| (loss.grad(s, Label::Pos) + loss.grad(s, Label::Neg)).abs())
        .fold(0.0, f64::max);
    Ok(SymmetryResidual { value, grad })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
