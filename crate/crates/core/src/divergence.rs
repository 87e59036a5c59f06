//! Dependency measures on embedded pairs: exact Wasserstein-1 between
//! discrete distributions over `(x, v)` pairs, the InfoNCE mutual-information
//! bound, Lipschitz bounds for the projection head, and an empirical check of
//! the RINCE(q = 1) <= Lipschitz-scaled WDM inequality, clean and under
//! mixture noise.

use rand::Rng as _;
use serde::Serialize;

use crate::data::{derangement, sample_pair_batch, Dataset, NoiseKind, NoiseSpec};
use crate::encoder::{Dense, MlpEncoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, euclidean, norm, spectral_norm, Matrix};
use crate::loss::{info_nce_with_grad, RinceParams, ScoreBatch};
use crate::ot::{solve_transport, TransportSolution};
use crate::rng::{substream, Stream};

/// Weighted point cloud of `(x, v)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    xs: Matrix,
    vs: Matrix,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(xs: Matrix, vs: Matrix, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("support is empty".into()));
        }
        if xs.rows() != weights.len() || vs.rows() != weights.len() {
            return Err(Error::InvalidDistribution("support and weight counts differ".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { xs, vs, weights })
    }

    /// Equal weight on every row.
    pub fn uniform(xs: Matrix, vs: Matrix) -> Result<Self> {
        let n = xs.rows();
        if n == 0 {
            return Err(Error::InvalidDistribution("support is empty".into()));
        }
        Self::new(xs, vs, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> (&[f64], &[f64]) {
        (self.xs.row(i), self.vs.row(i))
    }
}

/// Transport plan with its marginal residuals.
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    pub matrix: Matrix,
    pub row_residual: f64,
    pub col_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Wasserstein {
    pub value: f64,
    pub plan: CouplingPlan,
    pub duality_gap: f64,
    pub slackness_residual: f64,
}

/// Ground cost `|x - x'| + |v - v'|`.
pub fn pair_cost(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
    euclidean(a.0, b.0) + euclidean(a.1, b.1)
}

pub fn wasserstein1_exact(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<Wasserstein> {
    let mut cost = Matrix::zeros(mu.len(), nu.len());
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            cost[(i, j)] = pair_cost(mu.point(i), nu.point(j));
        }
    }
    let TransportSolution {
        cost: value,
        plan,
        duality_gap,
        slackness_residual,
        ..
    } = solve_transport(&mu.weights, &nu.weights, &cost)?;
    let row_residual = (0..mu.len())
        .map(|i| (plan.row(i).iter().sum::<f64>() - mu.weights[i]).abs())
        .fold(0.0, f64::max);
    let col_residual = (0..nu.len())
        .map(|j| ((0..mu.len()).map(|i| plan[(i, j)]).sum::<f64>() - nu.weights[j]).abs())
        .fold(0.0, f64::max);
    Ok(Wasserstein {
        value,
        plan: CouplingPlan {
            matrix: plan,
            row_residual,
            col_residual,
        },
        duality_gap,
        slackness_residual,
    })
}

/// `-mean(InfoNCE) + ln(K + 1)` over batches that all share the same `K`.
///
/// `K + 1` is the number of candidates each anchor scores (one positive plus
/// `K` negatives), so independent pairs give ~0 and perfectly matched pairs
/// approach `ln(K + 1)`.
pub fn mi_lower_bound(batches: &[ScoreBatch]) -> Result<f64> {
    let k = batches
        .first()
        .ok_or_else(|| Error::InvalidInput("no score batches".into()))?
        .k();
    let mut total = 0.0;
    for b in batches {
        if b.k() != k {
            return Err(Error::InvalidInput(format!("mixed negative counts: {} and {}", k, b.k())));
        }
        total += info_nce_with_grad(b)?.value;
    }
    Ok(-total / batches.len() as f64 + ((k + 1) as f64).ln())
}

/// Product of operator 2-norms of the head's weight matrices (activations are
/// 1-Lipschitz). With `head_layers_only` the head is the final layer;
/// otherwise it is the whole network. The unit-normalization factor is not
/// included.
pub fn lipschitz_upper_bound(enc: &MlpEncoder, head_layers_only: bool) -> f64 {
    let layers = enc.layers();
    let head = if head_layers_only {
        &layers[layers.len() - 1..]
    } else {
        layers
    };
    head.iter().map(|l| spectral_norm(&l.weights)).product()
}

/// Lipschitz constant of `z -> z/|z|` on `{ |z| >= min_norm }`.
pub fn normalization_lipschitz(min_norm: f64) -> f64 {
    1.0 / min_norm
}

/// The projection head `f` sitting on top of the representation `phi`.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// `phi` already outputs unit vectors and `f` is the identity.
    Identity,
    /// `f(z) = (W z + b) / |W z + b|`.
    Affine(Dense),
}

impl Head {
    fn apply(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let raw = match self {
            Head::Identity => z.to_vec(),
            Head::Affine(layer) => {
                let mut out = layer.weights.mat_vec(z);
                out.iter_mut().zip(&layer.bias).for_each(|(o, b)| *o += b);
                out
            }
        };
        let n = norm(&raw);
        match self {
            Head::Identity => {
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "identity head expects unit-norm representations, got norm {n}"
                    )));
                }
                Ok((raw, 1.0))
            }
            Head::Affine(_) => {
                if !(n > 0.0) {
                    return Err(Error::DegenerateEmbedding { row: 0 });
                }
                Ok((raw.iter().map(|v| v / n).collect(), n))
            }
        }
    }
}

/// Representation-space pairs `(phi(x_i), phi(v_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationPairs {
    pub x: Matrix,
    pub v: Matrix,
}

impl RepresentationPairs {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Product-of-marginals sample: `k` derangements of the view column, stacked.
    pub fn product(&self, k: usize, rng: &mut crate::rng::Rng) -> RepresentationPairs {
        let n = self.len();
        let mut x = Matrix::zeros(0, self.x.cols());
        let mut v = Matrix::zeros(0, self.v.cols());
        for _ in 0..k {
            let perm = derangement(n, rng);
            x = x.vstack(&self.x);
            v = v.vstack(&self.v.select_rows(&perm));
        }
        RepresentationPairs { x, v }
    }
}

/// Outcome of one bound check.
#[derive(Debug, Clone, Serialize)]
pub struct WdmReport {
    pub lambda: f64,
    pub k: usize,
    pub t: f64,
    pub eta: f64,
    /// Lipschitz constant of the head (including normalization).
    pub lip: f64,
    pub w1: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// 99% bootstrap half-width of `lhs`.
    pub half_width: f64,
    pub condition_ok: bool,
    /// Smallest pre-normalization norm seen by an affine head (1 for identity).
    pub min_pre_norm: f64,
    pub duality_gap: f64,
}

impl WdmReport {
    /// Inequality holds up to sampling error.
    pub fn holds(&self) -> bool {
        self.slack >= -self.half_width
    }
}

/// Precondition on `lambda` for the clean (`eta = 0`) and noisy bounds.
pub fn wdm_condition(lambda: f64, k: usize, eta: f64) -> bool {
    let k = k as f64;
    if eta == 0.0 {
        lambda * k > 1.0 - lambda
    } else {
        let a = eta * k - eta + 1.0;
        lambda >= a / (a + k)
    }
}

pub const BOOTSTRAP_REPLICATES: usize = 400;

/// Compare `-mean RINCE(q=1)` on `observed` pairs against
/// `(1 - eta) Lip(f) (1 - lambda) e^{1/t} / t * W1(joint, product)`.
///
/// `joint` is a clean sample from the joint distribution, `product` a sample
/// from the product of marginals (e.g. [`RepresentationPairs::product`] of
/// `joint`), and `observed` the (possibly noisy) positive pairs the loss is
/// evaluated on. Negatives are the `product` pairs.
#[allow(clippy::too_many_arguments)]
pub fn wdm_bound_check(
    joint: &RepresentationPairs,
    product: &RepresentationPairs,
    observed: &RepresentationPairs,
    head: &Head,
    params: &RinceParams,
    k: usize,
    t: f64,
    eta: f64,
    seed: u64,
) -> Result<WdmReport> {
    if params.q != 1.0 {
        return Err(Error::TheoremInapplicable(format!(
            "the Wasserstein bound needs q = 1, got q = {}",
            params.q
        )));
    }
    params.validate()?;
    if k == 0 || !(t > 0.0) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("bad K/t/eta: {k}/{t}/{eta}")));
    }
    if joint.len() != observed.len() {
        return Err(Error::InvalidInput(format!(
            "joint ({}) and observed ({}) samples must have equal size",
            joint.len(),
            observed.len()
        )));
    }
    if joint.is_empty() || product.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let lambda = params.lambda;

    let mut min_pre_norm = f64::INFINITY;
    let mut embed = |pairs: &RepresentationPairs| -> Result<(Matrix, Matrix)> {
        let mut fx = Matrix::zeros(pairs.len(), 0);
        let mut fv = Matrix::zeros(pairs.len(), 0);
        for (src, dst) in [(&pairs.x, &mut fx), (&pairs.v, &mut fv)] {
            let mut rows = Vec::with_capacity(src.rows());
            for r in src.iter_rows() {
                let (u, n) = head.apply(r)?;
                min_pre_norm = min_pre_norm.min(n);
                rows.push(u);
            }
            *dst = Matrix::from_rows(&rows);
        }
        Ok((fx, fv))
    };
    let exp_scores = |(fx, fv): &(Matrix, Matrix)| -> Vec<f64> {
        (0..fx.rows()).map(|i| (dot(fx.row(i), fv.row(i)) / t).exp()).collect()
    };
    let observed_exp = exp_scores(&embed(observed)?);
    let product_exp = exp_scores(&embed(product)?);
    // joint/product atoms only matter through their norms for an affine head
    embed(joint)?;

    let lip = match head {
        Head::Identity => 1.0,
        Head::Affine(layer) => spectral_norm(&layer.weights) * normalization_lipschitz(min_pre_norm),
    };

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let lhs_of = |obs: f64, prod: f64| (1.0 - lambda) * obs - lambda * k as f64 * prod;
    let lhs = lhs_of(mean(&observed_exp), mean(&product_exp));

    let joint_dist = DiscreteDistribution::uniform(joint.x.clone(), joint.v.clone())?;
    let product_dist = DiscreteDistribution::uniform(product.x.clone(), product.v.clone())?;
    let w = wasserstein1_exact(&joint_dist, &product_dist)?;
    let rhs = (1.0 - eta) * lip * (1.0 - lambda) * (1.0 / t).exp() / t * w.value;

    let mut rng = substream(seed, Stream::Bootstrap);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_REPLICATES)
        .map(|_| {
            let o = (0..observed_exp.len())
                .map(|_| observed_exp[rng.gen_range(0..observed_exp.len())])
                .sum::<f64>()
                / observed_exp.len() as f64;
            let p = (0..product_exp.len())
                .map(|_| product_exp[rng.gen_range(0..product_exp.len())])
                .sum::<f64>()
                / product_exp.len() as f64;
            lhs_of(o, p)
        })
        .collect();
    boot.sort_by(|a, b| a.total_cmp(b));
    let lo = boot[(0.005 * (boot.len() - 1) as f64).round() as usize];
    let hi = boot[(0.995 * (boot.len() - 1) as f64).round() as usize];

    Ok(WdmReport {
        lambda,
        k,
        t,
        eta,
        lip,
        w1: w.value,
        lhs,
        rhs,
        slack: rhs - lhs,
        half_width: 0.5 * (hi - lo),
        condition_ok: wdm_condition(lambda, k, eta),
        min_pre_norm,
        duality_gap: w.duality_gap,
    })
}

/// Which part of an encoder plays the projection head in a bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadChoice {
    /// Representations are the encoder's unit-norm outputs.
    Identity,
    /// Representations are the penultimate activations; the head is the final
    /// layer plus normalization.
    LastLayer,
}

/// Sample pairs from `data`, push them through `enc`, and run
/// [`wdm_bound_check`] with `n` pairs, `k` negatives per anchor, and mixture
/// noise at rate `eta` on the observed pairs.
#[allow(clippy::too_many_arguments)]
pub fn wdm_check_for_encoder(
    enc: &MlpEncoder,
    data: &Dataset,
    head: HeadChoice,
    params: &RinceParams,
    k: usize,
    eta: f64,
    n: usize,
    seed: u64,
) -> Result<WdmReport> {
    let mut rng = substream(seed, Stream::Noise);
    let clean = sample_pair_batch(data, n, &NoiseSpec::new(NoiseKind::Mixture, 0.0)?, None, &mut rng)?;
    let noisy = sample_pair_batch(data, n, &NoiseSpec::new(NoiseKind::Mixture, eta)?, None, &mut rng)?;
    let represent = |inputs: &Matrix| -> Result<Matrix> {
        let (emb, cache) = enc.forward(inputs)?;
        Ok(match head {
            HeadChoice::Identity => emb.vectors,
            HeadChoice::LastLayer => cache.layer_input(enc.layers().len() - 1).clone(),
        })
    };
    let joint = RepresentationPairs {
        x: represent(&clean.anchors)?,
        v: represent(&clean.views)?,
    };
    let observed = RepresentationPairs {
        x: represent(&noisy.anchors)?,
        v: represent(&noisy.views)?,
    };
    let product = joint.product(k, &mut substream(seed, Stream::Custom(7)));
    let head = match head {
        HeadChoice::Identity => Head::Identity,
        HeadChoice::LastLayer => Head::Affine(enc.layers()[enc.layers().len() - 1].clone()),
    };
    wdm_bound_check(&joint, &product, &observed, &head, params, k, enc.temperature(), eta, seed)
}
