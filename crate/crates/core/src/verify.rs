//! Property checks shared by the `verify` command and the acceptance suite.
//! Each check runs at a caller-chosen size and reports pass/fail with the
//! measured quantity, so the same code serves a quick smoke run and the
//! full-size criteria.

use std::f64::consts::E;

use rand::Rng as _;

use crate::data::generate_dataset;
use crate::divergence::{wasserstein1_exact, wdm_check_for_encoder, DiscreteDistribution, HeadChoice, WdmReport};
use crate::encoder::{Activation, MlpEncoder};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::loss::{info_nce_with_grad, rince_with_grad, symmetry_residual, BinaryLoss, LossResult, RinceParams, ScoreBatch};
use crate::objective::{encoder_objective, ContrastiveLoss, Masking};
use crate::risk::{corollary_bound, corollary_suite};
use crate::rng::{gaussian, substream, Rng, Stream};
use crate::train::{train_contrastive, Adam, AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Relative error with a floor on the denominator, so that gradients that
/// are themselves at rounding level are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// A random score batch with `K` in `1..=max_k` and scores in `[-range, range]`.
pub fn random_score_batch(rng: &mut Rng, max_k: usize, range: f64) -> ScoreBatch {
    let k = rng.gen_range(1..=max_k);
    let s_plus = rng.gen_range(-range..=range);
    let s_minus = (0..k).map(|_| rng.gen_range(-range..=range)).collect();
    ScoreBatch { s_plus, s_minus }
}

/// Exponential loss is symmetric (value and gradient) and the
/// InfoNCE-induced binary loss is not, on `n` random scores.
pub fn check_symmetry(n: usize, seed: u64) -> Check {
    Check::from_result(
        "symmetry: exponential loss symmetric, InfoNCE-induced loss not",
        (|| {
            let mut rng = substream(seed, Stream::Custom(11));
            let points: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let exp = symmetry_residual(&BinaryLoss::Exponential, &points)?;
            let info = symmetry_residual(&BinaryLoss::InfoNceInduced { log_partition: 1.0 }, &points)?;
            let ok = exp.value <= 1e-12 && exp.grad <= 1e-12 && info.grad > 1e-3;
            Ok((
                ok,
                format!(
                    "exp residual ({:.1e}, {:.1e}); InfoNCE-induced gradient residual {:.3}",
                    exp.value, exp.grad, info.grad
                ),
            ))
        })(),
    )
}

/// Largest value and gradient deviation of RINCE at `q` from
/// `InfoNCE + ln(lambda)` over `batches`.
pub fn small_q_deviation(batches: &[(ScoreBatch, f64)], q: f64) -> Result<(f64, f64)> {
    let mut dv: f64 = 0.0;
    let mut dg: f64 = 0.0;
    for (b, lambda) in batches {
        let r = rince_with_grad(b, &RinceParams::new(q, *lambda)?)?;
        let i = info_nce_with_grad(b)?;
        dv = dv.max((r.value - i.value - lambda.ln()).abs());
        dg = dg.max((r.grad_s_plus - i.grad_s_plus).abs());
        for (a, c) in r.grad_s_minus.iter().zip(&i.grad_s_minus) {
            dg = dg.max((a - c).abs());
        }
    }
    Ok((dv, dg))
}

/// As `q -> 0`, RINCE approaches `InfoNCE + ln(lambda)` and the deviation
/// shrinks monotonically over `q = 1e-3, 1e-4, 1e-5`.
pub fn check_small_q_limit(n: usize, seed: u64) -> Check {
    Check::from_result(
        "small-q limit: RINCE -> InfoNCE + ln(lambda)",
        (|| {
            let mut rng = substream(seed, Stream::Custom(12));
            let batches: Vec<(ScoreBatch, f64)> = (0..n)
                .map(|_| (random_score_batch(&mut rng, 16, 2.0), rng.gen_range(0.01..=1.0)))
                .collect();
            let devs = [1e-3, 1e-4, 1e-5]
                .iter()
                .map(|&q| small_q_deviation(&batches, q))
                .collect::<Result<Vec<_>>>()?;
            let (v5, g5) = devs[2];
            let monotone = devs.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);
            Ok((
                v5 <= 1e-4 && g5 <= 1e-4 && monotone,
                format!(
                    "q=1e-5: value {v5:.2e}, gradient {g5:.2e}; value deviations {:.1e} > {:.1e} > {:.1e}",
                    devs[0].0, devs[1].0, devs[2].0
                ),
            ))
        })(),
    )
}

fn loss_fd_error(loss: &dyn Fn(&ScoreBatch) -> Result<LossResult>, b: &ScoreBatch) -> Result<f64> {
    let r = loss(b)?;
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    let mut probe = b.clone();
    probe.s_plus = b.s_plus + h;
    let up = loss(&probe)?.value;
    probe.s_plus = b.s_plus - h;
    let down = loss(&probe)?.value;
    worst = worst.max(relative_error(r.grad_s_plus, (up - down) / (2.0 * h)));
    for i in 0..b.k() {
        let mut probe = b.clone();
        probe.s_minus[i] += h;
        let up = loss(&probe)?.value;
        probe.s_minus[i] -= 2.0 * h;
        let down = loss(&probe)?.value;
        worst = worst.max(relative_error(r.grad_s_minus[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Analytic score gradients of InfoNCE and RINCE (several q) against
/// central differences on `n` random batches.
pub fn check_loss_gradients(n: usize, seed: u64) -> Check {
    Check::from_result(
        "loss gradients match central differences (rel. err <= 1e-6)",
        (|| {
            let mut rng = substream(seed, Stream::Custom(13));
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let b = random_score_batch(&mut rng, 16, 2.0);
                let err = if i % 5 == 0 {
                    loss_fd_error(&info_nce_with_grad, &b)?
                } else {
                    let q = [0.01, 0.1, 0.5, 1.0][i % 4];
                    let p = RinceParams::new(q, rng.gen_range(0.01..=1.0))?;
                    loss_fd_error(&|b: &ScoreBatch| rince_with_grad(b, &p), &b)?
                };
                worst = worst.max(err);
            }
            Ok((worst <= 1e-6, format!("max relative error {worst:.2e} over {n} batches")))
        })(),
    )
}

/// Largest relative FD error of the full encoder objective over all
/// parameters.
pub fn encoder_fd_error(enc: &MlpEncoder, x: &Matrix, v: &Matrix, loss: &ContrastiveLoss, masking: Masking) -> Result<f64> {
    let base = encoder_objective(enc, x, v, loss, masking)?;
    let params = enc.params();
    let mut probe = enc.clone();
    let mut worst: f64 = 0.0;
    for (i, g) in base.grad.iter().enumerate() {
        let mut p = params.clone();
        p[i] += FD_STEP;
        probe.set_params(&p)?;
        let up = encoder_objective(&probe, x, v, loss, masking)?.loss;
        p[i] -= 2.0 * FD_STEP;
        probe.set_params(&p)?;
        let down = encoder_objective(&probe, x, v, loss, masking)?.loss;
        worst = worst.max(relative_error(*g, (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| gaussian(rng)).collect())
}

/// End-to-end gradient through scores, normalization and the MLP against
/// central differences on `trials` random encoders (16-32-8, 808 params).
pub fn check_encoder_gradients(trials: usize, seed: u64) -> Check {
    Check::from_result(
        "end-to-end encoder gradient matches central differences (rel. err <= 1e-5)",
        (|| {
            let mut worst: f64 = 0.0;
            let mut params = 0;
            for k in 0..trials as u64 {
                let mut rng = substream(seed + k, Stream::Custom(14));
                let enc = MlpEncoder::init(&[16, 32, 8], Activation::Tanh, 0.5, &mut substream(seed + k, Stream::Init))?;
                params = enc.num_params();
                let x = gaussian_matrix(6, 16, &mut rng);
                let v = gaussian_matrix(6, 16, &mut rng);
                let (loss, masking) = match k % 4 {
                    0 => (ContrastiveLoss::InfoNce, Masking::TwoView),
                    1 => (ContrastiveLoss::Rince(RinceParams::new(0.5, 0.01)?), Masking::TwoView),
                    2 => (ContrastiveLoss::Rince(RinceParams::new(1.0, 0.1)?), Masking::OneSided),
                    _ => (ContrastiveLoss::InfoNce, Masking::SubtractConstant),
                };
                worst = worst.max(encoder_fd_error(&enc, &x, &v, &loss, masking)?);
            }
            Ok((
                worst <= 1e-5,
                format!("max relative error {worst:.2e} over {trials} encoders x {params} parameters"),
            ))
        })(),
    )
}

/// `|dL/ds+|` on `s+ in [-1, 1]` (`s- = 0`, `K = 1`, `lambda = 0.5`) falls
/// with `s+` for `q = 1e-3` (hard-positive weighting) and rises for `q = 1`.
pub fn check_gradient_ordering(points: usize) -> Check {
    Check::from_result(
        "positive-gradient ordering: decreasing at q=1e-3, increasing at q=1",
        (|| {
            let grid: Vec<f64> = (0..points)
                .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
                .collect();
            let mags = |q: f64| -> Result<Vec<f64>> {
                let p = RinceParams::new(q, 0.5)?;
                grid.iter()
                    .map(|&s| Ok(rince_with_grad(&ScoreBatch::new(s, vec![0.0])?, &p)?.grad_s_plus.abs()))
                    .collect()
            };
            let small = mags(1e-3)?;
            let one = mags(1.0)?;
            let dec = small.windows(2).all(|w| w[1] < w[0]);
            let inc = one.windows(2).all(|w| w[1] > w[0]);
            Ok((
                dec && inc,
                format!(
                    "q=1e-3: {:.4} -> {:.4}; q=1: {:.4} -> {:.4}",
                    small[0],
                    small[points - 1],
                    one[0],
                    one[points - 1]
                ),
            ))
        })(),
    )
}

/// The noisy-risk bound holds on `count` random instances, and at 40% noise
/// with `s_max = 1` it reduces to `5 eps + 4e`.
pub fn check_corollary(count: usize, seed: u64) -> Check {
    Check::from_result(
        "noisy-risk bound holds on random threshold instances",
        (|| {
            let rows = corollary_suite(seed, count, 1.0)?;
            let held = rows.iter().filter(|r| r.holds).count();
            let closed = rows
                .iter()
                .map(|r| (corollary_bound(r.epsilon, 0.4, 1.0) - (5.0 * r.epsilon + 4.0 * E)).abs())
                .fold(0.0, f64::max);
            Ok((
                held == count && closed <= 1e-9,
                format!("{held}/{count} instances hold; 40%-noise closed form off by {closed:.1e}"),
            ))
        })(),
    )
}

fn random_distribution(n: usize, dim: usize, rng: &mut Rng) -> Result<DiscreteDistribution> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteDistribution::new(
        gaussian_matrix(n, dim, rng),
        gaussian_matrix(n, dim, rng),
        w.iter().map(|x| x / s).collect(),
    )
}

/// Exact W1 equals the best of all `4!` matchings between uniform
/// four-atom distributions (an optimal plan between equal-size uniform
/// measures can be taken to be a permutation).
pub fn w1_permutation_residual(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = substream(seed, Stream::Custom(15));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let a = DiscreteDistribution::uniform(gaussian_matrix(4, 2, &mut rng), gaussian_matrix(4, 2, &mut rng))?;
        let b = DiscreteDistribution::uniform(gaussian_matrix(4, 2, &mut rng), gaussian_matrix(4, 2, &mut rng))?;
        let exact = wasserstein1_exact(&a, &b)?.value;
        let mut best = f64::INFINITY;
        let mut perm = [0usize, 1, 2, 3];
        for_each_permutation(&mut perm, 0, &mut |p| {
            let c: f64 = (0..4)
                .map(|i| crate::divergence::pair_cost(a.point(i), b.point(p[i])))
                .sum::<f64>()
                / 4.0;
            best = best.min(c);
        });
        worst = worst.max((exact - best).abs());
    }
    Ok(worst)
}

fn for_each_permutation(p: &mut [usize; 4], k: usize, f: &mut dyn FnMut(&[usize; 4])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        for_each_permutation(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Largest violation of identity, symmetry and the triangle inequality on
/// random weighted distributions.
pub fn w1_metric_residual(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = substream(seed, Stream::Custom(16));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (na, nb, nc) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..8));
        let a = random_distribution(na, 3, &mut rng)?;
        let b = random_distribution(nb, 3, &mut rng)?;
        let c = random_distribution(nc, 3, &mut rng)?;
        let d = |p: &DiscreteDistribution, q: &DiscreteDistribution| wasserstein1_exact(p, q).map(|w| w.value);
        let (ab, ba, bc, ac, aa) = (d(&a, &b)?, d(&b, &a)?, d(&b, &c)?, d(&a, &c)?, d(&a, &a)?);
        worst = worst.max(aa.abs()).max((ab - ba).abs()).max((ac - ab - bc).max(0.0));
    }
    Ok(worst)
}

pub fn check_w1_solver(trials: usize, seed: u64) -> Check {
    Check::from_result(
        "exact W1: permutation oracle and metric axioms (<= 1e-8)",
        (|| {
            let perm = w1_permutation_residual(trials, seed)?;
            let metric = w1_metric_residual(trials, seed)?;
            Ok((
                perm <= 1e-8 && metric <= 1e-8,
                format!("permutation residual {perm:.1e}, metric residual {metric:.1e}"),
            ))
        })(),
    )
}

/// Run the Wasserstein bound on `encoders` random (untrained) encoders x
/// `seeds` sampling seeds x eta in {0, 0.5}, with lambda = 0.5, K = 2, t = 1,
/// identity head and 64 pairs. Returns every report.
pub fn wdm_reports(encoders: usize, seeds: usize) -> Result<Vec<(u64, u64, WdmReport)>> {
    let params = RinceParams::new(1.0, 0.5)?;
    let mut spec = crate::train::trainer::default_latent_spec();
    spec.samples_per_class = 50;
    let mut out = Vec::new();
    for e in 0..encoders as u64 {
        let enc = MlpEncoder::init(&[16, 32, 8], Activation::Relu, 1.0, &mut substream(e, Stream::Init))?;
        for s in 0..seeds as u64 {
            let data = generate_dataset(&spec, s)?;
            for eta in [0.0, 0.5] {
                let r = wdm_check_for_encoder(&enc, &data, HeadChoice::Identity, &params, 2, eta, 64, 1000 * e + s)?;
                out.push((e, s, r));
            }
        }
    }
    Ok(out)
}

pub fn check_wdm_bound(encoders: usize, seeds: usize) -> Check {
    Check::from_result(
        "Wasserstein bound: slack >= -bootstrap half-width when the lambda condition holds",
        (|| {
            let reports = wdm_reports(encoders, seeds)?;
            let applicable: Vec<&WdmReport> = reports.iter().map(|(_, _, r)| r).filter(|r| r.condition_ok).collect();
            let held = applicable.iter().filter(|r| r.holds()).count();
            let worst = applicable
                .iter()
                .map(|r| r.slack + r.half_width)
                .fold(f64::INFINITY, f64::min);
            Ok((
                held == applicable.len() && !applicable.is_empty(),
                format!(
                    "{held}/{} applicable checks hold ({} total); min slack + half-width {worst:.3}",
                    applicable.len(),
                    reports.len()
                ),
            ))
        })(),
    )
}

/// One Adam step on `f(x) = 0.5 |x|^2` against the update written out by hand.
pub fn check_adam_step() -> Check {
    Check::from_result(
        "Adam: one step matches the hand-computed update (<= 1e-12)",
        (|| {
            let cfg = AdamConfig {
                learning_rate: 0.1,
                weight_decay: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            };
            let x0 = [1.5, -0.25, 3.0];
            let mask = [true, false, true];
            let mut x = x0.to_vec();
            let mut adam = Adam::new(cfg, 3)?;
            adam.step(&mut x, &x0, &mask)?;
            let mut worst: f64 = 0.0;
            for i in 0..3 {
                let g = x0[i];
                let m_hat = (0.1 * g) / 0.1;
                let v_hat = (0.001 * g * g) / 0.001;
                let decayed = if mask[i] { x0[i] * (1.0 - 0.1 * 0.01) } else { x0[i] };
                let expect = decayed - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
                worst = worst.max((x[i] - expect).abs());
            }
            Ok((worst <= 1e-12, format!("max deviation {worst:.1e}")))
        })(),
    )
}

/// Two runs of the same small config give bit-identical histories and weights.
pub fn check_training_determinism() -> Check {
    Check::from_result(
        "training is bit-deterministic for a fixed seed",
        (|| {
            let mut cfg = TrainConfig {
                epochs: 5,
                seed: 9,
                ..Default::default()
            };
            cfg.data.samples_per_class = 20;
            cfg.noise.rate = 0.4;
            let data = cfg.dataset()?;
            let (e1, h1) = train_contrastive(&cfg, &data)?;
            let (e2, h2) = train_contrastive(&cfg, &data)?;
            let same = h1 == h2 && e1.params().iter().zip(e2.params()).all(|(a, b)| a.to_bits() == b.to_bits());
            Ok((same, format!("{} epochs compared", h1.epochs.len())))
        })(),
    )
}

/// The whole suite; `quick` shrinks the randomized checks.
pub fn run_all(quick: bool, seed: u64) -> Vec<Check> {
    let (sym, lim, grads, enc, cor, w1, wdm_e, wdm_s) = if quick {
        (2_000, 100, 200, 2, 50, 20, 4, 2)
    } else {
        (10_000, 100, 1_000, 8, 200, 100, 20, 5)
    };
    vec![
        check_symmetry(sym, seed),
        check_small_q_limit(lim, seed),
        check_loss_gradients(grads, seed),
        check_encoder_gradients(enc, seed),
        check_gradient_ordering(201),
        check_corollary(cor, seed),
        check_w1_solver(w1, seed),
        check_wdm_bound(wdm_e, wdm_s),
        check_adam_step(),
        check_training_determinism(),
    ]
}
