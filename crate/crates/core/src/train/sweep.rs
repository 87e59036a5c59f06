//! Grid sweeps over loss × noise rate × seed, and their aggregation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::trainer::{evaluate_run, train_contrastive, LossKind, TrainConfig};

/// A loss setting in the grid: InfoNCE, or RINCE at a given `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLoss", into = "RawLoss")]
pub enum SweepLoss {
    InfoNce,
    Rince { q: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLoss {
    Name(String),
    Q(f64),
}

impl TryFrom<RawLoss> for SweepLoss {
    type Error = String;

    fn try_from(raw: RawLoss) -> std::result::Result<Self, String> {
        match raw {
            RawLoss::Name(n) if n.eq_ignore_ascii_case("infonce") => Ok(SweepLoss::InfoNce),
            RawLoss::Name(n) => Err(format!("unknown loss {n:?}; expected \"infonce\" or a q value")),
            RawLoss::Q(q) if q > 0.0 && q <= 1.0 => Ok(SweepLoss::Rince { q }),
            RawLoss::Q(q) => Err(format!("q must lie in (0, 1], got {q}")),
        }
    }
}

impl From<SweepLoss> for RawLoss {
    fn from(l: SweepLoss) -> Self {
        match l {
            SweepLoss::InfoNce => RawLoss::Name("infonce".into()),
            SweepLoss::Rince { q } => RawLoss::Q(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub losses: Vec<SweepLoss>,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// RINCE `lambda` values; defaults to the base config's.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            losses: vec![
                SweepLoss::InfoNce,
                SweepLoss::Rince { q: 0.01 },
                SweepLoss::Rince { q: 0.1 },
                SweepLoss::Rince { q: 0.5 },
                SweepLoss::Rince { q: 1.0 },
            ],
            etas: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            seeds: (0..5).collect(),
            lambdas: None,
        }
    }
}

/// The concrete configs of every cell, in row order: loss, then lambda,
/// then eta, then seed. InfoNCE ignores lambda and appears once per eta/seed.
pub fn expand_grid(base: &TrainConfig, grid: &SweepGrid) -> Result<Vec<TrainConfig>> {
    if grid.losses.is_empty() || grid.etas.is_empty() || grid.seeds.is_empty() {
        return Err(Error::InvalidInput("sweep grid has an empty axis".into()));
    }
    let lambdas = grid.lambdas.clone().unwrap_or_else(|| vec![base.rince.lambda]);
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("sweep grid has an empty lambda axis".into()));
    }
    let mut cells = Vec::new();
    for loss in &grid.losses {
        let lambda_axis: &[f64] = match loss {
            SweepLoss::InfoNce => &lambdas[..1],
            SweepLoss::Rince { .. } => &lambdas,
        };
        for &lambda in lambda_axis {
            for &eta in &grid.etas {
                for &seed in &grid.seeds {
                    let mut cfg = base.clone();
                    cfg.seed = seed;
                    cfg.noise.rate = eta;
                    match *loss {
                        SweepLoss::InfoNce => {
                            cfg.loss = LossKind::InfoNce;
                            cfg.warmup = Default::default();
                        }
                        SweepLoss::Rince { q } => {
                            cfg.loss = LossKind::Rince;
                            cfg.rince.q = q;
                            cfg.rince.lambda = lambda;
                        }
                    }
                    cfg.validate()?;
                    cells.push(cfg);
                }
            }
        }
    }
    Ok(cells)
}

/// One result row. Serialized fields follow the results-table header; the
/// mean positive scores are kept in memory only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loss: String,
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: f64,
    pub noise_kind: String,
    pub seed: u64,
    pub probe_acc: Option<f64>,
    pub auroc: Option<f64>,
    pub final_loss: Option<f64>,
    pub status: String,
    #[serde(skip)]
    pub mean_pos_clean: Option<f64>,
    #[serde(skip)]
    pub mean_pos_noisy: Option<f64>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const RESULTS_HEADER: &str = "loss,q,lambda,eta,noise_kind,seed,probe_acc,auroc,final_loss,status";

/// Train and evaluate one cell. Failures are recorded in `status`.
pub fn run_cell(cfg: &TrainConfig) -> SweepRow {
    let rince = cfg.loss == LossKind::Rince;
    let mut row = SweepRow {
        loss: if rince { "rince" } else { "infonce" }.to_string(),
        q: rince.then_some(cfg.rince.q),
        lambda: rince.then_some(cfg.rince.lambda),
        eta: cfg.noise.rate,
        noise_kind: cfg.noise.kind.as_str().to_string(),
        seed: cfg.seed,
        probe_acc: None,
        auroc: None,
        final_loss: None,
        status: "ok".into(),
        mean_pos_clean: None,
        mean_pos_noisy: None,
    };
    let outcome = cfg.dataset().and_then(|data| {
        let (enc, history) = train_contrastive(cfg, &data)?;
        let eval = evaluate_run(&enc, cfg, &data)?;
        Ok((history, eval))
    });
    match outcome {
        Ok((history, eval)) => {
            row.final_loss = Some(history.final_loss());
            row.probe_acc = Some(eval.probe.accuracy);
            if let Some(a) = eval.audit {
                row.auroc = Some(a.auroc);
                row.mean_pos_clean = Some(a.mean_clean);
                row.mean_pos_noisy = Some(a.mean_noisy);
            }
        }
        Err(Error::TrainingDiverged { epoch }) => row.status = format!("diverged@{epoch}"),
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Run every cell on a pool of `jobs` threads. Rows come back in grid order
/// whatever the thread count, and each cell is computed single-threaded, so
/// the table is identical for any `jobs`.
pub fn run_sweep(base: &TrainConfig, grid: &SweepGrid, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = expand_grid(base, grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build a pool of {jobs} threads: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run_cell).collect()))
}

pub fn write_results_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::InvalidInput(format!(
            "{} does not have the results-table header",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub loss: String,
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: f64,
    pub noise_kind: String,
    pub runs: usize,
    pub ok_runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
}

impl CellSummary {
    /// `infonce`, or `rince_q<q>` (with `_l<lambda>` appended when needed).
    pub fn setting_label(&self, with_lambda: bool) -> String {
        match (self.q, self.lambda) {
            (Some(q), Some(l)) if with_lambda => format!("rince_q{q}_l{l}"),
            (Some(q), _) => format!("rince_q{q}"),
            _ => self.loss.clone(),
        }
    }
}

/// Group rows by (loss, q, lambda, eta, noise kind) in order of first
/// appearance; only successful runs enter the statistics.
pub fn aggregate(rows: &[SweepRow]) -> Vec<CellSummary> {
    type Key = (String, Option<u64>, Option<u64>, u64, String);
    let key = |r: &SweepRow| -> Key {
        (
            r.loss.clone(),
            r.q.map(f64::to_bits),
            r.lambda.map(f64::to_bits),
            r.eta.to_bits(),
            r.noise_kind.clone(),
        )
    };
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&SweepRow>> = HashMap::new();
    for r in rows {
        let k = key(r);
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let rs = &groups[&k];
            let ok: Vec<&&SweepRow> = rs.iter().filter(|r| r.is_ok()).collect();
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.probe_acc).collect();
            let au: Vec<f64> = ok.iter().filter_map(|r| r.auroc).collect();
            let fl: Vec<f64> = ok.iter().filter_map(|r| r.final_loss).collect();
            let (acc_mean, acc_std) = mean_std(&acc);
            let (fl_mean, fl_std) = mean_std(&fl);
            let (au_mean, au_std) = if au.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&au);
                (Some(m), Some(s))
            };
            let first = rs[0];
            CellSummary {
                loss: first.loss.clone(),
                q: first.q,
                lambda: first.lambda,
                eta: first.eta,
                noise_kind: first.noise_kind.clone(),
                runs: rs.len(),
                ok_runs: ok.len(),
                acc_mean,
                acc_std,
                auroc_mean: au_mean,
                auroc_std: au_std,
                final_loss_mean: fl_mean,
                final_loss_std: fl_std,
            }
        })
        .collect()
}

pub fn write_summary_csv(summary: &[CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Whitespace-separated column data, one block per loss setting (blocks
/// separated by two blank lines, so gnuplot's `index` selects a setting).
pub fn gnuplot_table(summary: &[CellSummary]) -> String {
    let with_lambda = {
        let mut ls: Vec<u64> = summary.iter().filter_map(|s| s.lambda.map(f64::to_bits)).collect();
        ls.sort_unstable();
        ls.dedup();
        ls.len() > 1
    };
    let mut labels: Vec<String> = Vec::new();
    for s in summary {
        let l = format!("{}_{}", s.setting_label(with_lambda), s.noise_kind);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut out = String::new();
    for (b, label) in labels.iter().enumerate() {
        if b > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {label}");
        let _ = writeln!(out, "# eta acc_mean acc_std auroc_mean auroc_std final_loss_mean final_loss_std");
        for s in summary
            .iter()
            .filter(|s| &format!("{}_{}", s.setting_label(with_lambda), s.noise_kind) == label)
        {
            let opt = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                s.eta,
                s.acc_mean,
                s.acc_std,
                opt(s.auroc_mean),
                opt(s.auroc_std),
                s.final_loss_mean,
                s.final_loss_std
            );
        }
    }
    out
}
