use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rince_lab::divergence::{wdm_check_for_encoder, WdmReport};
use rince_lab::encoder::MlpEncoder;
use rince_lab::loss::{BinaryLoss, RinceParams};
use rince_lab::risk::{argmin_shift_count, corollary_suite};
use rince_lab::rng::{substream, Stream};
use rince_lab::train::sweep::{expand_grid, gnuplot_table, read_results_csv, write_results_csv, write_summary_csv};
use rince_lab::train::{aggregate, evaluate_run, run_sweep, train_contrastive, TrainConfig};
use rince_lab::{data::generate_dataset, verify as checks};
use serde::Serialize;

use crate::config::{self, BoundsConfig, RiskConfig, SweepConfig};
use crate::{Common, Failure};

type Outcome = Result<(), Failure>;

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("RINCE_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("rince-lab-out"));
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Timestamps live only here so every other output is byte-reproducible.
fn write_meta(dir: &Path, command: &str, common: &Common) -> Outcome {
    #[derive(Serialize)]
    struct Meta<'a> {
        command: &'a str,
        version: &'a str,
        unix_time: u64,
        config: Option<String>,
        seed_override: Option<u64>,
    }
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    write_json(
        &dir.join(format!("{command}.meta.json")),
        &Meta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            unix_time,
            config: common.config.as_ref().map(|p| p.display().to_string()),
            seed_override: common.seed,
        },
    )
}

pub fn verify(quick: bool, seed: u64) -> Outcome {
    let results = checks::run_all(quick, seed);
    let width = results.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &results {
        println!(
            "{:4}  {:width$}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        Err(Failure::Verification)
    } else {
        Ok(())
    }
}

pub fn train(common: &Common) -> Outcome {
    let mut cfg: TrainConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::Config(format!("invalid training config: {e}")))?;
    let dir = out_dir(common)?;
    let data = cfg.dataset()?;
    let (enc, mut history) = train_contrastive(&cfg, &data)?;
    let ckpt = dir.join("encoder.ckpt");
    enc.save(&ckpt)?;
    history.checkpoint = Some(ckpt);
    history.write_csv(&dir.join("history.csv"))?;
    let eval = evaluate_run(&enc, &cfg, &data)?;

    #[derive(Serialize)]
    struct Evaluation {
        probe_accuracy: f64,
        per_class_accuracy: Vec<Option<f64>>,
        probe_iterations: usize,
        audit: Option<rince_lab::train::AuditResult>,
        final_loss: f64,
    }
    write_json(
        &dir.join("evaluation.json"),
        &Evaluation {
            probe_accuracy: eval.probe.accuracy,
            per_class_accuracy: eval.probe.per_class.clone(),
            probe_iterations: eval.probe.iterations,
            audit: eval.audit,
            final_loss: history.final_loss(),
        },
    )?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_meta(&dir, "train", common)?;
    println!(
        "trained {} epochs: final loss {:.4}, probe accuracy {:.4}",
        history.epochs.len(),
        history.final_loss(),
        eval.probe.accuracy
    );
    Ok(())
}

pub fn sweep(common: &Common, jobs: usize, quick: bool) -> Outcome {
    let mut cfg: SweepConfig = config::load(common.config.as_deref())?;
    if quick {
        cfg.grid.seeds.truncate(3);
        cfg.grid.etas = vec![0.0, 0.8];
        cfg.base.epochs = cfg.base.epochs.min(30);
    }
    if let Some(seed) = common.seed {
        let n = cfg.grid.seeds.len() as u64;
        cfg.grid.seeds = (seed..seed + n).collect();
    }
    expand_grid(&cfg.base, &cfg.grid)
        .map_err(|e| Failure::Config(format!("invalid sweep config: {e}")))?;
    let dir = out_dir(common)?;
    let rows = run_sweep(&cfg.base, &cfg.grid, jobs)?;
    write_results_csv(&rows, &dir.join("results.csv"))?;
    write_json(&dir.join("sweep_config.json"), &cfg)?;
    write_meta(&dir, "sweep", common)?;
    let bad = rows.iter().filter(|r| !r.is_ok()).count();
    if common.verbose > 0 {
        for r in &rows {
            println!(
                "{} q={:?} eta={} seed={} acc={:?} status={}",
                r.loss, r.q, r.eta, r.seed, r.probe_acc, r.status
            );
        }
    }
    println!("{} cells written to {} ({bad} not ok)", rows.len(), dir.join("results.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    encoder: u64,
    seed: u64,
    lambda: f64,
    #[serde(rename = "K")]
    k: usize,
    t: f64,
    eta: f64,
    lip: f64,
    lhs: f64,
    rhs: f64,
    slack: f64,
    condition_ok: bool,
}

pub fn bounds(common: &Common) -> Outcome {
    let mut cfg: BoundsConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (seed..seed + n).collect();
    }
    let params = RinceParams::new(1.0, cfg.lambda).map_err(|e| Failure::Config(e.to_string()))?;
    if cfg.widths.len() < 2 {
        return Err(Failure::Config("bounds config: widths needs at least two entries".into()));
    }
    let dir = out_dir(common)?;
    let mut spec = rince_lab::train::trainer::default_latent_spec();
    spec.dim = cfg.widths[0];
    spec.samples_per_class = 50;
    let mut reports: Vec<(u64, u64, WdmReport)> = Vec::new();
    for e in 0..cfg.encoders as u64 {
        let enc = MlpEncoder::init(
            &cfg.widths,
            rince_lab::encoder::Activation::Relu,
            cfg.temperature,
            &mut substream(e, Stream::Init),
        )?;
        for &s in &cfg.seeds {
            let data = generate_dataset(&spec, s)?;
            for &eta in &cfg.etas {
                let r = wdm_check_for_encoder(&enc, &data, cfg.head, &params, cfg.k, eta, cfg.pairs, 1000 * e + s)?;
                reports.push((e, s, r));
            }
        }
    }
    let path = dir.join("bounds.csv");
    let mut w = csv_writer(&path)?;
    for (e, s, r) in &reports {
        w.serialize(BoundRow {
            encoder: *e,
            seed: *s,
            lambda: r.lambda,
            k: r.k,
            t: r.t,
            eta: r.eta,
            lip: r.lip,
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            condition_ok: r.condition_ok,
        })
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
    write_meta(&dir, "bounds", common)?;
    let applicable: Vec<&WdmReport> = reports.iter().map(|(_, _, r)| r).filter(|r| r.condition_ok).collect();
    let held = applicable.iter().filter(|r| r.holds()).count();
    println!(
        "{held}/{} checks with the lambda condition hold ({} skipped as inapplicable); rows in {}",
        applicable.len(),
        reports.len() - applicable.len(),
        path.display()
    );
    if held < applicable.len() {
        Err(Failure::Verification)
    } else {
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn risk(common: &Common) -> Outcome {
    let cfg: RiskConfig = config::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(0);
    let dir = out_dir(common)?;
    let rows = corollary_suite(seed, cfg.instances, cfg.s_max)?;
    let path = dir.join("risk.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;

    #[derive(Serialize)]
    struct Demo {
        eta: f64,
        instances: usize,
        exponential_argmin_moved: usize,
        logistic_argmin_moved: usize,
    }
    let (exp_moved, n) = argmin_shift_count(&BinaryLoss::Exponential, seed, cfg.demo_instances, cfg.demo_eta, cfg.s_max)?;
    let (log_moved, _) = argmin_shift_count(&BinaryLoss::Logistic, seed, cfg.demo_instances, cfg.demo_eta, cfg.s_max)?;
    write_json(
        &dir.join("risk_demo.json"),
        &Demo {
            eta: cfg.demo_eta,
            instances: n,
            exponential_argmin_moved: exp_moved,
            logistic_argmin_moved: log_moved,
        },
    )?;
    write_meta(&dir, "risk", common)?;
    let held = rows.iter().filter(|r| r.holds).count();
    println!("{held}/{} instances satisfy the noisy-risk bound; rows in {}", rows.len(), path.display());
    println!(
        "uniform noise eta={}: noisy minimizer differs from clean minimizer in {exp_moved}/{n} instances (exponential), {log_moved}/{n} (logistic)",
        cfg.demo_eta
    );
    if held < rows.len() {
        Err(Failure::Verification)
    } else {
        Ok(())
    }
}

pub fn report(common: &Common, inputs: &[PathBuf]) -> Outcome {
    let dir = out_dir(common)?;
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        vec![dir.join("results.csv")]
    } else {
        inputs.to_vec()
    };
    let mut rows = Vec::new();
    for p in &inputs {
        if !p.exists() {
            return Err(Failure::Config(format!("results table {} does not exist", p.display())));
        }
        rows.extend(read_results_csv(p)?);
    }
    let summary = aggregate(&rows);
    write_summary_csv(&summary, &dir.join("summary.csv"))?;
    let plot = dir.join("accuracy_vs_eta.dat");
    fs::write(&plot, gnuplot_table(&summary))
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", plot.display())))?;
    write_meta(&dir, "report", common)?;
    println!("{:<14} {:>5} {:>12} {:>9} {:>16}", "loss", "eta", "noise", "runs", "accuracy");
    for s in &summary {
        println!(
            "{:<14} {:>5} {:>12} {:>4}/{:<4} {:.4} ± {:.4}",
            s.setting_label(false),
            s.eta,
            s.noise_kind,
            s.ok_runs,
            s.runs,
            s.acc_mean,
            s.acc_std
        );
    }
    println!("{} rows -> {}", summary.len(), dir.join("summary.csv").display());
    Ok(())
}
