//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line to
//! stderr (bypassing the test harness's capture) and the test fails at the
//! end if any criterion failed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rince_lab::data::{NoiseKind, NoiseSpec};
use rince_lab::train::{run_sweep, SweepGrid, SweepLoss, SweepRow, TrainConfig};
use rince_lab::verify::{self, Check};

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: u32, passed: bool, detail: String) {
    let line = format!("criterion {id}: {} - {detail}", if passed { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    out.push(Outcome { id, passed, detail });
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn checks_line(checks: &[Check], elapsed: Duration, limit: Duration) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed) && elapsed < limit;
    let detail = checks
        .iter()
        .map(|c| format!("[{}] {}", if c.passed { "ok" } else { "failed" }, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, format!("{detail} ({:.2?} < {:?})", elapsed, limit))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_acc(rows: &[SweepRow], q: Option<f64>, eta: f64) -> f64 {
    mean(
        rows.iter()
            .filter(|r| r.q == q && r.eta == eta)
            .map(|r| r.probe_acc.expect("successful run")),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rince-lab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rince-lab-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn trend_checks(rows: &[SweepRow], eta: f64) -> (bool, String) {
    let info = mean_acc(rows, None, eta);
    let r05 = mean_acc(rows, Some(0.5), eta);
    let r001 = mean_acc(rows, Some(0.01), eta);
    let ok = r05 >= info && (r001 - info).abs() <= 0.03;
    (
        ok,
        format!("eta={eta}: InfoNCE {info:.4}, q=0.5 {r05:.4}, q=0.01 {r001:.4} (|diff| {:.4})", (r001 - info).abs()),
    )
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    let s = Duration::from_secs;

    let (c, t) = timed(|| verify::check_symmetry(10_000, 0));
    let (ok, d) = checks_line(&[c], t, s(1));
    report(&mut out, 1, ok, d);

    let (c, t) = timed(|| verify::check_small_q_limit(100, 0));
    let (ok, d) = checks_line(&[c], t, s(1));
    report(&mut out, 2, ok, d);

    let (c, t) = timed(|| vec![verify::check_loss_gradients(1_000, 0), verify::check_encoder_gradients(4, 0)]);
    let (ok, d) = checks_line(&c, t, s(30));
    report(&mut out, 3, ok, d);

    let (c, t) = timed(|| verify::check_gradient_ordering(201));
    let (ok, d) = checks_line(&[c], t, s(1));
    report(&mut out, 4, ok, d);

    let (c, t) = timed(|| verify::check_corollary(200, 0));
    let (ok, d) = checks_line(&[c], t, s(10));
    report(&mut out, 5, ok, d);

    let (c, t) = timed(|| vec![verify::check_wdm_bound(20, 5), verify::check_w1_solver(100, 0)]);
    let (ok, d) = checks_line(&c, t, s(300));
    report(&mut out, 6, ok, d);

    // Criteria 7 and 8: the default sweep under mixture noise, plus label flips at 0.8.
    let base = TrainConfig::default();
    let grid = SweepGrid::default();
    let start = Instant::now();
    let rows = run_sweep(&base, &grid, 1).expect("sweep runs");
    let flip_base = TrainConfig {
        noise: NoiseSpec::new(NoiseKind::LabelFlip, 0.0).unwrap(),
        ..TrainConfig::default()
    };
    let flip_grid = SweepGrid {
        losses: vec![SweepLoss::InfoNce, SweepLoss::Rince { q: 0.01 }, SweepLoss::Rince { q: 0.5 }],
        etas: vec![0.8],
        ..SweepGrid::default()
    };
    let flip_rows = run_sweep(&flip_base, &flip_grid, 1).expect("label-flip sweep runs");
    let sweep_time = start.elapsed();
    let failed_cells = rows.iter().chain(&flip_rows).filter(|r| !r.is_ok()).count();
    if failed_cells == 0 {
        let info0 = mean_acc(&rows, None, 0.0);
        let r0 = mean_acc(&rows, Some(0.5), 0.0);
        let a = (r0 - info0).abs() <= 0.05;
        let (b6, d6) = trend_checks(&rows, 0.6);
        let (b8, d8) = trend_checks(&rows, 0.8);
        let (c8, dc) = trend_checks(&flip_rows, 0.8);
        let ok = a && b6 && b8 && c8 && sweep_time < s(1800);
        report(
            &mut out,
            7,
            ok,
            format!(
                "(a) eta=0: InfoNCE {info0:.4}, q=0.5 {r0:.4} [{}]; (b) {d6} [{}]; {d8} [{}]; (c) label flip {dc} [{}] ({:.1?})",
                if a { "ok" } else { "failed" },
                if b6 { "ok" } else { "failed" },
                if b8 { "ok" } else { "failed" },
                if c8 { "ok" } else { "failed" },
                sweep_time
            ),
        );

        let at = |q: Option<f64>| -> Vec<&SweepRow> { rows.iter().filter(|r| r.q == q && r.eta == 0.4).collect() };
        let (info, rince) = (at(None), at(Some(0.5)));
        let below = info
            .iter()
            .chain(&rince)
            .all(|r| matches!((r.mean_pos_noisy, r.mean_pos_clean), (Some(n), Some(c)) if n < c));
        let wins = info
            .iter()
            .zip(&rince)
            .filter(|(i, r)| {
                assert_eq!(i.seed, r.seed);
                i.mean_pos_noisy.unwrap_or(f64::NAN) >= r.mean_pos_noisy.unwrap_or(f64::NAN)
            })
            .count();
        let fmt = |rs: &[&SweepRow]| {
            rs.iter()
                .map(|r| format!("{:.3}/{:.3}", r.mean_pos_noisy.unwrap_or(f64::NAN), r.mean_pos_clean.unwrap_or(f64::NAN)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        report(
            &mut out,
            8,
            below && wins >= 4,
            format!(
                "noisy<clean on every run: {below}; InfoNCE noisy s+ >= RINCE noisy s+ on {wins}/5 seeds; noisy/clean InfoNCE [{}] RINCE q=0.5 [{}]",
                fmt(&info),
                fmt(&rince)
            ),
        );
    } else {
        report(&mut out, 7, false, format!("{failed_cells} sweep cells did not finish"));
        report(&mut out, 8, false, "sweep incomplete".into());
    }

    // Criterion 9: determinism through the binary.
    let start = Instant::now();
    let dir = scratch("determinism");
    let (a, b) = (dir.join("a"), dir.join("b"));
    let ra = run(&["train", "--seed", "11", "--out", a.to_str().unwrap()]);
    let rb = run(&["train", "--seed", "11", "--out", b.to_str().unwrap()]);
    let ha = read(&a.join("history.csv"));
    let same_history = ra.status.success() && rb.status.success() && !ha.is_empty() && ha == read(&b.join("history.csv"));
    let (j1, j4) = (dir.join("j1"), dir.join("j4"));
    let s1 = run(&["sweep", "--quick", "--jobs", "1", "--out", j1.to_str().unwrap()]);
    let s4 = run(&["sweep", "--quick", "--jobs", "4", "--out", j4.to_str().unwrap()]);
    let t1 = read(&j1.join("results.csv"));
    let same_table = s1.status.success() && s4.status.success() && !t1.is_empty() && t1 == read(&j4.join("results.csv"));
    let elapsed = start.elapsed();
    report(
        &mut out,
        9,
        same_history && same_table && elapsed < s(300),
        format!(
            "train history byte-identical: {same_history} ({} bytes); sweep --jobs 1 vs --jobs 4 identical: {same_table} ({} bytes) ({:.1?})",
            ha.len(),
            t1.len(),
            elapsed
        ),
    );
    let _ = std::fs::remove_dir_all(&dir);

    let failed: Vec<String> = out.iter().filter(|o| !o.passed).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

#[test]
fn cli_contract() {
    let start = Instant::now();
    let quick = run(&["verify", "--quick"]);
    assert!(quick.status.success(), "{}", String::from_utf8_lossy(&quick.stdout));
    assert!(start.elapsed() < Duration::from_secs(60));

    let missing = run(&["train", "--config", "missing.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.json"));

    let dir = scratch("report");
    let d = dir.to_str().unwrap();
    assert!(run(&["sweep", "--quick", "--out", d]).status.success());
    let rep = run(&["report", "--out", d]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    // quick sweep: 5 loss settings x 2 noise rates
    assert_eq!(summary.lines().count() - 1, 5 * 2);
    assert!(dir.join("accuracy_vs_eta.dat").exists());
    let _ = std::fs::remove_dir_all(&dir);
}
