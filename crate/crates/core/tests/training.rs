use rince_lab::data::{NoiseKind, NoiseSpec};
use rince_lab::encoder::MlpEncoder;
use rince_lab::rng::{substream, Stream};
use rince_lab::train::sweep::expand_grid;
use rince_lab::train::{
    evaluate_run, linear_probe, run_sweep, train_contrastive, AdamConfig, LossKind, ProbeConfig, RunHistory,
    SweepGrid, SweepLoss, TrainConfig,
};
use rand::seq::SliceRandom;

fn toy(loss: LossKind, eta: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        loss,
        seed,
        noise: NoiseSpec::new(NoiseKind::Mixture, eta).unwrap(),
        ..TrainConfig::default()
    };
    cfg.rince.q = 0.5;
    cfg
}

#[test]
fn zero_learning_rate_leaves_weights_at_initialization() {
    let mut cfg = toy(LossKind::Rince, 0.2, 3);
    cfg.epochs = 5;
    cfg.optimizer = AdamConfig {
        learning_rate: 0.0,
        ..AdamConfig::default()
    };
    let data = cfg.dataset().unwrap();
    let (enc, _) = train_contrastive(&cfg, &data).unwrap();
    let init = MlpEncoder::init(
        &cfg.encoder_dims(),
        cfg.encoder.activation,
        cfg.encoder.temperature,
        &mut substream(cfg.seed, Stream::Init),
    )
    .unwrap();
    assert_eq!(enc.params(), init.params());
}

#[test]
fn clean_toy_data_gives_a_strong_probe_for_either_loss() {
    for loss in [LossKind::InfoNce, LossKind::Rince] {
        let mut cfg = toy(loss, 0.0, 1);
        cfg.epochs = 50;
        cfg.data.sigma = 0.1;
        let data = cfg.dataset().unwrap();
        let (enc, _) = train_contrastive(&cfg, &data).unwrap();
        let eval = evaluate_run(&enc, &cfg, &data).unwrap();
        assert!(eval.probe.accuracy >= 0.95, "{loss:?}: probe accuracy {}", eval.probe.accuracy);
        assert!(eval.audit.is_none(), "no noisy pairs at eta = 0");
    }
}

#[test]
fn rince_scores_separate_noisy_pairs() {
    // longer budget than the benchmark default: 8 batches per epoch
    for seed in 0..3 {
        let mut cfg = toy(LossKind::Rince, 0.4, seed);
        cfg.steps_per_epoch = 8;
        let data = cfg.dataset().unwrap();
        let (enc, _) = train_contrastive(&cfg, &data).unwrap();
        let audit = evaluate_run(&enc, &cfg, &data).unwrap().audit.unwrap();
        assert!(audit.auroc >= 0.8, "seed {seed}: AUROC {}", audit.auroc);
        assert!(audit.mean_noisy < audit.mean_clean);
    }
}

#[test]
fn noisy_positives_score_below_clean_ones() {
    for (loss, eta) in [LossKind::InfoNce, LossKind::Rince].into_iter().flat_map(|l| [(l, 0.2), (l, 0.4), (l, 0.8)]) {
        let cfg = toy(loss, eta, 2);
        let data = cfg.dataset().unwrap();
        let (enc, history) = train_contrastive(&cfg, &data).unwrap();
        let audit = evaluate_run(&enc, &cfg, &data).unwrap().audit.unwrap();
        assert!(audit.mean_noisy <= audit.mean_clean, "{loss:?} at eta {eta}: {audit:?}");
        let last = history.epochs.last().unwrap();
        assert!(last.mean_pos_noisy.is_some() && last.mean_pos_clean.is_some());
    }
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let cfg = toy(LossKind::InfoNce, 0.0, 4);
    let data = cfg.dataset().unwrap();
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut labels = data.labels.clone();
        labels.shuffle(&mut substream(seed, Stream::Custom(77)));
        let probe = linear_probe(&data.samples, &labels, &ProbeConfig::default(), seed).unwrap();
        accs.push(probe.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.05, "mean shuffled accuracy {mean} ({accs:?})");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut cfg = toy(LossKind::Rince, 0.4, 9);
    cfg.epochs = 20;
    let data = cfg.dataset().unwrap();
    let (a, ha) = train_contrastive(&cfg, &data).unwrap();
    let (b, hb) = train_contrastive(&cfg, &data).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.params(), b.params());
    let dir = std::env::temp_dir().join(format!("rince-lab-history-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("history.csv");
    ha.write_csv(&path).unwrap();
    let back = RunHistory::read_csv(&path).unwrap();
    assert_eq!(back.epochs, ha.epochs);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn clean_sweep_is_stable_across_seeds() {
    let grid = SweepGrid {
        losses: vec![SweepLoss::InfoNce],
        etas: vec![0.0],
        seeds: vec![0, 1, 2],
        lambdas: None,
    };
    let base = TrainConfig::default();
    assert_eq!(expand_grid(&base, &grid).unwrap().len(), 3);
    let rows = run_sweep(&base, &grid, 2).unwrap();
    assert_eq!(rows.len(), 3);
    let accs: Vec<f64> = rows.iter().map(|r| r.probe_acc.unwrap()).collect();
    let (_, std) = rince_lab::train::sweep::mean_std(&accs);
    assert!(std <= 0.05, "accuracy std {std} ({accs:?})");
    assert!(rows.iter().all(|r| r.is_ok()));
}

#[test]
fn empty_sweep_axis_is_rejected() {
    let grid = SweepGrid {
        losses: vec![],
        ..SweepGrid::default()
    };
    assert!(run_sweep(&TrainConfig::default(), &grid, 1).is_err());
}
