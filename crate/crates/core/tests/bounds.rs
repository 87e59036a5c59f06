use rince_lab::data::generate_dataset;
use rince_lab::divergence::{mi_lower_bound, wdm_check_for_encoder, wdm_condition, HeadChoice};
use rince_lab::encoder::Activation;
use rince_lab::loss::{RinceParams, ScoreBatch};
use rince_lab::rng::{gaussian, substream, Stream};
use rince_lab::train::{train_contrastive, EncoderSpec, LossKind, TrainConfig};

fn unit(dim: usize, rng: &mut rince_lab::rng::Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn independent_pairs_carry_no_information() {
    let mut rng = substream(21, Stream::Custom(0));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let batches: Vec<ScoreBatch> = (0..1000)
        .map(|_| {
            let anchor = unit(16, &mut rng);
            let positive = unit(16, &mut rng);
            let negatives = (0..8).map(|_| dot(&anchor, &unit(16, &mut rng))).collect();
            ScoreBatch::new(dot(&anchor, &positive), negatives).unwrap()
        })
        .collect();
    let bound = mi_lower_bound(&batches).unwrap();
    assert!(bound.abs() <= 0.1, "bound {bound}");
}

#[test]
fn matched_pairs_approach_log_candidates() {
    let batches: Vec<ScoreBatch> = (0..10).map(|_| ScoreBatch::new(40.0, vec![0.0; 8]).unwrap()).collect();
    let bound = mi_lower_bound(&batches).unwrap();
    assert!((bound - 9f64.ln()).abs() < 1e-9);
    assert!(bound <= 9f64.ln() * (1.0 + 1e-9));
}

fn trained_toy_encoder(seed: u64) -> (rince_lab::encoder::MlpEncoder, rince_lab::data::Dataset) {
    let mut cfg = TrainConfig {
        loss: LossKind::Rince,
        epochs: 40,
        steps_per_epoch: 2,
        seed,
        encoder: EncoderSpec {
            hidden: vec![32],
            output_dim: 8,
            activation: Activation::Relu,
            temperature: 1.0,
        },
        ..TrainConfig::default()
    };
    cfg.data.samples_per_class = 50;
    let data = cfg.dataset().unwrap();
    let (enc, _) = train_contrastive(&cfg, &data).unwrap();
    (enc, data)
}

#[test]
fn bound_holds_for_a_trained_encoder() {
    let params = RinceParams::new(1.0, 0.5).unwrap();
    for seed in 0..3 {
        let (enc, data) = trained_toy_encoder(seed);
        for eta in [0.0, 0.5] {
            assert!(wdm_condition(0.5, 2, eta));
            let r = wdm_check_for_encoder(&enc, &data, HeadChoice::Identity, &params, 2, eta, 64, seed).unwrap();
            assert!(r.holds(), "seed {seed}, eta {eta}: slack {} half-width {}", r.slack, r.half_width);
            assert!(r.w1 >= 0.0 && r.lip == 1.0);
        }
    }
}

#[test]
fn bound_holds_with_the_last_layer_as_head() {
    let params = RinceParams::new(1.0, 0.5).unwrap();
    let (enc, data) = trained_toy_encoder(7);
    for eta in [0.0, 0.5] {
        let r = wdm_check_for_encoder(&enc, &data, HeadChoice::LastLayer, &params, 2, eta, 64, 7).unwrap();
        assert!(r.lip > 0.0 && r.lip.is_finite());
        assert!(r.holds(), "eta {eta}: slack {} half-width {}", r.slack, r.half_width);
    }
}

#[test]
fn bound_requires_q_one() {
    let mut spec = rince_lab::train::trainer::default_latent_spec();
    spec.samples_per_class = 10;
    let data = generate_dataset(&spec, 0).unwrap();
    let (enc, _) = trained_toy_encoder(0);
    let params = RinceParams::new(0.5, 0.5).unwrap();
    let err = wdm_check_for_encoder(&enc, &data, HeadChoice::Identity, &params, 2, 0.0, 16, 0).unwrap_err();
    assert!(matches!(err, rince_lab::Error::TheoremInapplicable(_)), "{err:?}");
}
