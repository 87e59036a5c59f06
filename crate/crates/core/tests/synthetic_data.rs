use rince_lab::data::{
    corrupt_views, default_pairing, flip_labels, generate_dataset, sample_pair_batch, CenterLayout, LatentSpec,
    NoiseKind, NoiseSpec,
};
use rince_lab::linalg::{dot, Matrix};
use rince_lab::rng::{substream, Stream};
use rince_lab::train::{linear_probe, ProbeConfig};

fn spec(sigma: f64, per_class: usize) -> LatentSpec {
    LatentSpec {
        num_classes: 4,
        dim: 16,
        layout: CenterLayout::Orthogonal,
        sigma,
        view_sigma: None,
        samples_per_class: per_class,
    }
}

#[test]
fn mixture_flag_rate_concentrates() {
    let data = generate_dataset(&spec(0.3, 50), 1).unwrap();
    let noise = NoiseSpec::new(NoiseKind::Mixture, 0.4).unwrap();
    let batch = sample_pair_batch(&data, 10_000, &noise, None, &mut substream(1, Stream::Noise)).unwrap();
    let rate = batch.noise_rate();
    assert!((rate - 0.4).abs() <= 0.015, "flag rate {rate}");
}

#[test]
fn mixture_flags_mark_independent_views() {
    let data = generate_dataset(&spec(0.3, 50), 2).unwrap();
    let noise = NoiseSpec::new(NoiseKind::Mixture, 0.5).unwrap();
    let batch = sample_pair_batch(&data, 2000, &noise, None, &mut substream(2, Stream::Noise)).unwrap();
    for i in 0..batch.len() {
        if !batch.noise_flags[i] {
            assert_eq!(batch.view_source[i], Some(batch.anchor_source[i]));
        }
    }
    // A noisy view's class is independent of the anchor's: about 1/C agree.
    let noisy: Vec<usize> = (0..batch.len()).filter(|&i| batch.noise_flags[i]).collect();
    let same = noisy
        .iter()
        .filter(|&&i| data.labels[batch.view_source[i].unwrap()] == batch.labels[i])
        .count() as f64
        / noisy.len() as f64;
    assert!((same - 0.25).abs() < 0.05, "same-class fraction {same}");
}

#[test]
fn label_flip_fraction_concentrates() {
    let labels: Vec<usize> = (0..10_000).map(|i| i % 4).collect();
    let (observed, flags) = flip_labels(&labels, 0.8, &default_pairing(4), &mut substream(3, Stream::Noise)).unwrap();
    let frac = flags.iter().filter(|&&f| f).count() as f64 / labels.len() as f64;
    assert!((frac - 0.4).abs() <= 0.015, "flip fraction {frac}");
    for ((&l, &o), &f) in labels.iter().zip(&observed).zip(&flags) {
        assert_eq!(f, l != o);
        if f {
            assert_eq!(o, l ^ 1);
        }
    }
    let (_, flags) = flip_labels(&labels, 1.0, &default_pairing(4), &mut substream(4, Stream::Noise)).unwrap();
    let frac = flags.iter().filter(|&&f| f).count() as f64 / labels.len() as f64;
    assert!((frac - 0.5).abs() <= 0.015);
}

#[test]
fn corruption_rate_and_independence() {
    let data = generate_dataset(&spec(0.1, 50), 5).unwrap();
    let clean = sample_pair_batch(&data, 10_000, &NoiseSpec::new(NoiseKind::Mixture, 0.0).unwrap(), None, &mut substream(5, Stream::Noise)).unwrap();
    let corrupted = corrupt_views(&clean, 0.5, &mut substream(5, Stream::Custom(9)));
    let rate = corrupted.noise_rate();
    assert!((rate - 0.5).abs() <= 0.015, "corruption rate {rate}");
    let mut inner = 0.0;
    let mut n = 0.0;
    for i in 0..corrupted.len() {
        let v = corrupted.views.row(i);
        assert!((dot(v, v) - 1.0).abs() < 1e-9);
        if corrupted.noise_flags[i] {
            inner += dot(corrupted.anchors.row(i), v);
            n += 1.0;
        } else {
            assert_eq!(corrupted.views.row(i), clean.views.row(i));
        }
    }
    // random directions in 16 dimensions: the mean inner product with the anchor is ~0
    assert!((inner / n).abs() < 0.02, "mean inner product {}", inner / n);
}

#[test]
fn noise_extremes() {
    let data = generate_dataset(&spec(0.3, 20), 6).unwrap();
    for kind in [NoiseKind::Mixture, NoiseKind::Corruption] {
        let none = sample_pair_batch(&data, 500, &NoiseSpec::new(kind, 0.0).unwrap(), None, &mut substream(6, Stream::Noise)).unwrap();
        assert!(none.noise_flags.iter().all(|&f| !f));
        let all = sample_pair_batch(&data, 500, &NoiseSpec::new(kind, 1.0).unwrap(), None, &mut substream(6, Stream::Noise)).unwrap();
        assert!(all.noise_flags.iter().all(|&f| f));
    }
}

#[test]
fn class_marginals_are_balanced() {
    let data = generate_dataset(&spec(0.3, 100), 7).unwrap();
    let batch = sample_pair_batch(&data, 8000, &NoiseSpec::new(NoiseKind::Mixture, 0.6).unwrap(), None, &mut substream(7, Stream::Noise)).unwrap();
    for c in 0..4 {
        let anchors = batch.labels.iter().filter(|&&l| l == c).count() as f64 / 8000.0;
        let views = batch.view_source.iter().filter(|v| data.labels[v.unwrap()] == c).count() as f64 / 8000.0;
        assert!((anchors - 0.25).abs() < 0.02 && (views - 0.25).abs() < 0.02, "class {c}: {anchors} {views}");
    }
}

#[test]
fn raw_inputs_are_linearly_separable_at_low_noise() {
    let data = generate_dataset(&spec(0.1, 100), 8).unwrap();
    let probe = linear_probe(&data.samples, &data.labels, &ProbeConfig::default(), 8).unwrap();
    assert!(probe.accuracy >= 0.99, "raw probe accuracy {}", probe.accuracy);
}

#[test]
fn samples_and_views_are_unit_norm_and_seeded() {
    let a = generate_dataset(&spec(0.3, 30), 9).unwrap();
    let b = generate_dataset(&spec(0.3, 30), 9).unwrap();
    assert_eq!(a, b);
    let rows: &Matrix = &a.samples;
    for r in rows.iter_rows() {
        assert!((dot(r, r) - 1.0).abs() < 1e-9);
    }
    let c = generate_dataset(&spec(0.3, 30), 10).unwrap();
    assert_ne!(a.samples, c.samples);
}
