use rince_lab::encoder::{Activation, MlpEncoder};
use rince_lab::linalg::Matrix;
use rince_lab::loss::RinceParams;
use rince_lab::objective::{ContrastiveLoss, Masking};
use rince_lab::rng::{gaussian, substream, Stream};
use rince_lab::verify::encoder_fd_error;

fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = substream(seed, Stream::Custom(40));
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| gaussian(&mut rng)).collect())
}

#[test]
fn encoder_gradients_match_central_differences() {
    let losses = [
        ContrastiveLoss::InfoNce,
        ContrastiveLoss::Rince(RinceParams::new(0.5, 0.01).unwrap()),
        ContrastiveLoss::Rince(RinceParams::new(1.0, 0.5).unwrap()),
    ];
    for (seed, loss) in losses.iter().enumerate() {
        let enc = MlpEncoder::init(&[6, 10, 4], Activation::Tanh, 0.5, &mut substream(seed as u64, Stream::Init)).unwrap();
        let x = random_inputs(5, 6, seed as u64);
        let v = random_inputs(5, 6, 100 + seed as u64);
        for masking in [Masking::TwoView, Masking::OneSided] {
            let err = encoder_fd_error(&enc, &x, &v, loss, masking).unwrap();
            assert!(err <= 1e-5, "{loss:?} {masking:?}: {err}");
        }
    }
    let enc = MlpEncoder::init(&[6, 10, 4], Activation::Tanh, 0.5, &mut substream(9, Stream::Init)).unwrap();
    let err = encoder_fd_error(&enc, &random_inputs(4, 6, 1), &random_inputs(4, 6, 2), &ContrastiveLoss::InfoNce, Masking::SubtractConstant).unwrap();
    assert!(err <= 1e-5, "subtract-constant: {err}");
}

/// Plain triple-loop forward pass, written without any of the library's
/// matrix helpers.
fn naive_forward(enc: &MlpEncoder, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    let last = enc.layers().len() - 1;
    for (li, layer) in enc.layers().iter().enumerate() {
        let w = &layer.weights;
        let mut out = vec![0.0; w.rows()];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = layer.bias[r];
            for c in 0..w.cols() {
                acc += w.row(r)[c] * h[c];
            }
            *o = if li == last {
                acc
            } else {
                match enc.activation() {
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => acc.tanh(),
                }
            };
        }
        h = out;
    }
    let n = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    h.iter().map(|x| x / n).collect()
}

#[test]
fn forward_matches_naive_reimplementation() {
    for act in [Activation::Relu, Activation::Tanh] {
        let enc = MlpEncoder::init(&[7, 12, 5], act, 1.0, &mut substream(3, Stream::Init)).unwrap();
        let x = random_inputs(20, 7, 5);
        let emb = enc.embed(&x).unwrap();
        for i in 0..20 {
            let expected = naive_forward(&enc, x.row(i));
            for (a, b) in emb.vectors.row(i).iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12, "{act:?} row {i}");
            }
            let n: f64 = emb.vectors.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-9);
        }
    }
}
