//! The training loop and the post-training evaluation of one run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{flip_labels, generate_dataset, sample_pair_batch, Dataset, LatentSpec, NoiseKind, NoiseSpec};
use crate::encoder::{Activation, MlpEncoder};
use crate::error::{Error, Result};
use crate::loss::{q_warmup, RinceParams};
use crate::objective::{encoder_objective, ContrastiveLoss, Masking};
use crate::rng::{substream, Stream};

use super::adam::{Adam, AdamConfig};
use super::audit::{positive_score_audit, AuditResult};
use super::probe::{linear_probe, ProbeConfig, ProbeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    InfoNce,
    #[default]
    Rince,
}

/// When the q-warmup schedule advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warmup {
    /// Constant `q` from the RINCE parameters.
    #[default]
    Off,
    /// `q = q_warmup(e / (epochs - 1))` for epoch `e`.
    Epoch,
    /// `q = q_warmup(s / (total_steps - 1))` for optimizer step `s`.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub temperature: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            output_dim: 8,
            activation: Activation::Relu,
            temperature: 0.5,
        }
    }
}

/// Everything that defines one training run. Every field has a default, so
/// a config file only needs the keys it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub rince: RinceParams,
    pub warmup: Warmup,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches of `batch_size` pairs per epoch. Pairs are drawn with
    /// replacement, so an "epoch" is a fixed step budget rather than a pass
    /// over the dataset.
    pub steps_per_epoch: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub masking: Masking,
    pub noise: NoiseSpec,
    pub data: LatentSpec,
    pub probe: ProbeConfig,
    /// Size of the fresh pair batch used for the positive-score audit.
    pub audit_pairs: usize,
}

pub fn default_latent_spec() -> LatentSpec {
    LatentSpec {
        num_classes: 4,
        dim: 16,
        layout: Default::default(),
        sigma: 0.3,
        view_sigma: None,
        samples_per_class: 500,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Rince,
            rince: RinceParams::default(),
            warmup: Warmup::Off,
            epochs: 100,
            batch_size: 64,
            steps_per_epoch: 1,
            optimizer: AdamConfig::default(),
            seed: 0,
            encoder: EncoderSpec::default(),
            masking: Masking::TwoView,
            noise: NoiseSpec {
                kind: NoiseKind::Mixture,
                rate: 0.0,
                pairing: None,
            },
            data: default_latent_spec(),
            probe: ProbeConfig::default(),
            audit_pairs: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall {
                min: 2,
                got: self.batch_size,
            });
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidParameter("steps_per_epoch must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.rince.validate()?;
        self.noise.validate()?;
        self.data.validate()?;
        if self.loss == LossKind::InfoNce && self.warmup != Warmup::Off {
            return Err(Error::InvalidParameter("q-warmup only applies to the RINCE loss".into()));
        }
        if self.encoder.output_dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(Error::InvalidSpec("encoder widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.data.dim];
        dims.extend(&self.encoder.hidden);
        dims.push(self.encoder.output_dim);
        dims
    }

    pub fn contrastive_loss(&self, q: f64) -> Result<ContrastiveLoss> {
        Ok(match self.loss {
            LossKind::InfoNce => ContrastiveLoss::InfoNce,
            LossKind::Rince => ContrastiveLoss::Rince(self.rince.at_q(q)?),
        })
    }

    /// The dataset this config describes, drawn from the run seed.
    pub fn dataset(&self) -> Result<Dataset> {
        generate_dataset(&self.data, self.seed)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Mean positive score of clean training pairs (`None` if there were none).
    pub mean_pos_clean: Option<f64>,
    pub mean_pos_noisy: Option<f64>,
    /// `q` used during the epoch (last step's value under step warmup);
    /// `None` for InfoNCE.
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Where the final encoder was saved, if it was.
    pub checkpoint: Option<PathBuf>,
}

impl RunHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self {
            epochs,
            checkpoint: None,
        })
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Labels the learner observes: flipped once per run under label-flip
/// noise, the true labels otherwise.
pub fn observed_labels(config: &TrainConfig, dataset: &Dataset) -> Result<Vec<usize>> {
    if config.noise.kind == NoiseKind::LabelFlip {
        let pairing = config.noise.pairing_for(dataset.num_classes);
        let (obs, _) = flip_labels(&dataset.labels, config.noise.rate, &pairing, &mut substream(config.seed, Stream::Noise))?;
        Ok(obs)
    } else {
        Ok(dataset.labels.clone())
    }
}

fn progress(i: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

fn mean_of(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Train an encoder with Adam on the batch-mean contrastive loss.
///
/// All randomness comes from `config.seed`: initial weights from the init
/// substream, flipped labels from the noise substream, pair batches from the
/// batch substream. The same config therefore gives bit-identical output.
pub fn train_contrastive(config: &TrainConfig, dataset: &Dataset) -> Result<(MlpEncoder, RunHistory)> {
    config.validate()?;
    if dataset.dim() != config.data.dim {
        return Err(Error::InvalidInput(format!(
            "dataset has dimension {} but the config expects {}",
            dataset.dim(),
            config.data.dim
        )));
    }
    let mut enc = MlpEncoder::init(
        &config.encoder_dims(),
        config.encoder.activation,
        config.encoder.temperature,
        &mut substream(config.seed, Stream::Init),
    )?;
    let observed = observed_labels(config, dataset)?;
    let mut batch_rng = substream(config.seed, Stream::Batches);
    let mut adam = Adam::new(config.optimizer, enc.num_params())?;
    let decay_mask = enc.weight_mask();
    let steps = config.steps_per_epoch;
    let total_steps = steps * config.epochs;

    let mut history = RunHistory::default();
    let mut params = enc.params();
    for epoch in 0..config.epochs {
        let mut q = match config.warmup {
            Warmup::Off => config.rince.q,
            Warmup::Epoch => q_warmup(progress(epoch, config.epochs), &config.rince)?,
            Warmup::Step => config.rince.q,
        };
        let (mut loss_sum, mut clean_sum, mut noisy_sum) = (0.0, 0.0, 0.0);
        let (mut n_clean, mut n_noisy) = (0, 0);
        for step in 0..steps {
            if config.warmup == Warmup::Step {
                q = q_warmup(progress(epoch * steps + step, total_steps), &config.rince)?;
            }
            let loss = config.contrastive_loss(q)?;
            let batch = sample_pair_batch(dataset, config.batch_size, &config.noise, Some(&observed), &mut batch_rng)?;
            let obj = match encoder_objective(&enc, &batch.anchors, &batch.views, &loss, config.masking) {
                Ok(o) => o,
                Err(Error::DegenerateEmbedding { .. }) => return Err(Error::TrainingDiverged { epoch }),
                Err(e) => return Err(e),
            };
            if !obj.loss.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += obj.loss;
            for (s, &noisy) in obj.positive_scores.iter().zip(&batch.noise_flags) {
                if noisy {
                    noisy_sum += s;
                    n_noisy += 1;
                } else {
                    clean_sum += s;
                    n_clean += 1;
                }
            }
            adam.step(&mut params, &obj.grad, &decay_mask)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            enc.set_params(&params)?;
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / steps as f64,
            mean_pos_clean: mean_of(clean_sum, n_clean),
            mean_pos_noisy: mean_of(noisy_sum, n_noisy),
            q: (config.loss == LossKind::Rince).then_some(q),
        });
    }
    Ok((enc, history))
}

/// Linear probe and noise audit of a trained encoder.
#[derive(Debug, Clone)]
pub struct RunEvaluation {
    pub probe: ProbeResult,
    /// `None` when the audit batch holds no noisy pair (e.g. at zero noise).
    pub audit: Option<AuditResult>,
}

pub fn evaluate_run(enc: &MlpEncoder, config: &TrainConfig, dataset: &Dataset) -> Result<RunEvaluation> {
    let features = enc.embed(&dataset.samples)?;
    let probe = linear_probe(&features.vectors, &dataset.labels, &config.probe, config.seed)?;
    let observed = observed_labels(config, dataset)?;
    let batch = sample_pair_batch(
        dataset,
        config.audit_pairs,
        &config.noise,
        Some(&observed),
        &mut substream(config.seed, Stream::Custom(1)),
    )?;
    let audit = match positive_score_audit(enc, &batch) {
        Ok(a) => Some(a),
        Err(Error::InsufficientClasses(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunEvaluation { probe, audit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            steps_per_epoch: 2,
            data: LatentSpec {
                samples_per_class: 10,
                ..default_latent_spec()
            },
            ..Default::default()
        }
    }

    #[test]
    fn history_has_one_row_per_epoch() {
        let cfg = small();
        let (_, h) = train_contrastive(&cfg, &cfg.dataset().unwrap()).unwrap();
        assert_eq!(h.epochs.len(), 3);
        assert!(h.epochs.iter().all(|r| r.q == Some(0.5)));
    }

    #[test]
    fn epoch_warmup_is_recorded() {
        let cfg = TrainConfig {
            warmup: Warmup::Epoch,
            ..small()
        };
        let (_, h) = train_contrastive(&cfg, &cfg.dataset().unwrap()).unwrap();
        let qs: Vec<f64> = h.epochs.iter().map(|r| r.q.unwrap()).collect();
        for (e, q) in qs.iter().enumerate() {
            assert_eq!(*q, q_warmup(e as f64 / 2.0, &cfg.rince).unwrap());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let d = small().dataset().unwrap();
        for cfg in [
            TrainConfig { epochs: 0, ..small() },
            TrainConfig { batch_size: 1, ..small() },
            TrainConfig {
                optimizer: AdamConfig {
                    learning_rate: -1.0,
                    ..Default::default()
                },
                ..small()
            },
        ] {
            assert!(train_contrastive(&cfg, &d).is_err());
        }
    }

    #[test]
    fn huge_learning_rate_on_tanh_stays_finite_or_reports_divergence() {
        let cfg = TrainConfig {
            optimizer: AdamConfig {
                learning_rate: 1e300,
                ..Default::default()
            },
            ..small()
        };
        match train_contrastive(&cfg, &cfg.dataset().unwrap()) {
            Ok((enc, _)) => assert!(enc.params().iter().all(|p| p.is_finite())),
            Err(e) => assert!(matches!(e, Error::TrainingDiverged { .. }), "{e}"),
        }
    }
}
