//! Synthetic two-view data. Latent samples sit around unit-norm class
//! centres; a "view" of a sample is a fresh Gaussian perturbation of it,
//! projected back to the sphere. Three noise processes produce false
//! positive pairs, and every pair keeps a ground-truth noise flag.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::rng::{gaussian, substream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// Class `c` sits on basis axis `c` (mutually orthogonal centres).
    #[default]
    Orthogonal,
    /// Centred orthonormal frame, i.e. a regular simplex (antipodal for two classes).
    Simplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub num_classes: usize,
    pub dim: usize,
    #[serde(default)]
    pub layout: CenterLayout,
    /// Spread of latent samples around their class centre.
    pub sigma: f64,
    /// Perturbation used to draw a view of a latent sample; defaults to `sigma`.
    #[serde(default)]
    pub view_sigma: Option<f64>,
    pub samples_per_class: usize,
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidSpec(format!("ambient dimension must be >= 2, got {}", self.dim)));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        let view_sigma = self.view_sigma.unwrap_or(self.sigma);
        if !(self.sigma >= 0.0) || !(view_sigma >= 0.0) || !self.sigma.is_finite() || !view_sigma.is_finite() {
            return Err(Error::InvalidSpec("perturbation scales must be finite and >= 0".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidSpec("samples_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub view_sigma: f64,
}

/// Unit-norm class centres, one per row.
pub fn class_centers(num_classes: usize, dim: usize, layout: CenterLayout) -> Matrix {
    let mut centers = Matrix::zeros(num_classes, dim);
    if dim >= num_classes {
        for c in 0..num_classes {
            centers[(c, c)] = 1.0;
        }
        if layout == CenterLayout::Simplex {
            let mean = 1.0 / num_classes as f64;
            for c in 0..num_classes {
                let row = centers.row_mut(c);
                for v in row.iter_mut().take(num_classes) {
                    *v -= mean;
                }
                let n = norm(row);
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    } else {
        // not enough axes: spread evenly on a great circle
        for c in 0..num_classes {
            let a = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
            centers[(c, 0)] = a.cos();
            centers[(c, 1)] = a.sin();
        }
    }
    centers
}

fn perturb_onto_sphere(base: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = base.iter().map(|b| b + sigma * gaussian(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn random_direction(dim: usize, rng: &mut Rng) -> Vec<f64> {
    perturb_onto_sphere(&vec![0.0; dim], 1.0, rng)
}

pub fn generate_dataset(spec: &LatentSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let centers = class_centers(spec.num_classes, spec.dim, spec.layout);
    let mut rng = substream(seed, Stream::Data);
    let n = spec.num_classes * spec.samples_per_class;
    let mut samples = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.num_classes {
        for k in 0..spec.samples_per_class {
            let row = c * spec.samples_per_class + k;
            let v = if spec.sigma == 0.0 {
                centers.row(c).to_vec()
            } else {
                perturb_onto_sphere(centers.row(c), spec.sigma, &mut rng)
            };
            samples.row_mut(row).copy_from_slice(&v);
            labels.push(c);
        }
    }
    Ok(Dataset {
        samples,
        labels,
        num_classes: spec.num_classes,
        view_sigma: spec.view_sigma.unwrap_or(spec.sigma),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// A fresh random view of sample `i`.
    pub fn view(&self, i: usize, rng: &mut Rng) -> Vec<f64> {
        if self.view_sigma == 0.0 {
            self.samples.row(i).to_vec()
        } else {
            perturb_onto_sphere(self.samples.row(i), self.view_sigma, rng)
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.to_string()];
            rec.extend(self.samples.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a dataset written by [`Self::write_csv`]. The view perturbation is
    /// not stored in the file and must be supplied.
    pub fn read_csv(path: &Path, view_sigma: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let dim = r.headers()?.len().saturating_sub(1);
        if dim < 2 {
            return Err(Error::InvalidSpec(format!("{}: need a label and >= 2 coordinates", path.display())));
        }
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |what: &str| Error::InvalidInput(format!("{}: row {}: bad {what}", path.display(), line + 1));
            labels.push(rec[0].trim().parse::<usize>().map_err(|_| parse_err("label"))?);
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|_| parse_err("coordinate"))?);
            }
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            samples: Matrix::from_vec(labels.len(), dim, data),
            labels,
            num_classes,
            view_sigma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// With probability eta the view comes from an independent sample.
    #[default]
    Mixture,
    /// Positives are two samples sharing an observed label; labels were
    /// flipped to a paired class with probability eta/2.
    LabelFlip,
    /// With probability eta the view is replaced by a random direction.
    Corruption,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Mixture => "mixture",
            NoiseKind::LabelFlip => "label_flip",
            NoiseKind::Corruption => "corruption",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub rate: f64,
    /// Class involution for label flips; defaults to `2k <-> 2k+1`.
    #[serde(default)]
    pub pairing: Option<Vec<usize>>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64) -> Result<Self> {
        let s = Self {
            kind,
            rate,
            pairing: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidSpec(format!("noise rate must lie in [0, 1], got {}", self.rate)));
        }
        Ok(())
    }

    pub fn pairing_for(&self, num_classes: usize) -> Vec<usize> {
        self.pairing.clone().unwrap_or_else(|| default_pairing(num_classes))
    }
}

/// `2k <-> 2k+1`; with an odd class count the last class maps to itself.
pub fn default_pairing(num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|c| {
            let partner = c ^ 1;
            if partner < num_classes {
                partner
            } else {
                c
            }
        })
        .collect()
}

/// A batch of (anchor, view) inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub anchors: Matrix,
    pub views: Matrix,
    /// True class of each anchor's source sample.
    pub labels: Vec<usize>,
    /// `true` marks a false positive.
    pub noise_flags: Vec<bool>,
    pub kind: NoiseKind,
    pub anchor_source: Vec<usize>,
    /// Source sample of each view; `None` for a corrupted view.
    pub view_source: Vec<Option<usize>>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noise_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.noise_flags.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }
}

struct PairBuilder {
    anchors: Vec<f64>,
    views: Vec<f64>,
    labels: Vec<usize>,
    flags: Vec<bool>,
    anchor_source: Vec<usize>,
    view_source: Vec<Option<usize>>,
}

impl PairBuilder {
    fn with_capacity(n: usize, dim: usize) -> Self {
        Self {
            anchors: Vec::with_capacity(n * dim),
            views: Vec::with_capacity(n * dim),
            labels: Vec::with_capacity(n),
            flags: Vec::with_capacity(n),
            anchor_source: Vec::with_capacity(n),
            view_source: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, anchor: Vec<f64>, view: Vec<f64>, label: usize, flag: bool, a: usize, v: Option<usize>) {
        self.anchors.extend(anchor);
        self.views.extend(view);
        self.labels.push(label);
        self.flags.push(flag);
        self.anchor_source.push(a);
        self.view_source.push(v);
    }

    fn finish(self, dim: usize, kind: NoiseKind) -> PairBatch {
        let n = self.labels.len();
        PairBatch {
            anchors: Matrix::from_vec(n, dim, self.anchors),
            views: Matrix::from_vec(n, dim, self.views),
            labels: self.labels,
            noise_flags: self.flags,
            kind,
            anchor_source: self.anchor_source,
            view_source: self.view_source,
        }
    }
}

/// Draw `n` pairs under the given noise process.
///
/// `observed_labels` is only consulted for [`NoiseKind::LabelFlip`], where it
/// holds the (possibly flipped) labels the learner sees; pass the output of
/// [`flip_labels`] computed once per run.
pub fn sample_pair_batch(
    data: &Dataset,
    n: usize,
    noise: &NoiseSpec,
    observed_labels: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<PairBatch> {
    noise.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot sample pairs from an empty dataset".into()));
    }
    let dim = data.dim();
    match noise.kind {
        NoiseKind::Mixture => Ok(mixture_pairs(data, n, noise.rate, rng)),
        NoiseKind::Corruption => {
            let clean = mixture_pairs(data, n, 0.0, rng);
            let mut b = corrupt_views(&clean, noise.rate, rng);
            b.kind = NoiseKind::Corruption;
            Ok(b)
        }
        NoiseKind::LabelFlip => {
            let observed = observed_labels.unwrap_or(&data.labels);
            if observed.len() != data.len() {
                return Err(Error::InvalidInput("observed label count does not match dataset".into()));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes.max(1)];
            for (i, &l) in observed.iter().enumerate() {
                if l >= by_class.len() {
                    by_class.resize(l + 1, Vec::new());
                }
                by_class[l].push(i);
            }
            let mut out = PairBuilder::with_capacity(n, dim);
            for _ in 0..n {
                let i = rng.gen_range(0..data.len());
                let peers = &by_class[observed[i]];
                let j = if peers.len() > 1 {
                    loop {
                        let j = *peers.choose(rng).expect("non-empty");
                        if j != i {
                            break j;
                        }
                    }
                } else {
                    i
                };
                let flag = data.labels[i] != data.labels[j];
                out.push(data.view(i, rng), data.view(j, rng), data.labels[i], flag, i, Some(j));
            }
            Ok(out.finish(dim, NoiseKind::LabelFlip))
        }
    }
}

fn mixture_pairs(data: &Dataset, n: usize, eta: f64, rng: &mut Rng) -> PairBatch {
    let dim = data.dim();
    let mut out = PairBuilder::with_capacity(n, dim);
    for _ in 0..n {
        let i = rng.gen_range(0..data.len());
        let noisy = eta > 0.0 && rng.gen::<f64>() < eta;
        let j = if noisy { rng.gen_range(0..data.len()) } else { i };
        out.push(data.view(i, rng), data.view(j, rng), data.labels[i], noisy, i, Some(j));
    }
    out.finish(dim, NoiseKind::Mixture)
}

/// Flip each label to its paired class with probability `eta / 2`.
/// Returns the observed labels and a per-label flip flag.
pub fn flip_labels(labels: &[usize], eta: f64, pairing: &[usize], rng: &mut Rng) -> Result<(Vec<usize>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidSpec(format!("flip rate must lie in [0, 1], got {eta}")));
    }
    for (c, &p) in pairing.iter().enumerate() {
        if p >= pairing.len() || pairing[p] != c {
            return Err(Error::InvalidSpec(format!("class pairing is not an involution at class {c}")));
        }
    }
    let mut flags = Vec::with_capacity(labels.len());
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let target = *pairing
            .get(l)
            .ok_or_else(|| Error::InvalidSpec(format!("label {l} has no entry in the class pairing")))?;
        let flip = rng.gen::<f64>() < eta / 2.0 && target != l;
        out.push(if flip { target } else { l });
        flags.push(flip);
    }
    Ok((out, flags))
}

/// Replace each view, with probability `eta`, by a uniformly random unit
/// direction that shares nothing with its anchor.
pub fn corrupt_views(batch: &PairBatch, eta: f64, rng: &mut Rng) -> PairBatch {
    let mut out = batch.clone();
    if eta <= 0.0 {
        return out;
    }
    let dim = batch.views.cols();
    for i in 0..batch.len() {
        if rng.gen::<f64>() < eta {
            out.views.row_mut(i).copy_from_slice(&random_direction(dim, rng));
            out.noise_flags[i] = true;
            out.view_source[i] = None;
        }
    }
    out
}

/// Random permutation with no fixed points (rejection sampling).
pub fn derangement(n: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(n >= 2, "a derangement needs at least two elements");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64) -> LatentSpec {
        LatentSpec {
            num_classes: 4,
            dim: 8,
            layout: CenterLayout::Orthogonal,
            sigma,
            view_sigma: None,
            samples_per_class: 25,
        }
    }

    #[test]
    fn zero_sigma_collapses_to_centers() {
        let d = generate_dataset(&spec(0.0), 1).unwrap();
        let centers = class_centers(4, 8, CenterLayout::Orthogonal);
        for (i, &l) in d.labels.iter().enumerate() {
            assert_eq!(d.samples.row(i), centers.row(l));
        }
    }

    #[test]
    fn two_class_layouts() {
        let o = class_centers(2, 2, CenterLayout::Orthogonal);
        assert!(crate::linalg::dot(o.row(0), o.row(1)).abs() < 1e-15);
        let s = class_centers(2, 2, CenterLayout::Simplex);
        assert!((crate::linalg::dot(s.row(0), s.row(1)) + 1.0).abs() < 1e-15);
        let few = class_centers(5, 3, CenterLayout::Orthogonal);
        for r in few.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0.1);
        s.dim = 1;
        assert!(matches!(generate_dataset(&s, 0), Err(Error::InvalidSpec(_))));
        let mut s = spec(0.1);
        s.num_classes = 1;
        assert!(generate_dataset(&s, 0).is_err());
        assert!(generate_dataset(&spec(-1.0), 0).is_err());
    }

    #[test]
    fn mixture_extremes() {
        let d = generate_dataset(&spec(0.1), 2).unwrap();
        let mut rng = substream(2, Stream::Noise);
        let clean = sample_pair_batch(&d, 200, &NoiseSpec::new(NoiseKind::Mixture, 0.0).unwrap(), None, &mut rng).unwrap();
        assert!(clean.noise_flags.iter().all(|f| !f));
        assert!(clean.anchor_source.iter().zip(&clean.view_source).all(|(a, v)| Some(*a) == *v));
        let noisy = sample_pair_batch(&d, 200, &NoiseSpec::new(NoiseKind::Mixture, 1.0).unwrap(), None, &mut rng).unwrap();
        assert!(noisy.noise_flags.iter().all(|f| *f));
    }

    #[test]
    fn flip_labels_checks_involution() {
        let mut rng = substream(0, Stream::Noise);
        assert!(flip_labels(&[0, 1], 0.5, &[1, 2, 0], &mut rng).is_err());
        let (l, f) = flip_labels(&[0, 1, 2, 3], 0.0, &default_pairing(4), &mut rng).unwrap();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(f.iter().all(|x| !x));
        assert_eq!(default_pairing(5), vec![1, 0, 3, 2, 4]);
    }

    #[test]
    fn label_flip_pairs_share_observed_label() {
        let d = generate_dataset(&spec(0.1), 4).unwrap();
        let mut rng = substream(4, Stream::Noise);
        let (obs, _) = flip_labels(&d.labels, 0.6, &default_pairing(4), &mut rng).unwrap();
        let b = sample_pair_batch(&d, 300, &NoiseSpec::new(NoiseKind::LabelFlip, 0.6).unwrap(), Some(&obs), &mut rng)
            .unwrap();
        for k in 0..b.len() {
            let (i, j) = (b.anchor_source[k], b.view_source[k].unwrap());
            assert_eq!(obs[i], obs[j]);
            assert_eq!(b.noise_flags[k], d.labels[i] != d.labels[j]);
        }
        assert!(b.noise_rate() > 0.0);
    }

    #[test]
    fn corruption_identity_at_zero() {
        let d = generate_dataset(&spec(0.1), 5).unwrap();
        let mut rng = substream(5, Stream::Noise);
        let b = sample_pair_batch(&d, 50, &NoiseSpec::new(NoiseKind::Mixture, 0.0).unwrap(), None, &mut rng).unwrap();
        assert_eq!(corrupt_views(&b, 0.0, &mut rng), b);
    }

    #[test]
    fn csv_round_trip() {
        let d = generate_dataset(&spec(0.2), 6).unwrap();
        let dir = std::env::temp_dir().join(format!("rince-lab-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, d.view_sigma).unwrap();
        assert_eq!(back, d);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,x0,x1"));
        assert!(!text.contains('\r'));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = substream(9, Stream::Custom(1));
        for n in 2..20 {
            let p = derangement(n, &mut rng);
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }
}
