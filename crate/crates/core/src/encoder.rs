//! Small fully-connected encoder with hand-written backpropagation, projection
//! onto the unit sphere, temperature-scaled pair scores, and in-batch assembly
//! of per-anchor score batches.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::loss::ScoreBatch;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    fn id(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation id {other}"))),
        }
    }
}

/// Affine layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// `x -> normalize(W_L act(... act(W_1 x + b_1) ...) + b_L)`, plus the
/// temperature used when turning embeddings into scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    layers: Vec<Dense>,
    activation: Activation,
    temperature: f64,
}

/// Unit-norm embeddings, one per row, tagged with the index of the sample
/// each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Matrix,
    pub source: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Wrap raw vectors, normalizing every row.
    pub fn from_vectors(mut vectors: Matrix) -> Result<Self> {
        for i in 0..vectors.rows() {
            let r = vectors.row_mut(i);
            let n = norm(r);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            r.iter_mut().for_each(|x| *x /= n);
        }
        let source = (0..vectors.rows()).collect();
        Ok(Self { vectors, source })
    }

    pub fn concat(&self, other: &EmbeddingBatch) -> EmbeddingBatch {
        let mut source = self.source.clone();
        source.extend_from_slice(&other.source);
        EmbeddingBatch {
            vectors: self.vectors.vstack(&other.vectors),
            source,
        }
    }
}

/// Intermediate values from [`MlpEncoder::forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`layer_inputs[0]` is the batch itself).
    layer_inputs: Vec<Matrix>,
    /// Affine output of each layer before the activation.
    pre_activations: Vec<Matrix>,
    /// Euclidean norm of each final-layer output row.
    norms: Vec<f64>,
    embeddings: Matrix,
}

impl ForwardCache {
    /// Norms of the final-layer outputs before projection.
    pub fn pre_norms(&self) -> &[f64] {
        &self.norms
    }

    /// Final-layer outputs before projection.
    pub fn raw_outputs(&self) -> &Matrix {
        self.pre_activations.last().expect("encoder has at least one layer")
    }

    /// Input to layer `i`, i.e. the representation after `i` layers.
    pub fn layer_input(&self, i: usize) -> &Matrix {
        &self.layer_inputs[i]
    }
}

impl MlpEncoder {
    /// Build from explicit layers. Dimensions must chain and `temperature > 0`.
    pub fn from_layers(layers: Vec<Dense>, activation: Activation, temperature: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("encoder needs at least one layer".into()));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::InvalidSpec(format!("layer {i}: bias length does not match output width")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.input_dim() != l.output_dim() {
                    return Err(Error::InvalidSpec(format!(
                        "layer {} expects width {} but layer {i} produces {}",
                        i + 1,
                        next.input_dim(),
                        l.output_dim()
                    )));
                }
            }
        }
        Ok(Self {
            layers,
            activation,
            temperature,
        })
    }

    /// Random encoder with widths `dims = [d_in, hidden..., d_out]`. Weights and
    /// biases are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(dims: &[usize], activation: Activation, temperature: f64, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad encoder widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                let bias = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, weights),
                    bias,
                }
            })
            .collect();
        Self::from_layers(layers, activation, temperature)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    /// `[d_in, hidden..., d_out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::output_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mask that is `true` for weight entries and `false` for biases, in
    /// [`Self::params`] order.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(std::iter::repeat(true).take(l.weights.as_slice().len()));
            out.extend(std::iter::repeat(false).take(l.bias.len()));
        }
        out
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(EmbeddingBatch, ForwardCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input width {} does not match encoder input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = current.matmul_t(&layer.weights);
            for i in 0..pre.rows() {
                for (p, b) in pre.row_mut(i).iter_mut().zip(&layer.bias) {
                    *p += b;
                }
            }
            let next = if li < last {
                let mut a = pre.clone();
                a.as_mut_slice().iter_mut().for_each(|x| *x = self.activation.apply(*x));
                a
            } else {
                pre.clone()
            };
            layer_inputs.push(current);
            pre_activations.push(pre);
            current = next;
        }
        let mut norms = Vec::with_capacity(current.rows());
        for i in 0..current.rows() {
            let r = current.row_mut(i);
            let n = norm(r);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            r.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        let emb = EmbeddingBatch {
            vectors: current.clone(),
            source: (0..current.rows()).collect(),
        };
        Ok((
            emb,
            ForwardCache {
                layer_inputs,
                pre_activations,
                norms,
                embeddings: current,
            },
        ))
    }

    /// Embed without keeping the cache.
    pub fn embed(&self, inputs: &Matrix) -> Result<EmbeddingBatch> {
        self.forward(inputs).map(|(e, _)| e)
    }

    /// Gradient of a scalar loss with respect to every parameter, in
    /// [`Self::params`] order, given `d loss / d embeddings`.
    pub fn backward(&self, cache: &ForwardCache, grad_embeddings: &Matrix) -> Result<Vec<f64>> {
        let n = cache.embeddings.rows();
        if grad_embeddings.rows() != n || grad_embeddings.cols() != self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "embedding gradient is {}x{}, expected {}x{}",
                grad_embeddings.rows(),
                grad_embeddings.cols(),
                n,
                self.output_dim()
            )));
        }
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::InvalidInput("forward cache does not match this encoder".into()));
        }

        // through u = z / |z|: dz = (du - u (u . du)) / |z|
        let mut upstream = Matrix::zeros(n, self.output_dim());
        for i in 0..n {
            let u = cache.embeddings.row(i);
            let g = grad_embeddings.row(i);
            let ug = dot(u, g);
            let inv = 1.0 / cache.norms[i];
            for ((o, &gi), &ui) in upstream.row_mut(i).iter_mut().zip(g).zip(u) {
                *o = (gi - ui * ug) * inv;
            }
        }

        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.layer_inputs[li];
            let pre = &cache.pre_activations[li];
            let mut delta = upstream;
            if li < last {
                for (d, &p) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *d *= self.activation.derivative(p);
                }
            }
            let mut gw = Matrix::zeros(layer.output_dim(), layer.input_dim());
            let mut gb = vec![0.0; layer.output_dim()];
            // fixed row order keeps the reduction bit-deterministic
            for r in 0..n {
                let d = delta.row(r);
                let a = input.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    gb[o] += dv;
                    if dv != 0.0 {
                        for (g, &av) in gw.row_mut(o).iter_mut().zip(a) {
                            *g += dv * av;
                        }
                    }
                }
            }
            upstream = delta.matmul(&layer.weights);
            layer_grads.push((gw.into_vec(), gb));
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in layer_grads.into_iter().rev() {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok(flat)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dims = self.dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&self.activation.id().to_le_bytes())?;
        w.write_all(&self.temperature.to_le_bytes())?;
        for l in &self.layers {
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_dims = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(Error::Checkpoint(format!("implausible layer count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            let d = read_u64(&mut r)?;
            if d == 0 || d > 1 << 20 {
                return Err(Error::Checkpoint(format!("implausible width {d}")));
            }
            dims.push(d as usize);
        }
        let activation = Activation::from_id(read_u32(&mut r)?)?;
        let temperature = read_f64(&mut r)?;
        let mut layers = Vec::with_capacity(n_dims - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = (0..fan_in * fan_out).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            let bias = (0..fan_out).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                weights: Matrix::from_vec(fan_out, fan_in, weights),
                bias,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last layer".into()));
        }
        Self::from_layers(layers, activation, temperature)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RLABENC\0";
const CHECKPOINT_VERSION: u32 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Checkpoint(format!("truncated: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// `scores[i][j] = <a_i, b_j> / t`.
pub fn pair_score_matrix(a: &EmbeddingBatch, b: &EmbeddingBatch, t: f64) -> Result<Matrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {t}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut s = a.vectors.matmul_t(&b.vectors);
    s.as_mut_slice().iter_mut().for_each(|x| *x /= t);
    Ok(s)
}

/// Back-propagate `d loss / d scores` through `scores = E E^T / t`.
pub fn self_score_backward(embeddings: &Matrix, grad_scores: &Matrix, t: f64) -> Matrix {
    let sym = {
        let mut g = grad_scores.clone();
        let gt = grad_scores.transpose();
        for (a, b) in g.as_mut_slice().iter_mut().zip(gt.as_slice()) {
            *a = (*a + b) / t;
        }
        g
    };
    sym.matmul(embeddings)
}

/// Which entries of a score row are negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Square score matrix over all `2N` views: negatives are every column
    /// except the anchor itself and its partner (`K = 2N - 2`).
    TwoView,
    /// Anchor-by-view score matrix: negatives are every view except the
    /// partner (`K = N - 1`).
    OneSided,
}

/// One anchor's [`ScoreBatch`] plus the score-matrix coordinates it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorScores {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub batch: ScoreBatch,
}

/// Build per-anchor score batches from an in-batch score matrix.
///
/// Self-pairs and the positive partner are removed from the negative set by
/// index; nothing is subtracted from a row sum.
pub fn assemble_score_batches(
    scores: &Matrix,
    partner: &[usize],
    mode: NegativeMode,
) -> Result<Vec<AnchorScores>> {
    let rows = scores.rows();
    if partner.len() != rows {
        return Err(Error::InvalidInput(format!(
            "pairing map has {} entries for {rows} rows",
            partner.len()
        )));
    }
    let pairs = match mode {
        NegativeMode::TwoView => {
            if rows != scores.cols() || rows % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "two-view scores must be square with an even number of rows, got {}x{}",
                    rows,
                    scores.cols()
                )));
            }
            rows / 2
        }
        NegativeMode::OneSided => {
            if rows != scores.cols() {
                return Err(Error::InvalidInput("one-sided scores must be N x N".into()));
            }
            rows
        }
    };
    if pairs < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: pairs });
    }
    partner
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p >= scores.cols() || (mode == NegativeMode::TwoView && (p == i || partner[p] != i)) {
                return Err(Error::InvalidInput(format!("invalid partner {p} for view {i}")));
            }
            let negatives: Vec<usize> = (0..scores.cols())
                .filter(|&j| j != p && !(mode == NegativeMode::TwoView && j == i))
                .collect();
            let batch = ScoreBatch::new(scores[(i, p)], negatives.iter().map(|&j| scores[(i, j)]).collect())?;
            Ok(AnchorScores {
                anchor: i,
                positive: p,
                negatives,
                batch,
            })
        })
        .collect()
}

/// Standard two-view pairing: view `i` of the first half is partnered with
/// view `i` of the second half.
pub fn two_view_pairing(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect()
}
