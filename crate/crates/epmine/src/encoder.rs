//! Small MLP embedding function with unit-sphere output, trained by SGD with
//! a step-decay schedule. Stands in for a pretrained CNN backbone at desk
//! scale; everything is f64 and deterministic given the seeds.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{sample_group_batch, LabeledDataset, SamplerConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, Matrix};
use crate::losses::{compute_loss, triplet_margin_loss, LossConfig, LossStrategy};

#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    /// Weight scale; actual std is init_scale / sqrt(fan_in). The default
    /// sqrt(2) gives He initialization for ReLU layers.
    pub init_scale: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, embed_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: vec![64],
            embed_dim,
            init_scale: std::f64::consts::SQRT_2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be >= 2".into()));
        }
        if self.input_dim < 1 || self.hidden_dims.iter().any(|&d| d < 1) {
            return Err(Error::Config("all dims must be >= 1".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.embed_dim));
        dims
    }
}

/// One affine layer, weights stored input-major (in x out).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            w: Matrix::zeros(self.w.rows, self.w.cols),
            b: vec![0.0; self.b.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().unwrap().w.cols
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }
}

pub fn init_params(cfg: &MlpConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = cfg
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let std = cfg.init_scale / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_in, fan_out);
            for v in &mut w.data {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
            Layer {
                w,
                b: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (first entry is the raw batch).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Matrix>,
    /// Final affine output before normalization.
    pre_norm: Matrix,
    norms: Vec<f64>,
}

fn affine(x: &Matrix, layer: &Layer) -> Matrix {
    let mut out = Matrix::zeros(x.rows, layer.w.cols);
    for i in 0..x.rows {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(&layer.b);
        for (k, &xv) in xi.iter().enumerate() {
            let wrow = layer.w.row(k);
            for (j, o) in oi.iter_mut().enumerate() {
                *o += xv * wrow[j];
            }
        }
    }
    out
}

pub fn forward(params: &MlpParams, x: &Matrix) -> Result<(EmbeddingMatrix, ForwardCache)> {
    if x.cols != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.cols,
        });
    }
    let mut layer_inputs = vec![x.clone()];
    let mut hidden_pre = Vec::new();
    let n_hidden = params.layers.len() - 1;
    let mut h = x.clone();
    for layer in &params.layers[..n_hidden] {
        let z = affine(&h, layer);
        hidden_pre.push(z.clone());
        let mut a = z;
        for v in &mut a.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        layer_inputs.push(a.clone());
        h = a;
    }
    let pre_norm = affine(&h, params.layers.last().unwrap());
    let mut norms = Vec::with_capacity(pre_norm.rows);
    let mut out = pre_norm.clone();
    for i in 0..pre_norm.rows {
        let r = dot(pre_norm.row(i), pre_norm.row(i)).sqrt();
        if r <= 1e-12 {
            return Err(Error::ZeroRow(i));
        }
        for v in out.row_mut(i) {
            *v /= r;
        }
        norms.push(r);
    }
    Ok((
        EmbeddingMatrix::from_unit_rows(out),
        ForwardCache {
            layer_inputs,
            hidden_pre,
            pre_norm,
            norms,
        },
    ))
}

/// Backpropagate d(loss)/d(normalized embedding) to parameter gradients.
/// The normalization layer applies the projection Jacobian (I - ee^T)/r.
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_e: &Matrix) -> Result<MlpParams> {
    let embed_dim = params.embed_dim();
    if grad_e.cols != embed_dim || grad_e.rows != cache.pre_norm.rows {
        return Err(Error::ShapeMismatch(format!(
            "grad_e is {}x{}, expected {}x{}",
            grad_e.rows, grad_e.cols, cache.pre_norm.rows, embed_dim
        )));
    }
    let b = grad_e.rows;
    let mut grads = params.zeros_like();

    // through the normalization: g_v = (g - (g . e_hat) e_hat) / r
    let mut grad_out = Matrix::zeros(b, embed_dim);
    for i in 0..b {
        let r = cache.norms[i];
        let v = cache.pre_norm.row(i);
        let g = grad_e.row(i);
        let ghat: f64 = g.iter().zip(v).map(|(gk, vk)| gk * vk / r).sum();
        for (k, o) in grad_out.row_mut(i).iter_mut().enumerate() {
            *o = (g[k] - ghat * v[k] / r) / r;
        }
    }

    for li in (0..params.layers.len()).rev() {
        let input = &cache.layer_inputs[li];
        let glayer = &mut grads.layers[li];
        for i in 0..b {
            let xi = input.row(i);
            let gi = grad_out.row(i);
            for (k, &xv) in xi.iter().enumerate() {
                let wrow = glayer.w.row_mut(k);
                for (j, &gv) in gi.iter().enumerate() {
                    wrow[j] += xv * gv;
                }
            }
            for (j, &gv) in gi.iter().enumerate() {
                glayer.b[j] += gv;
            }
        }
        if li == 0 {
            break;
        }
        // grad wrt this layer's input, then through the preceding ReLU
        let w = &params.layers[li].w;
        let mut grad_in = Matrix::zeros(b, w.rows);
        for i in 0..b {
            let gi = grad_out.row(i);
            let oi = grad_in.row_mut(i);
            for (k, o) in oi.iter_mut().enumerate() {
                *o = dot(w.row(k), gi);
            }
        }
        let pre = &cache.hidden_pre[li - 1];
        for (g, &z) in grad_in.data.iter_mut().zip(&pre.data) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        grad_out = grad_in;
    }
    Ok(grads)
}

/// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    lr: f64,
    momentum: f64,
    velocity: &mut MlpParams,
) {
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        for ((pw, gw), vw) in p.w.data.iter_mut().zip(&g.w.data).zip(&mut v.w.data) {
            *vw = momentum * *vw + gw;
            *pw -= lr * *vw;
        }
        for ((pb, gb), vb) in p.b.iter_mut().zip(&g.b).zip(&mut v.b) {
            *vb = momentum * *vb + gb;
            *pb -= lr * *vb;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            base_lr: 0.0005,
            lr_decay_epochs: vec![20, 30],
            lr_decay_factor: 0.1,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("lr_decay_epochs must be strictly increasing".into()));
        }
        if self.epochs > 0 && self.lr_decay_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(Error::Config("lr_decay_epochs must be < epochs".into()));
        }
        Ok(())
    }
}

/// Step-decay schedule: base_lr * factor^(number of decay epochs <= epoch).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
    cfg.base_lr * cfg.lr_decay_factor.powi(decays as i32)
}

#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub batches: Vec<BatchRecord>,
    pub epoch_mean_loss: Vec<f64>,
}

const BATCH_RESAMPLE_LIMIT: usize = 100;

/// Full training loop: group-batch sampling, forward, loss, backward, SGD.
/// An epoch is ceil(dataset size / batch size) batches. Batches without a
/// usable triplet are resampled.
pub fn train(
    ds: &LabeledDataset,
    mlp_cfg: &MlpConfig,
    sampler_cfg: &SamplerConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(MlpParams, TrainLog)> {
    mlp_cfg.validate()?;
    sampler_cfg.validate()?;
    loss_cfg.validate()?;
    train_cfg.validate()?;
    if ds.dim() != mlp_cfg.input_dim {
        return Err(Error::DimensionMismatch {
            expected: mlp_cfg.input_dim,
            got: ds.dim(),
        });
    }
    let mut params = init_params(mlp_cfg)?;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches_per_epoch = ds.len().div_ceil(sampler_cfg.batch_size);
    let mut log = TrainLog::default();

    for epoch in 0..train_cfg.epochs {
        let lr = lr_at_epoch(train_cfg, epoch);
        let mut epoch_sum = 0.0;
        for batch_idx in 0..batches_per_epoch {
            let mut attempt = 0;
            let (loss, grads) = loop {
                let batch = match sample_group_batch(ds, sampler_cfg, &mut rng) {
                    Ok(b) => b,
                    Err(Error::NoPositivePair) if attempt < BATCH_RESAMPLE_LIMIT => {
                        attempt += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let x = ds.features_of(&batch.indices);
                let (e, cache) = forward(&params, &x)?;
                let out = match loss_cfg.strategy {
                    LossStrategy::TripletMargin => {
                        triplet_margin_loss(&e, &batch.labels, loss_cfg, &mut rng)
                    }
                    _ => compute_loss(&e, &batch.labels, loss_cfg),
                };
                match out {
                    Ok(out) => {
                        let grads = backward(&params, &cache, &out.grad)?;
                        break (out.loss, grads);
                    }
                    Err(Error::NoValidTriplet) if attempt < BATCH_RESAMPLE_LIMIT => {
                        attempt += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            };
            sgd_step(&mut params, &grads, lr, train_cfg.momentum, &mut velocity);
            epoch_sum += loss;
            log.batches.push(BatchRecord {
                epoch,
                batch: batch_idx,
                loss,
                lr,
            });
        }
        log.epoch_mean_loss
            .push(epoch_sum / batches_per_epoch as f64);
    }
    Ok((params, log))
}

const MLP1_MAGIC: &[u8; 4] = b"MLP1";

/// Checkpoint layout: "MLP1", u32 layer count, per-layer (u32 in, u32 out),
/// then per layer the f64 LE weights row-major followed by biases.
pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MLP1_MAGIC)?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for l in &params.layers {
        w.write_all(&(l.w.rows as u32).to_le_bytes())?;
        w.write_all(&(l.w.cols as u32).to_le_bytes())?;
    }
    for l in &params.layers {
        for v in &l.w.data {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &l.b {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MLP1_MAGIC {
        return Err(Error::ParseError {
            path: path.into(),
            line: 0,
            msg: "bad magic, expected MLP1".into(),
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        dims.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(count);
    for (rows, cols) in dims {
        let mut w = Matrix::zeros(rows, cols);
        for v in &mut w.data {
            *v = read_f64(&mut r)?;
        }
        let mut b = vec![0.0; cols];
        for v in &mut b {
            *v = read_f64(&mut r)?;
        }
        layers.push(Layer { w, b });
    }
    if layers.is_empty() {
        return Err(Error::ParseError {
            path: path.into(),
            line: 0,
            msg: "checkpoint has no layers".into(),
        });
    }
    Ok(MlpParams { layers })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
