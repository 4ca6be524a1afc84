//! Feed-forward networks with explicit forward/backward passes.
//!
//! A model is a flat stack of dense layers and elementwise activations.
//! Each dense layer runs in one of two modes: a plain weight matrix, or
//! the factored form where the frozen bases bracket a small trainable
//! square. Backward produces gradients only for trainable tensors; in the
//! factored mode that is the square factor and the bias, never the bases.

pub mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{decompose_weight, LowRankWeight};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => 0.5 * z * (1.0 + gelu_inner(z).tanh()),
            Activation::Identity => z,
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = gelu_inner(z).tanh();
                let scale = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * (1.0 + t)
                    + 0.5 * z * (1.0 - t * t) * scale * (1.0 + 3.0 * 0.044715 * z * z)
            }
            Activation::Identity => 1.0,
        }
    }
}

fn gelu_inner(z: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z * z * z)
}

#[derive(Debug, Clone)]
pub enum LayerMode {
    Full(Matrix),
    LowRank(LowRankWeight),
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Index among the model's dense layers, 0-based in forward order.
    pub layer_id: usize,
    pub mode: LayerMode,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn out_features(&self) -> usize {
        match &self.mode {
            LayerMode::Full(w) => w.rows(),
            LayerMode::LowRank(w) => w.full_shape().0,
        }
    }

    pub fn in_features(&self) -> usize {
        match &self.mode {
            LayerMode::Full(w) => w.cols(),
            LayerMode::LowRank(w) => w.full_shape().1,
        }
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self.mode, LayerMode::LowRank(_))
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Act(Activation),
}

#[derive(Debug, Clone)]
pub struct SequentialModel {
    pub layers: Vec<Layer>,
}

/// Per-dense-layer gradients, aligned with `dense_layers()` order.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub layer_id: usize,
    pub weight: WeightGrad,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum WeightGrad {
    Full(Matrix),
    Sigma(Matrix),
}

pub type Gradients = Vec<LayerGrads>;

#[derive(Debug)]
enum StageCache {
    /// Input to a full-rank dense layer.
    DenseFull(Matrix),
    /// `x * v` of a factored dense layer, the only cached intermediate.
    DenseLowRank(Matrix),
    /// Pre-activation values.
    Act(Matrix),
}

#[derive(Debug)]
pub struct ForwardCache {
    batch: usize,
    stages: Vec<StageCache>,
}

impl SequentialModel {
    /// Multilayer perceptron over the given feature widths, `activation`
    /// between consecutive dense layers (none after the last). Weights are
    /// seeded uniform draws scaled to the fan-in (rectifier-aware for
    /// ReLU), biases zero.
    pub fn mlp(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {:?}",
                dims
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (layer_id, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let data = (0..fan_out * fan_in)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            let w = Matrix::from_vec(fan_out, fan_in, data)?;
            if layer_id > 0 {
                layers.push(Layer::Act(activation));
            }
            layers.push(Layer::Dense(DenseLayer {
                layer_id,
                mode: LayerMode::Full(w),
                bias: vec![0.0; fan_out],
            }));
        }
        Ok(SequentialModel { layers })
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Act(_) => None,
        })
    }

    pub fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Act(_) => None,
        })
    }

    pub fn num_dense_layers(&self) -> usize {
        self.dense_layers().count()
    }

    pub fn low_rank_layer_ids(&self) -> Vec<usize> {
        self.dense_layers()
            .filter(|d| d.is_low_rank())
            .map(|d| d.layer_id)
            .collect()
    }

    pub fn in_features(&self) -> usize {
        self.dense_layers()
            .next()
            .map(|d| d.in_features())
            .unwrap_or(0)
    }

    pub fn out_features(&self) -> usize {
        self.dense_layers()
            .last()
            .map(|d| d.out_features())
            .unwrap_or(0)
    }

    /// (trainable, total) parameter counts. In factored mode the bases are
    /// counted in the total but not as trainable.
    pub fn param_counts(&self) -> (usize, usize) {
        let mut trainable = 0;
        let mut total = 0;
        for d in self.dense_layers() {
            match &d.mode {
                LayerMode::Full(w) => {
                    let p = w.rows() * w.cols();
                    trainable += p;
                    total += p;
                }
                LayerMode::LowRank(w) => {
                    let (t, f) = w.param_counts();
                    trainable += t;
                    total += t + f;
                }
            }
            trainable += d.bias.len();
            total += d.bias.len();
        }
        (trainable, total)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let batch = x.rows();
        let mut cur = x.clone();
        let mut stages = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    if cur.cols() != d.in_features() {
                        return Err(Error::Data(format!(
                            "dense layer {} expects {} input features, got {}",
                            d.layer_id,
                            d.in_features(),
                            cur.cols()
                        )));
                    }
                    let (out, stage) = match &d.mode {
                        LayerMode::Full(w) => {
                            let y = cur.matmul_nt(w)?;
                            (y, StageCache::DenseFull(cur))
                        }
                        LayerMode::LowRank(w) => {
                            // (x v) sigma^T u^T keeps every intermediate at
                            // width r; the full weight is never formed.
                            let xv = cur.matmul(w.v())?;
                            let y = xv.matmul_nt(w.sigma())?.matmul_nt(w.u())?;
                            (y, StageCache::DenseLowRank(xv))
                        }
                    };
                    let mut out = out;
                    for i in 0..out.rows() {
                        for (o, b) in out.row_mut(i).iter_mut().zip(&d.bias) {
                            *o += b;
                        }
                    }
                    stages.push(stage);
                    cur = out;
                }
                Layer::Act(a) => {
                    stages.push(StageCache::Act(cur.clone()));
                    for z in cur.data_mut() {
                        *z = a.apply(*z);
                    }
                }
            }
        }
        Ok((cur, ForwardCache { batch, stages }))
    }

    /// Gradients for every trainable tensor given the loss gradient at the
    /// output. The cache must come from a `forward` call on this model
    /// with the same batch.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        if cache.stages.len() != self.layers.len() || cache.batch != loss_grad.rows() {
            return Err(Error::Internal(
                "stale forward cache passed to backward".into(),
            ));
        }
        let mut grad = loss_grad.clone();
        let mut out = Vec::new();
        for (layer, stage) in self.layers.iter().zip(&cache.stages).rev() {
            match (layer, stage) {
                (Layer::Dense(d), StageCache::DenseFull(x)) => {
                    let bias = column_sums(&grad);
                    // dW = g^T x, shaped out x in like the weight.
                    let gw = grad.matmul_tn(x)?;
                    let next = match &d.mode {
                        LayerMode::Full(w) => grad.matmul(w)?,
                        LayerMode::LowRank(_) => {
                            return Err(Error::Internal("cache/mode mismatch".into()))
                        }
                    };
                    out.push(LayerGrads {
                        layer_id: d.layer_id,
                        weight: WeightGrad::Full(gw),
                        bias,
                    });
                    grad = next;
                }
                (Layer::Dense(d), StageCache::DenseLowRank(xv)) => {
                    let w = match &d.mode {
                        LayerMode::LowRank(w) => w,
                        LayerMode::Full(_) => {
                            return Err(Error::Internal("cache/mode mismatch".into()))
                        }
                    };
                    let bias = column_sums(&grad);
                    let gu = grad.matmul(w.u())?;
                    // Gradient of the square factor: (g u)^T (x v), equal
                    // to u^T (dW) v without the out x in intermediate.
                    let gsigma = gu.matmul_tn(xv)?;
                    grad = gu.matmul(w.sigma())?.matmul_nt(w.v())?;
                    out.push(LayerGrads {
                        layer_id: d.layer_id,
                        weight: WeightGrad::Sigma(gsigma),
                        bias,
                    });
                }
                (Layer::Act(a), StageCache::Act(z)) => {
                    for (g, zv) in grad.data_mut().iter_mut().zip(z.data()) {
                        *g *= a.derivative(*zv);
                    }
                }
                _ => return Err(Error::Internal("cache/layer kind mismatch".into())),
            }
        }
        out.reverse();
        Ok(out)
    }

    /// Factorizes every dense weight except the optionally excluded first
    /// and last. Outputs are unchanged because the decomposition is exact
    /// at full rank.
    pub fn convert_to_low_rank(&mut self, exclude_first: bool, exclude_last: bool) -> Result<()> {
        let count = self.num_dense_layers();
        if count == 0 {
            return Err(Error::Config("model has no dense layers".into()));
        }
        for d in self.dense_layers_mut() {
            if (exclude_first && d.layer_id == 0) || (exclude_last && d.layer_id == count - 1) {
                continue;
            }
            match &d.mode {
                LayerMode::Full(w) => {
                    d.mode = LayerMode::LowRank(decompose_weight(w)?);
                }
                LayerMode::LowRank(_) => {
                    return Err(Error::Config(format!(
                        "dense layer {} is already in factored form",
                        d.layer_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}
