//! The embedding network: an input projection, a stack of residual subspace
//! blocks and an output projection followed by per-point L2 normalization.
//!
//! Activations are laid out H×N (one column per point), so every dense layer
//! is a single matrix product over the whole instance. Normalization
//! statistics are computed over the points of the instance being processed,
//! both in training and at inference.
//!
//! One block maps the residual stream `x` to
//!
//! ```text
//! h = relu(W1 · zscore(x) + b1)
//! x' = x + relu(W2 · zscore(h) + b2)
//! ```
//!
//! so a block whose second layer is all zeros is the identity.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, OptimizerBlob};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Added to the variance before taking the square root in z-score layers.
pub const ZSCORE_EPS: f64 = 1e-10;
/// Columns with a smaller norm are not rescaled by the output normalization.
const MIN_NORM: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 2 points to normalize, got {0}")]
    TooFewPoints(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

fn default_width() -> usize {
    128
}
fn default_blocks() -> usize {
    50
}
fn default_output_dim() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default = "default_true")]
    pub use_l2norm_output: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, hidden_width: usize, num_blocks: usize, output_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden_width,
            num_blocks,
            output_dim,
            use_l2norm_output: true,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(NetworkError::Config("input_dim must be positive".into()));
        }
        if self.num_blocks == 0 {
            return Err(NetworkError::Config("num_blocks must be at least 1".into()));
        }
        if self.output_dim < 2 {
            return Err(NetworkError::Config("output_dim must be at least 2".into()));
        }
        if self.hidden_width < self.output_dim {
            return Err(NetworkError::Config(format!(
                "hidden_width {} is smaller than output_dim {}",
                self.hidden_width, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden_width, self.output_dim);
        h * d + h + self.num_blocks * 2 * (h * h + h) + k * h + k
    }
}

/// A fully connected layer `y = W x + b` applied column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn glorot(out_dim: usize, in_dim: usize, rng: &mut rng::Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || rng.gen_range(-a..a)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = self.weight.dot(&x);
        for (mut row, b) in y.outer_iter_mut().zip(self.bias.iter()) {
            row += *b;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub first: Dense,
    pub second: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub input: Dense,
    pub blocks: Vec<Block>,
    pub output: Dense,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let (d, h, k) = (config.input_dim, config.hidden_width, config.output_dim);
        NetworkParams {
            input: Dense::zeros(h, d),
            blocks: (0..config.num_blocks)
                .map(|_| Block {
                    first: Dense::zeros(h, h),
                    second: Dense::zeros(h, h),
                })
                .collect(),
            output: Dense::zeros(k, h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense {
            weight: Array2::zeros(d.weight.raw_dim()),
            bias: Array1::zeros(d.bias.len()),
        };
        NetworkParams {
            input: z(&self.input),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    first: z(&b.first),
                    second: z(&b.second),
                })
                .collect(),
            output: z(&self.output),
        }
    }

    fn layers(&self) -> Vec<(String, &Dense)> {
        let mut out = vec![("input".to_string(), &self.input)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.first"), &b.first));
            out.push((format!("blocks.{i}.second"), &b.second));
        }
        out.push(("output".to_string(), &self.output));
        out
    }

    /// Named parameter tensors in the fixed serialization order: input
    /// projection, blocks in order (first then second sublayer), output
    /// projection; each layer contributes its weight (row-major) then bias.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        self.layers()
            .into_iter()
            .flat_map(|(name, d)| {
                [
                    (format!("{name}.weight"), d.weight.as_slice().expect("standard layout")),
                    (format!("{name}.bias"), d.bias.as_slice().expect("contiguous")),
                ]
            })
            .collect()
    }

    /// Mutable views in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut layers: Vec<&mut Dense> = vec![&mut self.input];
        for b in &mut self.blocks {
            layers.push(&mut b.first);
            layers.push(&mut b.second);
        }
        layers.push(&mut self.output);
        layers
            .into_iter()
            .flat_map(|d| {
                [
                    d.weight.as_slice_mut().expect("standard layout"),
                    d.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn from_flat(config: &NetworkConfig, values: &[f64]) -> Result<Self> {
        let mut params = NetworkParams::zeros(config);
        let expected = params.param_count();
        if values.len() != expected {
            return Err(NetworkError::Shape(format!(
                "{} values for {expected} parameters",
                values.len()
            )));
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Checks that the parameter shapes match `config`.
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        let (d, h, k) = (config.input_dim, config.hidden_width, config.output_dim);
        let expect = |name: &str, dense: &Dense, out_dim: usize, in_dim: usize| {
            if dense.weight.dim() != (out_dim, in_dim) || dense.bias.len() != out_dim {
                Err(NetworkError::Shape(format!(
                    "{name}: expected {out_dim}×{in_dim}, got {:?} with bias {}",
                    dense.weight.dim(),
                    dense.bias.len()
                )))
            } else {
                Ok(())
            }
        };
        expect("input", &self.input, h, d)?;
        if self.blocks.len() != config.num_blocks {
            return Err(NetworkError::Shape(format!(
                "{} blocks, config has {}",
                self.blocks.len(),
                config.num_blocks
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            expect(&format!("blocks.{i}.first"), &b.first, h, h)?;
            expect(&format!("blocks.{i}.second"), &b.second, h, h)?;
        }
        expect("output", &self.output, k, h)
    }
}

/// Seeded initialization: weights uniform in ±sqrt(6 / (fan_in + fan_out)),
/// biases zero.
pub fn init_params(config: &NetworkConfig) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = rng::rng(config.seed);
    let (d, h, k) = (config.input_dim, config.hidden_width, config.output_dim);
    let input = Dense::glorot(h, d, &mut rng);
    let blocks = (0..config.num_blocks)
        .map(|_| Block {
            first: Dense::glorot(h, h, &mut rng),
            second: Dense::glorot(h, h, &mut rng),
        })
        .collect();
    let output = Dense::glorot(k, h, &mut rng);
    Ok(NetworkParams {
        input,
        blocks,
        output,
    })
}

/// Per-row statistics of a z-score layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreStats {
    pub mean: Array1<f64>,
    /// sqrt(population variance + [`ZSCORE_EPS`]).
    pub std: Array1<f64>,
}

/// Normalizes every row to zero mean and unit population variance over the
/// columns (points).
pub fn zscore_norm(x: ArrayView2<f64>) -> Result<(Array2<f64>, ZScoreStats)> {
    let n = x.ncols();
    if n < 2 {
        return Err(NetworkError::TooFewPoints(n));
    }
    let mut out = x.to_owned();
    let rows = out.nrows();
    let mut mean = Array1::zeros(rows);
    let mut std = Array1::zeros(rows);
    let inv_n = 1.0 / n as f64;
    for (r, mut row) in out.outer_iter_mut().enumerate() {
        let m = row.sum() * inv_n;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() * inv_n;
        let s = (var + ZSCORE_EPS).sqrt();
        let inv_s = 1.0 / s;
        row.mapv_inplace(|v| (v - m) * inv_s);
        mean[r] = m;
        std[r] = s;
    }
    Ok((out, ZScoreStats { mean, std }))
}

/// Reverse of [`zscore_norm`] given the upstream gradient `g`, the normalized
/// output `y` and the statistics; gradients flow through the mean and variance.
pub fn zscore_backward(g: ArrayView2<f64>, y: ArrayView2<f64>, stats: &ZScoreStats) -> Array2<f64> {
    let n = g.ncols() as f64;
    let mut out = g.to_owned();
    for ((mut row, yrow), s) in out.outer_iter_mut().zip(y.outer_iter()).zip(stats.std.iter()) {
        let mean_g = row.sum() / n;
        let mean_gy = row.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let inv_s = 1.0 / s;
        Zip::from(&mut row)
            .and(&yrow)
            .for_each(|gv, &yv| *gv = (*gv - mean_g - yv * mean_gy) * inv_s);
    }
    out
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Network output: K_e×N, one embedding per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub z: Array2<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.z
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    /// zscore(x) and its statistics.
    pub norm_in: Array2<f64>,
    pub stats_in: ZScoreStats,
    /// relu(W1 · norm_in + b1).
    pub hidden: Array2<f64>,
    /// zscore(hidden) and its statistics.
    pub norm_hidden: Array2<f64>,
    pub stats_hidden: ZScoreStats,
    /// relu(W2 · norm_hidden + b2), the residual added to the stream.
    pub residual: Array2<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub input: Array2<f64>,
    pub blocks: Vec<BlockTape>,
    /// Residual stream entering the output projection.
    pub stream: Array2<f64>,
    /// Output projection before normalization.
    pub raw_output: Array2<f64>,
    /// Column norms of `raw_output` when the output is L2-normalized.
    pub norms: Option<Array1<f64>>,
}

fn check_input(x: ArrayView2<f64>, params: &NetworkParams, config: &NetworkConfig) -> Result<()> {
    config.validate()?;
    params.check(config)?;
    if x.nrows() != config.input_dim {
        return Err(NetworkError::Shape(format!(
            "input has dimension {}, network expects {}",
            x.nrows(),
            config.input_dim
        )));
    }
    if x.ncols() < 2 {
        return Err(NetworkError::TooFewPoints(x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NetworkError::Shape("input contains non-finite values".into()));
    }
    Ok(())
}

fn normalize_columns(raw: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = raw
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt().max(MIN_NORM))
        .collect();
    let mut z = raw.clone();
    for mut row in z.outer_iter_mut() {
        Zip::from(&mut row).and(&norms).for_each(|v, &n| *v /= n);
    }
    (z, norms)
}

fn run(
    x: ArrayView2<f64>,
    params: &NetworkParams,
    config: &NetworkConfig,
    keep_tape: bool,
) -> Result<(Embedding, Option<ForwardTape>)> {
    check_input(x, params, config)?;
    let mut stream = params.input.apply(x);
    let mut tapes = Vec::with_capacity(if keep_tape { params.blocks.len() } else { 0 });
    for block in &params.blocks {
        let (norm_in, stats_in) = zscore_norm(stream.view())?;
        let mut hidden = block.first.apply(norm_in.view());
        relu_inplace(&mut hidden);
        let (norm_hidden, stats_hidden) = zscore_norm(hidden.view())?;
        let mut residual = block.second.apply(norm_hidden.view());
        relu_inplace(&mut residual);
        stream += &residual;
        if keep_tape {
            tapes.push(BlockTape {
                norm_in,
                stats_in,
                hidden,
                norm_hidden,
                stats_hidden,
                residual,
            });
        }
    }
    let raw_output = params.output.apply(stream.view());
    let (z, norms) = if config.use_l2norm_output {
        let (z, norms) = normalize_columns(&raw_output);
        (z, Some(norms))
    } else {
        (raw_output.clone(), None)
    };
    let tape = keep_tape.then(|| ForwardTape {
        input: x.to_owned(),
        blocks: tapes,
        stream,
        raw_output,
        norms,
    });
    Ok((Embedding { z }, tape))
}

/// Forward pass keeping every intermediate needed by [`backward`].
pub fn forward(
    x: ArrayView2<f64>,
    params: &NetworkParams,
    config: &NetworkConfig,
) -> Result<(Embedding, ForwardTape)> {
    let (emb, tape) = run(x, params, config, true)?;
    Ok((emb, tape.expect("tape requested")))
}

/// Forward pass without a tape, for inference.
pub fn embed(x: ArrayView2<f64>, params: &NetworkParams, config: &NetworkConfig) -> Result<Embedding> {
    Ok(run(x, params, config, false)?.0)
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: NetworkParams,
    pub input: Array2<f64>,
}

fn dense_backward(grad_out: &Array2<f64>, input: ArrayView2<f64>, layer: &Dense, into: &mut Dense) -> Array2<f64> {
    into.weight = grad_out.dot(&input.t());
    into.bias = grad_out.sum_axis(Axis(1));
    layer.weight.t().dot(grad_out)
}

fn mask_by_positive(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Reverse-mode pass for the tape of [`forward`], given ∂L/∂Z.
pub fn backward(tape: &ForwardTape, params: &NetworkParams, grad_z: ArrayView2<f64>) -> Result<Gradients> {
    if tape.blocks.len() != params.blocks.len() {
        return Err(NetworkError::Shape(format!(
            "tape has {} blocks, parameters have {}",
            tape.blocks.len(),
            params.blocks.len()
        )));
    }
    if grad_z.dim() != tape.raw_output.dim() {
        return Err(NetworkError::Shape(format!(
            "loss gradient is {:?}, embedding is {:?}",
            grad_z.dim(),
            tape.raw_output.dim()
        )));
    }
    if params.output.weight.dim() != (tape.raw_output.nrows(), tape.stream.nrows())
        || params.input.weight.dim() != (tape.stream.nrows(), tape.input.nrows())
    {
        return Err(NetworkError::Shape("tape does not match parameters".into()));
    }

    // Column normalization: ∂z/∂raw = (I − ẑẑᵀ)/‖raw‖.
    let grad_raw = match &tape.norms {
        Some(norms) => {
            let mut g = grad_z.to_owned();
            for (j, mut col) in g.columns_mut().into_iter().enumerate() {
                let n = norms[j];
                let zhat = tape.raw_output.column(j).mapv(|v| v / n);
                let radial = zhat.dot(&col);
                Zip::from(&mut col).and(&zhat).for_each(|gv, &zv| *gv = (*gv - zv * radial) / n);
            }
            g
        }
        None => grad_z.to_owned(),
    };

    let mut grads = params.zeros_like();
    let mut grad_stream = dense_backward(&grad_raw, tape.stream.view(), &params.output, &mut grads.output);

    for ((block, bt), gblock) in params
        .blocks
        .iter()
        .zip(&tape.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        let mut g_res = grad_stream.clone();
        mask_by_positive(&mut g_res, &bt.residual);
        let g_norm_hidden = dense_backward(&g_res, bt.norm_hidden.view(), &block.second, &mut gblock.second);
        let mut g_hidden = zscore_backward(g_norm_hidden.view(), bt.norm_hidden.view(), &bt.stats_hidden);
        mask_by_positive(&mut g_hidden, &bt.hidden);
        let g_norm_in = dense_backward(&g_hidden, bt.norm_in.view(), &block.first, &mut gblock.first);
        grad_stream += &zscore_backward(g_norm_in.view(), bt.norm_in.view(), &bt.stats_in);
    }

    let grad_input = dense_backward(&grad_stream, tape.input.view(), &params.input, &mut grads.input);
    Ok(Gradients {
        params: grads,
        input: grad_input,
    })
}
