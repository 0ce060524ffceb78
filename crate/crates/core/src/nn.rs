//! Self-contained denoiser: a small MLP with explicit forward/backward
//! passes, Adam, an exponential moving average of the parameters, and the
//! sinusoidal time features it consumes.
//!
//! No tensor library: parameters are flat `Vec<f64>` buffers and the
//! batched passes are hand-written loops with a fixed accumulation order,
//! so runs are bit-reproducible on one thread.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fixed-order dot product; four accumulators keep the FPU pipeline busy
/// without compiler reassociation.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// One dense layer, `rows x cols` weights in row-major order plus a bias
/// per row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }
}

/// The denoiser parameters: a chain of dense layers with the activation on
/// every hidden layer and a linear output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Deterministic initialization: weights and biases drawn uniformly
    /// from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with a seeded generator.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidParameter(
                "layer_dims needs an input and an output dimension".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(
                "layer dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let bound = 1.0 / (cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weights = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            let bias = (0..rows).map(|_| dist.sample(&mut rng)).collect();
            layers.push(Layer {
                rows,
                cols,
                weights,
                bias,
            });
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            activation,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Batched forward pass. `input` is `batch x input_dim` row-major; the
    /// cache keeps every pre-activation and activation for the backward
    /// pass, and its `output()` is the final `batch x output_dim` block.
    pub fn forward_batch(&self, input: &[f64], batch: usize, cache: &mut Cache) -> Result<()> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, expected {} x {}",
                input.len(),
                batch,
                self.input_dim()
            )));
        }
        cache.prepare(self, batch);
        cache.activations[0][..input.len()].copy_from_slice(input);

        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let is_output = l + 1 == n_layers;
            let (head, tail) = cache.activations.split_at_mut(l + 1);
            let a_prev = &head[l][..batch * layer.cols];
            let z = &mut cache.preacts[l][..batch * layer.rows];
            let a_next = &mut tail[0][..batch * layer.rows];
            for b in 0..batch {
                let x = &a_prev[b * layer.cols..(b + 1) * layer.cols];
                let z_row = &mut z[b * layer.rows..(b + 1) * layer.rows];
                for j in 0..layer.rows {
                    z_row[j] = dot(x, layer.row(j)) + layer.bias[j];
                }
            }
            if is_output {
                a_next.copy_from_slice(z);
            } else {
                for (an, &zv) in a_next.iter_mut().zip(z.iter()) {
                    *an = self.activation.apply(zv);
                }
            }
        }
        Ok(())
    }

    /// Convenience single-input forward; allocates its own cache.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::new(self, 1);
        self.forward_batch(input, 1, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Backward pass for the batch held in `cache`. `dloss_dout` is the
    /// gradient of the scalar loss with respect to the network output
    /// (`batch x output_dim`); `grads` receives the parameter gradients.
    pub fn backward_batch(
        &self,
        cache: &Cache,
        dloss_dout: &[f64],
        grads: &mut Grads,
    ) -> Result<()> {
        let batch = cache.batch;
        if dloss_dout.len() != batch * self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "dloss_dout has {} values, expected {} x {}",
                dloss_dout.len(),
                batch,
                self.output_dim()
            )));
        }
        grads.prepare(self);

        let mut delta = dloss_dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &cache.activations[l][..batch * layer.cols];
            let g = &mut grads.layers[l];
            g.weights.iter_mut().for_each(|v| *v = 0.0);
            g.bias.iter_mut().for_each(|v| *v = 0.0);

            for b in 0..batch {
                let d_row = &delta[b * layer.rows..(b + 1) * layer.rows];
                let x = &a_prev[b * layer.cols..(b + 1) * layer.cols];
                for j in 0..layer.rows {
                    let dj = d_row[j];
                    if dj != 0.0 {
                        axpy(dj, x, &mut g.weights[j * layer.cols..(j + 1) * layer.cols]);
                    }
                    g.bias[j] += dj;
                }
            }

            if l > 0 {
                let prev_rows = layer.cols;
                let mut next_delta = vec![0.0f64; batch * prev_rows];
                for b in 0..batch {
                    let d_row = &delta[b * layer.rows..(b + 1) * layer.rows];
                    let nd = &mut next_delta[b * prev_rows..(b + 1) * prev_rows];
                    for j in 0..layer.rows {
                        axpy(d_row[j], layer.row(j), nd);
                    }
                }
                let z_prev = &cache.preacts[l - 1][..batch * prev_rows];
                for (nd, &z) in next_delta.iter_mut().zip(z_prev.iter()) {
                    *nd *= self.activation.derivative(z);
                }
                delta = next_delta;
            }
        }
        Ok(())
    }
}

/// Forward-pass workspace: activations and pre-activations per layer.
#[derive(Clone, Debug)]
pub struct Cache {
    batch: usize,
    capacity: usize,
    activations: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn new(net: &Mlp, max_batch: usize) -> Self {
        let mut cache = Cache {
            batch: 0,
            capacity: 0,
            activations: Vec::new(),
            preacts: Vec::new(),
        };
        cache.prepare(net, max_batch.max(1));
        cache.batch = 0;
        cache
    }

    fn prepare(&mut self, net: &Mlp, batch: usize) {
        if batch > self.capacity || self.activations.len() != net.layer_dims.len() {
            self.capacity = batch.max(self.capacity);
            self.activations = net
                .layer_dims
                .iter()
                .map(|&d| vec![0.0; self.capacity * d])
                .collect();
            self.preacts = net.layer_dims[1..]
                .iter()
                .map(|&d| vec![0.0; self.capacity * d])
                .collect();
        }
        self.batch = batch;
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final activations, `batch x output_dim` row-major.
    pub fn output(&self) -> &[f64] {
        let d = self.activations.last().unwrap();
        let out_dim = d.len() / self.capacity;
        &d[..self.batch * out_dim]
    }
}

/// Per-layer parameter gradients; shapes mirror the network.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        let mut g = Grads::default();
        g.prepare(net);
        g
    }

    fn prepare(&mut self, net: &Mlp) {
        if self.layers.len() != net.layers.len()
            || self
                .layers
                .iter()
                .zip(net.layers.iter())
                .any(|(g, l)| g.weights.len() != l.weights.len())
        {
            self.layers = net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect();
        }
    }
}

/// Sinusoidal features of `t / t_total` at geometrically spaced
/// frequencies; `dim` must be even. Every component lies in `[-1, 1]`, and
/// the slowest pair alone already separates all steps of the grid.
pub fn time_embed(t: usize, t_total: usize, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "time embedding dim must be even and >= 2, got {dim}"
        )));
    }
    if t < 1 || t > t_total {
        return Err(Error::IndexOutOfRange { t, max: t_total });
    }
    let half = dim / 2;
    let x = t as f64 / t_total as f64;
    let omega_min = 1.0f64;
    let omega_max = t_total as f64;
    let ratio = if half > 1 {
        (omega_max / omega_min).powf(1.0 / (half as f64 - 1.0))
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(dim);
    let mut omega = omega_min;
    for _ in 0..half {
        out.push((omega * x).sin());
        out.push((omega * x).cos());
        omega *= ratio;
    }
    Ok(out)
}

/// All embeddings for a schedule, precomputed for hot loops.
#[derive(Clone, Debug)]
pub struct TimeEmbedTable {
    t_total: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl TimeEmbedTable {
    pub fn build(t_total: usize, dim: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(t_total * dim);
        for t in 1..=t_total {
            rows.extend_from_slice(&time_embed(t, t_total, dim)?);
        }
        Ok(TimeEmbedTable { t_total, dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.t_total, "step {t} out of range");
        &self.rows[(t - 1) * self.dim..t * self.dim]
    }
}

/// Adam with bias correction. Moment buffers mirror the parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Non-finite gradients abort with a diagnostic naming the
    /// layer; divergence should surface, not be masked.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch(
                "gradient layer count differs from network".into(),
            ));
        }
        for (l, (layer, g)) in net.layers.iter().zip(grads.layers.iter()).enumerate() {
            if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shape differs from network at layer {l}"
                )));
            }
            if g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient at layer {l} (step {})",
                    self.step + 1
                )));
            }
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.m.layers[l];
            let v = &mut self.v.layers[l];
            update_buffer(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_buffer(
                &mut layer.bias,
                &g.bias,
                &mut m.bias,
                &mut v.bias,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_buffer(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Exponential moving average of the parameters:
/// `shadow <- decay * shadow + (1 - decay) * params`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ema {
    decay: f64,
    shadow: Mlp,
}

impl Ema {
    pub fn new(net: &Mlp, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidParameter(format!(
                "ema decay must lie in [0, 1], got {decay}"
            )));
        }
        Ok(Ema {
            decay,
            shadow: net.clone(),
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn shadow(&self) -> &Mlp {
        &self.shadow
    }

    pub fn into_shadow(self) -> Mlp {
        self.shadow
    }

    pub fn update(&mut self, net: &Mlp) -> Result<()> {
        if self.shadow.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch(
                "ema shadow layer count differs from network".into(),
            ));
        }
        let d = self.decay;
        for (s, p) in self.shadow.layers.iter_mut().zip(net.layers.iter()) {
            if s.weights.len() != p.weights.len() || s.bias.len() != p.bias.len() {
                return Err(Error::ShapeMismatch(
                    "ema shadow shape differs from network".into(),
                ));
            }
            for (sw, &pw) in s.weights.iter_mut().zip(p.weights.iter()) {
                *sw = d * *sw + (1.0 - d) * pw;
            }
            for (sb, &pb) in s.bias.iter_mut().zip(p.bias.iter()) {
                *sb = d * *sb + (1.0 - d) * pb;
            }
        }
        Ok(())
    }
}
