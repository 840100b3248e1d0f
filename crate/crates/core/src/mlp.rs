//! Noisy shifted-sigmoid multilayer perceptron.
//!
//! Layer `i` maps `z ↦ φ(W_iᵀ z)` with `φ(x) = 1/(1+e^{-x}) − 1/2` and no
//! bias. The noisy network adds `N(0, σ²I)` after every layer's activation,
//! the output layer included. Weights are stored `p_{i-1} × p_i`, so a batch
//! of row inputs `Z` (rows = examples) propagates as `φ(Z · W_i)`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkArch {
    pub input_dim: usize,
    /// `p_1 .. p_T`; the last entry is the number of classes.
    pub widths: Vec<usize>,
    pub sigma: f64,
    pub gamma: f64,
}

impl NetworkArch {
    pub fn new(input_dim: usize, widths: Vec<usize>, sigma: f64, gamma: f64) -> Result<Self> {
        let arch = Self {
            input_dim,
            widths,
            sigma,
            gamma,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// 784 → 250 → 250 → 250 → 10, σ = 0.05, γ = 0.1.
    pub fn baseline() -> Self {
        Self {
            input_dim: 784,
            widths: vec![250, 250, 250, 10],
            sigma: 0.05,
            gamma: 0.1,
        }
    }

    /// `hidden` layers of `width` neurons between a `d`-dim input and `k` outputs.
    pub fn uniform(d: usize, hidden: usize, width: usize, k: usize, sigma: f64, gamma: f64) -> Result<Self> {
        let mut widths = vec![width; hidden];
        widths.push(k);
        Self::new(d, widths, sigma, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidArch("at least one layer is required".into()));
        }
        if self.input_dim == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArch("all dimensions must be positive".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArch(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArch(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Number of layers `T`.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated arch has a layer")
    }

    /// `[d, p_1, .., p_T]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.widths.iter().copied())
            .collect()
    }
}

/// Per-layer weight matrices `W_1 .. W_T`, `W_i` of shape `p_{i-1} × p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    weights: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new(weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArch("at least one weight matrix is required".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].ncols(),
                    got: pair[1].nrows(),
                });
            }
        }
        if weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(arch: &NetworkArch) -> Self {
        let dims = arch.dims();
        Self {
            weights: dims.windows(2).map(|d| Array2::zeros((d[0], d[1]))).collect(),
        }
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<Array2<f64>> {
        self.weights
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").ncols()
    }

    /// `[d, p_1, .., p_T]` as implied by the matrix shapes.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(|w| w.ncols()))
            .collect()
    }

    pub fn matches(&self, arch: &NetworkArch) -> bool {
        self.dims() == arch.dims()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }
}

/// Shifted sigmoid `1/(1+e^{-x}) − 1/2`, evaluated as `tanh(x/2)/2`, which is
/// the same function and stays accurate for large `|x|`.
#[inline]
pub fn activation(x: f64) -> f64 {
    0.5 * (0.5 * x).tanh()
}

/// Derivative of [`activation`] written in terms of its output `a = φ(x)`.
#[inline]
fn activation_grad_from_output(a: f64) -> f64 {
    0.25 - a * a
}

/// Entries uniform on `±1/√fan_in`.
pub fn init_params(arch: &NetworkArch, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = arch.dims();
    let weights = dims
        .windows(2)
        .map(|d| {
            let bound = 1.0 / (d[0] as f64).sqrt();
            Array2::from_shape_simple_fn((d[0], d[1]), || rng.random_range(-bound..=bound))
        })
        .collect();
    ParamSet { weights }
}

fn check_input(params: &ParamSet, len: usize) -> Result<()> {
    if len != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: len,
        });
    }
    Ok(())
}

/// Batched forward pass. `add_noise(layer, activations)` runs after each
/// layer's activation and may perturb it in place.
fn propagate<F>(params: &ParamSet, inputs: ArrayView2<f64>, mut add_noise: F) -> Array2<f64>
where
    F: FnMut(usize, &mut Array2<f64>),
{
    let mut z = inputs.to_owned();
    for (layer, w) in params.weights.iter().enumerate() {
        let mut a = z.dot(w);
        a.mapv_inplace(activation);
        add_noise(layer, &mut a);
        z = a;
    }
    z
}

/// Deterministic outputs for a batch of row inputs (`n × d` → `n × p_T`).
pub fn forward_batch(params: &ParamSet, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(params, inputs.ncols())?;
    Ok(propagate(params, inputs, |_, _| {}))
}

pub fn forward_deterministic(params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x.len())?;
    let input = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
    Ok(propagate(params, input, |_, _| {}).into_raw_vec_and_offset().0)
}

fn add_gaussian<R: Rng + ?Sized>(a: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    a.mapv_inplace(|v| {
        let n: f64 = StandardNormal.sample(rng);
        v + sigma * n
    });
}

/// One realization of the noisy network; `N(0, σ²I)` after every layer.
pub fn forward_noisy<R: Rng + ?Sized>(
    params: &ParamSet,
    x: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_input(params, x.len())?;
    let input = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
    let out = propagate(params, input, |_, a| {
        if sigma > 0.0 {
            add_gaussian(a, sigma, rng)
        }
    });
    Ok(out.into_raw_vec_and_offset().0)
}

/// Mean of `n_samples` independent noisy forward passes.
pub fn expected_output<R: Rng + ?Sized>(
    params: &ParamSet,
    x: &[f64],
    sigma: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let mut acc = vec![0.0; params.output_dim()];
    for _ in 0..n_samples {
        let out = forward_noisy(params, x, sigma, rng)?;
        acc.iter_mut().zip(out).for_each(|(a, o)| *a += o);
    }
    let n = n_samples as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Noise stream for one `(seed, example, sample)` triple, independent of how
/// examples are batched or scheduled.
pub fn noise_rng(seed: u64, example: u64, sample: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(seed ^ 0x6E6F_6973_6563_6170) ^ example);
    ChaCha8Rng::seed_from_u64(splitmix64(key ^ sample.rotate_left(32)))
}

/// Monte-Carlo expected outputs for a batch whose first row is dataset
/// example `first_index`. Sample `s` of example `i` draws its noise from
/// [`noise_rng`]`(seed, i, s)`.
pub fn expected_output_batch(
    params: &ParamSet,
    inputs: ArrayView2<f64>,
    sigma: f64,
    n_samples: usize,
    seed: u64,
    first_index: usize,
) -> Result<Array2<f64>> {
    check_input(params, inputs.ncols())?;
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    if sigma == 0.0 {
        return Ok(propagate(params, inputs, |_, _| {}));
    }
    let rows = inputs.nrows();
    let widths: Vec<usize> = params.weights.iter().map(|w| w.ncols()).collect();
    let mut acc = Array2::<f64>::zeros((rows, params.output_dim()));
    let mut noise: Vec<Array2<f64>> = widths.iter().map(|&p| Array2::zeros((rows, p))).collect();
    for s in 0..n_samples {
        for r in 0..rows {
            let mut rng = noise_rng(seed, (first_index + r) as u64, s as u64);
            for layer in noise.iter_mut() {
                for v in layer.row_mut(r) {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v = sigma * n;
                }
            }
        }
        let out = propagate(params, inputs, |layer, a| *a += &noise[layer]);
        acc += &out;
    }
    acc /= n_samples as f64;
    Ok(acc)
}

fn check_label(k: usize, y: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if y >= k {
        return Err(Error::LabelOutOfRange { label: y, classes: k });
    }
    Ok(())
}

/// `u[y] − max_{j≠y} u[j]`.
pub fn margin(u: &[f64], y: usize) -> Result<f64> {
    check_label(u.len(), y)?;
    let best_other = u
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(u[y] - best_other)
}

/// Ramp with margin `γ`: 0 for `x ≤ −γ`, `1 + x/γ` on `[−γ, 0]`, 1 for `x > 0`.
pub fn ramp(x: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    Ok(if x <= -gamma {
        0.0
    } else if x <= 0.0 {
        1.0 + x / gamma
    } else {
        1.0
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in u.iter().enumerate().skip(1) {
        if v > u[best] {
            best = j;
        }
    }
    best
}

pub fn zero_one_loss(u: &[f64], y: usize) -> Result<f64> {
    check_label(u.len(), y)?;
    Ok(if argmax(u) == y { 0.0 } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ramp_loss: f64,
    pub zero_one_loss: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EvalMode {
    Deterministic,
    /// Average of `n_samples` noisy passes with noise scale `sigma`.
    Expected { sigma: f64, n_samples: usize, seed: u64 },
}

const EVAL_CHUNK: usize = 2048;

/// Mean ramp and 0-1 losses of the (deterministic or MC-expected) network.
pub fn evaluate(params: &ParamSet, data: &Dataset, gamma: f64, mode: EvalMode) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::InsufficientExamples {
            requested: 1,
            available: 0,
        });
    }
    ramp(0.0, gamma)?;
    let k = params.output_dim();
    let mut ramp_sum = 0.0;
    let mut err_sum = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let inputs = data.images.slice(ndarray::s![start..end, ..]);
        let outputs = match mode {
            EvalMode::Deterministic => forward_batch(params, inputs)?,
            EvalMode::Expected {
                sigma,
                n_samples,
                seed,
            } => expected_output_batch(params, inputs, sigma, n_samples, seed, start)?,
        };
        for (row, &y) in outputs.axis_iter(Axis(0)).zip(&data.labels[start..end]) {
            let u = row.as_slice().expect("standard layout");
            check_label(k, y)?;
            ramp_sum += ramp(-margin(u, y)?, gamma)?;
            err_sum += zero_one_loss(u, y)?;
        }
        start = end;
    }
    let m = data.len() as f64;
    Ok(LossReport {
        ramp_loss: ramp_sum / m,
        zero_one_loss: err_sum / m,
        sample_count: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mc_samples_eval: usize,
    pub noise_during_training: bool,
    /// Stop once the running training 0-1 error of an epoch falls to this value.
    pub early_stop_train_error: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            momentum: 0.9,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            mc_samples_eval: 50,
            noise_during_training: true,
            early_stop_train_error: Some(0.005),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.mc_samples_eval == 0 {
            return Err(Error::InvalidConfig("mc_samples_eval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's minibatches.
    pub mean_loss: f64,
    /// 0-1 error of the (noisy) training passes themselves.
    pub running_train_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Mean softmax cross-entropy of `logits` (rows) against `labels`, its
/// gradient w.r.t. the logits, and the number of argmax hits.
fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>, usize) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let mut correct = 0;
    for (mut row, &y) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        let u = row.as_slice().expect("standard layout");
        if argmax(u) == y {
            correct += 1;
        }
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target = u[y] - max;
        row.mapv_inplace(|v| (v - max).exp());
        let z: f64 = row.sum();
        loss += z.ln() - target;
        row.mapv_inplace(|v| v / (z * n));
        row[y] -= 1.0 / n;
    }
    (loss / n, grad, correct)
}

/// Cross-entropy loss and weight gradients for a batch. `noise`, when given,
/// holds one additive offset matrix per layer (same shape as that layer's
/// activations) and is treated as a constant.
pub fn loss_and_gradients(
    params: &ParamSet,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    noise: Option<&[Array2<f64>]>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    check_input(params, inputs.ncols())?;
    if inputs.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: inputs.nrows(),
            labels: labels.len(),
        });
    }
    for &y in labels {
        check_label(params.output_dim(), y)?;
    }
    let (loss, grads, _) = backprop(params, inputs, labels, noise);
    Ok((loss, grads))
}

fn backprop(
    params: &ParamSet,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    noise: Option<&[Array2<f64>]>,
) -> (f64, Vec<Array2<f64>>, usize) {
    let t = params.weights.len();
    // zs[0] = inputs; acts[i] = φ(z_{i} W_{i+1}) before noise; zs[i+1] = acts[i] + noise
    let mut zs: Vec<Array2<f64>> = Vec::with_capacity(t + 1);
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(t);
    zs.push(inputs.to_owned());
    for (i, w) in params.weights.iter().enumerate() {
        let mut a = zs[i].dot(w);
        a.mapv_inplace(activation);
        let mut z = a.clone();
        if let Some(noise) = noise {
            z += &noise[i];
        }
        acts.push(a);
        zs.push(z);
    }
    let (loss, mut delta, correct) = softmax_cross_entropy(&zs[t], labels);
    let mut grads = vec![Array2::zeros((0, 0)); t];
    for i in (0..t).rev() {
        // d loss / d pre-activation
        Zip::from(&mut delta)
            .and(&acts[i])
            .for_each(|d, &a| *d *= activation_grad_from_output(a));
        grads[i] = zs[i].t().dot(&delta);
        if i > 0 {
            delta = delta.dot(&params.weights[i].t());
        }
    }
    (loss, grads, correct)
}

/// Minibatch SGD with classic momentum (`v ← μv − η∇`, `W ← W + v`) on the
/// softmax cross-entropy of the noisy outputs. With noise on, each example
/// gets a fresh noise realization on every pass. Deterministic given
/// `config.seed`.
pub fn train_sgd(
    params: ParamSet,
    arch: &NetworkArch,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if !params.matches(arch) {
        return Err(Error::InvalidArch(format!(
            "parameter shapes {:?} do not match architecture {:?}",
            params.dims(),
            arch.dims()
        )));
    }
    check_input(&params, data.input_dim())?;
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= arch.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: arch.num_classes(),
        });
    }

    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Array2<f64>> = params
        .weights
        .iter()
        .map(|w| Array2::zeros(w.raw_dim()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let noisy = config.noise_during_training && arch.sigma > 0.0;
    let widths = arch.widths.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let inputs = data.images.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let noise: Option<Vec<Array2<f64>>> = noisy.then(|| {
                widths
                    .iter()
                    .map(|&p| {
                        Array2::from_shape_simple_fn((chunk.len(), p), || {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            arch.sigma * n
                        })
                    })
                    .collect()
            });
            let (loss, grads, hits) = backprop(&params, inputs.view(), &labels, noise.as_deref());
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            for ((w, v), g) in params.weights.iter_mut().zip(&mut velocity).zip(&grads) {
                Zip::from(&mut *v)
                    .and(g)
                    .for_each(|v, &g| *v = config.momentum * *v - config.learning_rate * g);
                *w += &*v;
            }
            loss_sum += loss;
            batches += 1;
            correct += hits;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            running_train_error: 1.0 - correct as f64 / data.len() as f64,
        };
        if !stats.mean_loss.is_finite() || params.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                epoch,
                loss: stats.mean_loss,
            });
        }
        on_epoch(&stats);
        history.push(stats);
        if let Some(target) = config.early_stop_train_error {
            if stats.running_train_error <= target {
                return Ok(TrainOutcome {
                    params,
                    history,
                    stopped_early: true,
                });
            }
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        stopped_early: false,
    })
}
