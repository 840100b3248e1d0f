//! Weight-matrix norms and the architecture quantifiers consumed by the bounds.
//!
//! Convention: a layer matrix `W` is `p_{i-1} × p_i` and column `j` holds the
//! incoming weights of output neuron `j`. The `(1,∞)` and `(2,1)` group norms
//! are taken over those columns.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{input_frobenius, Dataset};
use crate::error::{Error, Result};
use crate::mlp::{NetworkArch, ParamSet};

/// Largest ℓ1 norm of a neuron's incoming weights (max column abs-sum).
pub fn one_inf_norm(w: &Array2<f64>) -> f64 {
    w.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Sum over neurons of the ℓ2 norm of their incoming weights.
pub fn two_one_norm(w: &Array2<f64>) -> f64 {
    w.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

pub fn frobenius_norm(w: &Array2<f64>) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out; `value` is then the best estimate so far.
    pub converged: bool,
}

/// Largest singular value by power iteration on `WᵀW`, stopping when the
/// Rayleigh quotient changes by less than `tol` relative.
pub fn spectral_norm(w: &Array2<f64>, opts: PowerIterOptions) -> Result<SpectralEstimate> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("spectral norm of a non-finite matrix".into()));
    }
    let n = w.ncols();
    if n == 0 || w.iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);

    let mut lambda = 0.0;
    for it in 1..=opts.max_iter {
        let wv = w.dot(&v);
        let next_lambda = wv.dot(&wv);
        let mut next_v = w.t().dot(&wv);
        if normalize(&mut next_v) == 0.0 {
            // v landed in the null space; any further step stays there.
            return Ok(SpectralEstimate {
                value: next_lambda.sqrt(),
                iterations: it,
                converged: true,
            });
        }
        let done = (next_lambda - lambda).abs() <= opts.tol * next_lambda;
        lambda = next_lambda;
        v = next_v;
        if done {
            return Ok(SpectralEstimate {
                value: lambda.sqrt(),
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SpectralEstimate {
        value: lambda.sqrt(),
        iterations: opts.max_iter,
        converged: false,
    })
}

fn normalize(v: &mut Array1<f64>) -> f64 {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        *v /= norm;
    }
    norm
}

/// Norm-derived quantities of a concrete set of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightQuantifiers {
    /// `max_i ‖W_iᵀ‖_{1,∞}` over all layers.
    pub v: f64,
    /// The same maximum over layers `2..T`; `None` when `T = 1`.
    pub v_tail: Option<f64>,
    /// Per-layer spectral norms `s_i`.
    pub s: Vec<f64>,
    /// Per-layer `‖W_iᵀ‖_{2,1}` values `b_i`.
    pub b: Vec<f64>,
    /// Layers whose power iteration hit `max_iter`.
    pub unconverged_layers: Vec<usize>,
}

/// Architecture counts plus, when weights are known, their norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchQuantifiers {
    /// Largest hidden width (0 when there are no hidden layers).
    pub d_max: u64,
    /// Weights of one real-valued-output subnetwork; `None` when `T = 1`.
    pub w_rvo: Option<u64>,
    /// `Σ_{i=2}^T p_i p_{i-1}`.
    pub w_win: u64,
    /// Non-input neurons of one real-valued-output subnetwork; `None` when `T = 1`.
    pub r_rvo: Option<u64>,
    /// `max{d, d_max, p_T}`.
    pub w: u64,
    pub weights: Option<WeightQuantifiers>,
    /// Normalized Frobenius norm of the training inputs.
    pub x_frob: Option<f64>,
}

impl ArchQuantifiers {
    /// Counts that depend on the architecture alone.
    pub fn structural(arch: &NetworkArch) -> Self {
        let d = arch.input_dim as u64;
        let p: Vec<u64> = arch.widths.iter().map(|&x| x as u64).collect();
        let t = p.len();
        let hidden = &p[..t - 1];
        let d_max = hidden.iter().copied().max().unwrap_or(0);
        let w_win = (1..t).map(|i| p[i] * p[i - 1]).sum();
        let (w_rvo, r_rvo) = if t >= 2 {
            let inner: u64 = (1..t - 1).map(|i| p[i] * p[i - 1]).sum();
            (
                Some(d * p[0] + inner + p[t - 2]),
                Some(1 + hidden.iter().sum::<u64>()),
            )
        } else {
            (None, None)
        };
        Self {
            d_max,
            w_rvo,
            w_win,
            r_rvo,
            w: d.max(d_max).max(p[t - 1]),
            weights: None,
            x_frob: None,
        }
    }

    pub fn require_w_rvo(&self, method: &'static str) -> Result<u64> {
        self.w_rvo.ok_or_else(|| Error::Precondition {
            method,
            reason: "W_rvo is undefined for single-layer networks (T = 1)".into(),
        })
    }

    pub fn require_r_rvo(&self, method: &'static str) -> Result<u64> {
        self.r_rvo.ok_or_else(|| Error::Precondition {
            method,
            reason: "r_rvo is undefined for single-layer networks (T = 1)".into(),
        })
    }

    pub fn require_weights(&self, method: &'static str) -> Result<&WeightQuantifiers> {
        self.weights.as_ref().ok_or_else(|| Error::Precondition {
            method,
            reason: "bound needs weight norms from a trained network".into(),
        })
    }
}

pub fn weight_quantifiers(params: &ParamSet, opts: PowerIterOptions) -> Result<WeightQuantifiers> {
    let layer_v: Vec<f64> = params.weights().iter().map(one_inf_norm).collect();
    let mut s = Vec::with_capacity(layer_v.len());
    let mut unconverged_layers = Vec::new();
    for (i, w) in params.weights().iter().enumerate() {
        let est = spectral_norm(w, opts)?;
        if !est.converged {
            unconverged_layers.push(i);
        }
        s.push(est.value);
    }
    let v_tail = (layer_v.len() >= 2).then(|| layer_v[1..].iter().copied().fold(0.0, f64::max));
    Ok(WeightQuantifiers {
        v: layer_v.iter().copied().fold(0.0, f64::max),
        v_tail,
        s,
        b: params.weights().iter().map(two_one_norm).collect(),
        unconverged_layers,
    })
}

/// Every quantifier for a trained network and its training inputs.
pub fn quantifiers(arch: &NetworkArch, params: &ParamSet, train: &Dataset) -> Result<ArchQuantifiers> {
    if !params.matches(arch) {
        return Err(Error::InvalidArch(format!(
            "parameter shapes {:?} do not match architecture {:?}",
            params.dims(),
            arch.dims()
        )));
    }
    let mut q = ArchQuantifiers::structural(arch);
    q.weights = Some(weight_quantifiers(params, PowerIterOptions::default())?);
    q.x_frob = Some(input_frobenius(train));
    Ok(q)
}
