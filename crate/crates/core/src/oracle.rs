//! Numerical checks of the analytic inequalities behind the bounds, and an
//! empirical greedy ε-cover estimator.
//!
//! Densities live in one dimension and are piecewise constant, which makes
//! their convolution with a Gaussian exact (a sum of CDF differences).

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{ln_cover_lipschitz, BoundQuery, Method};
use crate::error::{Error, Result};
use crate::mlp::{forward_deterministic, margin, ramp, NetworkArch, ParamSet};
use crate::norms::{ArchQuantifiers, WeightQuantifiers};

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn gaussian_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Total variation between `N(μ1, σ²)` and `N(μ2, σ²)`: `2Φ(|Δ|/(2σ)) − 1`.
pub fn tv_gaussians_1d(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(libm::erf((mu1 - mu2).abs() / (2.0 * sigma * SQRT_2)))
}

/// The upper bound `|Δ|/(2σ)` on the same distance.
pub fn tv_gaussian_bound(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok((mu1 - mu2).abs() / (2.0 * sigma))
}

pub fn tv_discrete(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// Pushes `p` and `q` through a row-stochastic channel and returns
/// `(TV(p, q), TV(pK, qK))`.
pub fn dpi_check(channel: &Array2<f64>, p: &[f64], q: &[f64]) -> Result<(f64, f64)> {
    let n = channel.nrows();
    if p.len() != n || q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.len().max(q.len()),
        });
    }
    for (i, row) in channel.rows().into_iter().enumerate() {
        check_distribution(row.as_slice().unwrap_or(&row.to_vec()), &format!("channel row {i}"))?;
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let push = |v: &[f64]| Array1::from(v.to_vec()).dot(channel).to_vec();
    Ok((tv_discrete(p, q), tv_discrete(&push(p), &push(q))))
}

/// Piecewise-constant density on `[−B, B]` with equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    bound: f64,
    heights: Vec<f64>,
}

impl Density1D {
    /// Normalizes nonnegative bin weights into a density.
    pub fn from_bins(bound: f64, weights: Vec<f64>) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() || weights.is_empty() {
            return Err(Error::InvalidConfig("density needs B > 0 and at least one bin".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("density weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("density weights sum to zero".into()));
        }
        let width = 2.0 * bound / weights.len() as f64;
        Ok(Self {
            bound,
            heights: weights.iter().map(|w| w / (total * width)).collect(),
        })
    }

    /// Uniform on `[−a, a]`, discretized with `bins` bins on `[−a, a]`.
    pub fn uniform(a: f64, bins: usize) -> Result<Self> {
        Self::from_bins(a, vec![1.0; bins.max(1)])
    }

    /// All mass in the one bin of width `2B/bins` that contains 0 (`bins` odd).
    pub fn spike(bound: f64, bins: usize) -> Result<Self> {
        let bins = bins | 1;
        let mut w = vec![0.0; bins];
        w[bins / 2] = 1.0;
        Self::from_bins(bound, w)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.bound / self.heights.len() as f64
    }

    fn edge(&self, j: usize) -> f64 {
        -self.bound + j as f64 * self.bin_width()
    }

    pub fn integral(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.bin_width()
    }

    /// Mass of the density inside `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        (0..self.heights.len())
            .map(|j| {
                let lo = self.edge(j).max(a);
                let hi = self.edge(j + 1).min(b);
                if hi > lo {
                    self.heights[j] * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// `(f ∗ N(0, σ²))(x)`, exact.
    pub fn convolved(&self, x: f64, sigma: f64) -> f64 {
        let mut prev = std_normal_cdf((x - self.edge(0)) / sigma);
        let mut acc = 0.0;
        for (j, &h) in self.heights.iter().enumerate() {
            let next = std_normal_cdf((x - self.edge(j + 1)) / sigma);
            acc += h * (prev - next);
            prev = next;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    pub means: Vec<f64>,
    pub weights: Vec<f64>,
    pub sigma: f64,
}

impl GaussianMixture1D {
    pub fn density(&self, x: f64) -> f64 {
        self.means
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&mu, &w)| w * gaussian_pdf(x - mu, self.sigma))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmEstimate {
    pub mixture: GaussianMixture1D,
    pub tv_error: f64,
    /// The lemma's guarantee `2η/σ`.
    pub bound: f64,
}

/// Approximates `f ∗ N(0, σ²)` by Gaussians centred on a grid of spacing
/// `2η` over `[−B, B]`, weighted by the mass of `f` in each cell, and
/// measures the TV distance by quadrature on `[−B − 8σ, B + 8σ]`.
///
/// `step` defaults to `σ/50`; coarser steps are rejected.
pub fn gmm_estimate_1d(f: &Density1D, sigma: f64, eta: f64, step: Option<f64>) -> Result<GmmEstimate> {
    check_sigma(sigma)?;
    let b = f.bound();
    if !(eta > 0.0 && eta <= b) {
        return Err(Error::InvalidConfig(format!("eta must lie in (0, B] = (0, {b}], got {eta}")));
    }
    let max_step = sigma / 50.0;
    let step = step.unwrap_or(max_step);
    if !(step > 0.0 && step <= max_step) {
        return Err(Error::Numerical(format!(
            "quadrature step {step} is coarser than σ/50 = {max_step}"
        )));
    }

    let cells = (b / eta).ceil() as usize;
    let mut means = Vec::with_capacity(cells);
    let mut weights = Vec::with_capacity(cells);
    for a in 0..cells {
        let lo = -b + 2.0 * a as f64 * eta;
        means.push(lo + eta);
        weights.push(f.mass_between(lo, lo + 2.0 * eta));
    }
    let mixture = GaussianMixture1D { means, weights, sigma };

    let lo = -b - 8.0 * sigma;
    let hi = b + 8.0 * sigma;
    let n = ((hi - lo) / step).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let mut l1 = 0.0;
    for k in 0..n {
        let x = lo + (k as f64 + 0.5) * h;
        l1 += (f.convolved(x, sigma) - mixture.density(x)).abs();
    }
    Ok(GmmEstimate {
        mixture,
        tv_error: 0.5 * l1 * h,
        bound: 2.0 * eta / sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtMetric {
    /// `max_k ‖a_k − b_k‖₂` over rows.
    Sup,
    /// `√((1/m) Σ_k ‖a_k − b_k‖₂²)`.
    L2,
}

pub fn ext_distance(a: &Array2<f64>, b: &Array2<f64>, metric: ExtMetric) -> f64 {
    let row_sq = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).powi(2)).sum::<f64>());
    match metric {
        ExtMetric::Sup => row_sq.fold(0.0f64, f64::max).sqrt(),
        ExtMetric::L2 => (row_sq.sum::<f64>() / a.nrows() as f64).sqrt(),
    }
}

fn check_points(points: &[Array2<f64>], epsilon: f64) -> Result<()> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot cover an empty point set".into()))?;
    if let Some(p) = points.iter().find(|p| p.dim() != first.dim()) {
        return Err(Error::InvalidConfig(format!(
            "inconsistent restriction shapes {:?} and {:?}",
            first.dim(),
            p.dim()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Greedy internal ε-net: scanning in order, the first uncovered point
/// becomes a centre. Returns the centre indices.
pub fn greedy_cover_centers(points: &[Array2<f64>], epsilon: f64, metric: ExtMetric) -> Result<Vec<usize>> {
    check_points(points, epsilon)?;
    let mut centers: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !centers.iter().any(|&c| ext_distance(&points[c], p, metric) <= epsilon) {
            centers.push(i);
        }
    }
    Ok(centers)
}

pub fn greedy_cover(points: &[Array2<f64>], epsilon: f64, metric: ExtMetric) -> Result<usize> {
    Ok(greedy_cover_centers(points, epsilon, metric)?.len())
}

pub const EXACT_COVER_MAX_POINTS: usize = 20;

/// Smallest internal ε-cover by exhaustive search over subsets.
pub fn exact_min_cover(points: &[Array2<f64>], epsilon: f64, metric: ExtMetric) -> Result<usize> {
    check_points(points, epsilon)?;
    let n = points.len();
    if n > EXACT_COVER_MAX_POINTS {
        return Err(Error::InvalidConfig(format!(
            "exact cover is limited to {EXACT_COVER_MAX_POINTS} points, got {n}"
        )));
    }
    let reach: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| ext_distance(&points[i], &points[j], metric) <= epsilon)
                .fold(0u32, |acc, j| acc | (1 << j))
        })
        .collect();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best = n;
    for mask in 1u32..=full {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let mut covered = 0u32;
        let mut bits = mask;
        while bits != 0 {
            covered |= reach[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        if covered == full {
            best = size;
        }
    }
    Ok(best)
}

/// The toy fixture for the empirical soundness check of the Lipschitz bound:
/// a 2-2-2 network whose weights are drawn from `[−1, 1]`, so every neuron's
/// incoming ℓ1 norm is at most `V = 2`.
#[derive(Debug, Clone)]
pub struct ToyLipschitzFixture {
    pub arch: NetworkArch,
    pub configs: Vec<ParamSet>,
    pub inputs: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub gamma: f64,
    pub v: f64,
}

impl ToyLipschitzFixture {
    pub const CONFIGS: usize = 200;
    pub const INPUTS: usize = 20;

    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = 0.1;
        let arch = NetworkArch::new(2, vec![2, 2], 0.0, gamma)?;
        let draw = |rng: &mut ChaCha8Rng| Array2::from_shape_simple_fn((2, 2), || rng.random_range(-1.0..=1.0));
        let configs = (0..Self::CONFIGS)
            .map(|_| ParamSet::new(vec![draw(&mut rng), draw(&mut rng)]))
            .collect::<Result<Vec<_>>>()?;
        let inputs = (0..Self::INPUTS)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let labels = (0..Self::INPUTS).map(|_| rng.random_range(0..2)).collect();
        Ok(Self {
            arch,
            configs,
            inputs,
            labels,
            gamma,
            v: 2.0,
        })
    }

    /// Ramp-loss values of every configuration on the fixed inputs, each an `m × 1` restriction.
    pub fn restrictions(&self) -> Result<Vec<Array2<f64>>> {
        self.configs
            .iter()
            .map(|params| {
                let mut out = Array2::zeros((self.inputs.len(), 1));
                for (k, (x, &y)) in self.inputs.iter().zip(&self.labels).enumerate() {
                    let u = forward_deterministic(params, x)?;
                    out[[k, 0]] = ramp(-margin(&u, y)?, self.gamma)?;
                }
                Ok(out)
            })
            .collect()
    }

    pub fn ln_bound(&self, epsilon: f64) -> Result<f64> {
        let mut quant = ArchQuantifiers::structural(&self.arch);
        quant.weights = Some(WeightQuantifiers {
            v: self.v,
            v_tail: Some(self.v),
            s: vec![],
            b: vec![],
            unconverged_layers: vec![],
        });
        let q = BoundQuery::new(Method::Lipschitz, &self.arch, &quant, epsilon, self.inputs.len() as f64)?;
        Ok(ln_cover_lipschitz(&q)?.ln_n)
    }
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub trials: usize,
    /// Largest observed `lhs − rhs`; a check passes when this is ≤ 0.
    pub max_violation: f64,
    pub pass: bool,
}

impl CheckReport {
    fn from_violations(check: &str, violations: impl IntoIterator<Item = f64>) -> Self {
        let mut trials = 0;
        let mut max_violation = f64::NEG_INFINITY;
        let mut nan = false;
        for v in violations {
            trials += 1;
            nan |= v.is_nan();
            max_violation = max_violation.max(v);
        }
        Self {
            check: check.to_string(),
            trials,
            max_violation,
            pass: trials > 0 && !nan && max_violation <= 0.0,
        }
    }
}

/// A deliberate defect used to prove that the verification harness can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Replaces the TV bound `|Δ|/(2σ)` by a quarter of itself.
    TvBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            fault: None,
        }
    }
}

pub fn check_tv_gaussian(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7101);
    let mut v = Vec::with_capacity(opts.trials);
    for _ in 0..opts.trials {
        let mu1 = rng.random_range(-5.0..5.0);
        let mu2 = rng.random_range(-5.0..5.0);
        let sigma = 10f64.powf(rng.random_range(-2.0..1.0));
        let tv = tv_gaussians_1d(mu1, mu2, sigma)?;
        let mut bound = tv_gaussian_bound(mu1, mu2, sigma)?;
        if opts.fault == Some(Fault::TvBound) {
            bound *= 0.25;
        }
        v.push(tv - bound.min(1.0));
    }
    Ok(CheckReport::from_violations("tv_gaussian_bound", v))
}

/// Closed-form TV against midpoint quadrature of `½∫|φ₁ − φ₂|`.
pub fn check_tv_quadrature(opts: &VerifyOptions) -> Result<CheckReport> {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7102);
    let trials = (opts.trials / 10).max(1);
    let mut v = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mu1: f64 = rng.random_range(-3.0..3.0);
        let mu2: f64 = rng.random_range(-3.0..3.0);
        let sigma = rng.random_range(0.2..2.0);
        let lo = mu1.min(mu2) - 10.0 * sigma;
        let hi = mu1.max(mu2) + 10.0 * sigma;
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let quad: f64 = (0..n)
            .map(|k| {
                let x = lo + (k as f64 + 0.5) * h;
                (gaussian_pdf(x - mu1, sigma) - gaussian_pdf(x - mu2, sigma)).abs()
            })
            .sum::<f64>()
            * 0.5
            * h;
        v.push((quad - tv_gaussians_1d(mu1, mu2, sigma)?).abs() - TOL);
    }
    Ok(CheckReport::from_violations("tv_gaussian_quadrature", v))
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn check_dpi(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7103);
    let mut v = Vec::with_capacity(opts.trials);
    for _ in 0..opts.trials {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let mut channel = Array2::zeros((n, k));
        for i in 0..n {
            let row = random_distribution(&mut rng, k);
            channel.row_mut(i).assign(&Array1::from(row));
        }
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let (tv_in, tv_out) = dpi_check(&channel, &p, &q)?;
        v.push(tv_out - tv_in - 1e-12);
    }
    Ok(CheckReport::from_violations("dpi", v))
}

fn random_density(rng: &mut ChaCha8Rng) -> Result<Density1D> {
    let bound = rng.random_range(0.5..2.0);
    match rng.random_range(0..3) {
        0 => Density1D::uniform(bound, 16),
        1 => Density1D::spike(bound, 63),
        _ => {
            let bins = rng.random_range(4..=32);
            Density1D::from_bins(bound, (0..bins).map(|_| rng.random_range(0.0..1.0)).collect())
        }
    }
}

pub fn check_gmm(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7104);
    let mut v = Vec::with_capacity(opts.trials);
    for _ in 0..opts.trials {
        let f = random_density(&mut rng)?;
        let b = f.bound();
        let sigma = b * 10f64.powf(rng.random_range(-1.0..0.5));
        let eta = b * 10f64.powf(rng.random_range(-1.7..0.0));
        let est = gmm_estimate_1d(&f, sigma, eta, None)?;
        v.push(est.tv_error - est.bound);
    }
    Ok(CheckReport::from_violations("gmm_smoothing", v))
}

pub fn check_greedy_vs_exact(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7105);
    let trials = (opts.trials / 20).max(1);
    let mut v = Vec::with_capacity(2 * trials);
    for _ in 0..trials {
        let n = rng.random_range(2..=14);
        let points: Vec<Array2<f64>> = (0..n)
            .map(|_| Array2::from_shape_simple_fn((3, 2), || rng.random_range(0.0..1.0)))
            .collect();
        let metric = if rng.random_bool(0.5) { ExtMetric::Sup } else { ExtMetric::L2 };
        let eps = rng.random_range(0.1..0.8);
        let greedy = greedy_cover(&points, eps, metric)?;
        let exact = exact_min_cover(&points, eps, metric)?;
        v.push(exact as f64 - greedy as f64);
        // Shrinking ε never shrinks the greedy cover.
        v.push(greedy as f64 - greedy_cover(&points, eps / 2.0, metric)? as f64);
    }
    Ok(CheckReport::from_violations("greedy_cover", v))
}

/// Greedy covers of the toy network's ramp-loss class against the Lipschitz bound.
pub fn check_toy_lipschitz(opts: &VerifyOptions) -> Result<CheckReport> {
    let fixture = ToyLipschitzFixture::new(opts.seed)?;
    let restrictions = fixture.restrictions()?;
    let mut v = Vec::new();
    for eps in [0.05, 0.1, 0.2] {
        let size = greedy_cover(&restrictions, eps, ExtMetric::L2)?;
        v.push((size as f64).ln() - fixture.ln_bound(eps)?);
    }
    Ok(CheckReport::from_violations("toy_lipschitz_cover", v))
}

pub fn run_verification(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_tv_gaussian(opts)?,
        check_tv_quadrature(opts)?,
        check_dpi(opts)?,
        check_gmm(opts)?,
        check_greedy_vs_exact(opts)?,
        check_toy_lipschitz(opts)?,
    ])
}
