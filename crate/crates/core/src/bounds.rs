//! Closed-form upper bounds on `ln N_U(ε, F_γ, m, ‖·‖₂^{ℓ2})` for the
//! ramp-loss class of a sigmoid network.
//!
//! Every bound is accumulated as a sum of logarithms so that inputs such as
//! `σ = 10⁻³⁵⁰` or `m = 10³⁰⁰` stay representable. The sample size and the
//! noise scale are therefore carried as natural logs.

use std::f64::consts::{LN_10, LN_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::NetworkArch;
use crate::norms::ArchQuantifiers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    NormBased,
    Pdim,
    Lipschitz,
    Spectral,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::NormBased,
        Method::Pdim,
        Method::Lipschitz,
        Method::Spectral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::NormBased => "norm_based",
            Method::Pdim => "pdim",
            Method::Lipschitz => "lipschitz",
            Method::Spectral => "spectral",
        }
    }

    /// Whether the bound reads trained weight norms.
    pub fn needs_weights(self) -> bool {
        matches!(self, Method::NormBased | Method::Lipschitz | Method::Spectral)
    }

    pub fn depends_on_m(self) -> bool {
        matches!(self, Method::Ours | Method::Pdim | Method::Lipschitz)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bound method '{s}'")))
    }
}

/// Noise standard deviation stored as `ln σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale {
    ln_sigma: f64,
}

impl NoiseScale {
    /// `σ = 0` is accepted and becomes `ln σ = -∞`; bounds that need σ > 0 reject it.
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise scale must be a finite σ ≥ 0, got {sigma}")));
        }
        Ok(Self { ln_sigma: sigma.ln() })
    }

    pub fn from_log10(log10_sigma: f64) -> Result<Self> {
        if !log10_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("log10 σ must be finite, got {log10_sigma}")));
        }
        Ok(Self { ln_sigma: log10_sigma * LN_10 })
    }

    pub fn ln(self) -> f64 {
        self.ln_sigma
    }

    pub fn log10(self) -> f64 {
        self.ln_sigma / LN_10
    }

    /// σ as a double; underflows to 0 below about 10⁻³²⁴.
    pub fn sigma(self) -> f64 {
        self.ln_sigma.exp()
    }
}

/// Which form of our bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OursVariant {
    /// Cover of the γ-margin ramp class, used by the NVAC and GB pipelines.
    #[default]
    RampAdjusted,
    /// Cover of the network's expected output itself (no margin rescaling).
    Unmargined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub method: Method,
    pub epsilon: f64,
    /// Natural log of the (real-valued) sample size.
    pub ln_m: f64,
    pub gamma: f64,
    pub noise: NoiseScale,
    pub variant: OursVariant,
    pub arch: NetworkArch,
    pub quant: ArchQuantifiers,
}

impl BoundQuery {
    /// Query at sample size `m` with γ and σ taken from `arch`.
    pub fn new(method: Method, arch: &NetworkArch, quant: &ArchQuantifiers, epsilon: f64, m: f64) -> Result<Self> {
        if !(m >= 1.0) {
            return Err(Error::InvalidConfig(format!("sample size must be at least 1, got {m}")));
        }
        Self {
            method,
            epsilon,
            ln_m: m.ln(),
            gamma: arch.gamma,
            noise: NoiseScale::from_sigma(arch.sigma)?,
            variant: OursVariant::default(),
            arch: arch.clone(),
            quant: quant.clone(),
        }
        .validated()
    }

    pub fn with_ln_m(mut self, ln_m: f64) -> Result<Self> {
        self.ln_m = ln_m;
        self.validated()
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validated()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validated()
    }

    pub fn with_noise(mut self, noise: NoiseScale) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_variant(mut self, variant: OursVariant) -> Self {
        self.variant = variant;
        self
    }

    fn validated(self) -> Result<Self> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.ln_m >= 0.0) || !self.ln_m.is_finite() {
            return Err(Error::InvalidConfig(format!("ln m must be finite and ≥ 0, got {}", self.ln_m)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(self)
    }

    pub fn m(&self) -> f64 {
        self.ln_m.exp()
    }

    fn depth(&self) -> usize {
        self.arch.widths.len()
    }

    fn p_t(&self) -> f64 {
        *self.arch.widths.last().expect("validated arch has layers") as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnCover {
    pub ln_n: f64,
    pub query: BoundQuery,
}

impl LnCover {
    pub fn log10_n(&self) -> f64 {
        self.ln_n / LN_10
    }

    pub fn report(&self) -> BoundReport {
        BoundReport {
            method: self.query.method,
            epsilon: self.query.epsilon,
            m: self.query.m(),
            gamma: self.query.gamma,
            sigma: self.query.noise.sigma(),
            log10_sigma: self.query.noise.log10(),
            ln_n: self.ln_n,
            log10_n: self.log10_n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub method: Method,
    pub epsilon: f64,
    pub m: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub log10_sigma: f64,
    pub ln_n: f64,
    pub log10_n: f64,
}

/// Evaluates the bound selected by `query.method`.
pub fn ln_cover(query: &BoundQuery) -> Result<LnCover> {
    match query.method {
        Method::Ours => ln_cover_ours(query),
        Method::NormBased => ln_cover_norm_based(query),
        Method::Pdim => ln_cover_pdim(query),
        Method::Lipschitz => ln_cover_lipschitz(query),
        Method::Spectral => ln_cover_spectral(query),
    }
}

fn finish(ln_n: f64, query: &BoundQuery, method: Method) -> Result<LnCover> {
    if ln_n.is_nan() {
        return Err(Error::Numerical(format!("{method} bound evaluated to NaN")));
    }
    if ln_n.is_infinite() {
        return Err(Error::AstronomicallyVacuous { log10_ln_n: f64::INFINITY });
    }
    Ok(LnCover {
        // A cover always has at least one element.
        ln_n: ln_n.max(0.0),
        query: query.clone().with_method(method),
    })
}

/// Our bound: every layer after the first is covered through its noisy
/// total-variation cover, the first layer through its pseudo-dimension.
///
/// The ramp-adjusted form equals the unmargined form evaluated at `γε/2`.
pub fn ln_cover_ours(query: &BoundQuery) -> Result<LnCover> {
    const METHOD: &str = "ours";
    let t = query.depth();
    if t < 2 {
        return Err(Error::Precondition {
            method: METHOD,
            reason: "needs at least two layers (T ≥ 2)".into(),
        });
    }
    let ln_sigma = query.noise.ln();
    if !ln_sigma.is_finite() {
        return Err(Error::Precondition {
            method: METHOD,
            reason: "needs noise σ > 0".into(),
        });
    }
    let ln_eps = match query.variant {
        OursVariant::RampAdjusted => query.gamma.ln() + query.epsilon.ln() - LN_2,
        OursVariant::Unmargined => query.epsilon.ln(),
    };
    let tf = t as f64;
    let ln_t_sqrt_pt = tf.ln() + 0.5 * query.p_t().ln();

    let widths = &query.arch.widths;
    let mut total = 0.0;
    for i in 1..t {
        let p_prev = widths[i - 1] as f64;
        let p_cur = widths[i] as f64;
        // B = 5T√p_T·p_{i-1}/(εσ), A = B − 1.
        let ln_b = 5f64.ln() + ln_t_sqrt_pt + p_prev.ln() - ln_eps - ln_sigma;
        let ln_a = ln_b + (-(-ln_b).exp()).ln_1p();
        if !(ln_a > 0.0) {
            return Err(Error::Precondition {
                method: METHOD,
                reason: format!(
                    "layer {}: εσ too large relative to 5T√p_T·p_{{i-1}} (inner logarithm not positive)",
                    i + 1
                ),
            });
        }
        let ln_x = 30f64.ln() + 1.5 * ln_t_sqrt_pt + 2.5 * p_prev.ln() - 1.5 * ln_eps - 2.0 * ln_sigma
            + 0.5 * ln_a.ln()
            + ln_b.ln();
        total += p_cur * p_prev * ln_x;
    }

    let d = query.arch.input_dim as f64;
    let p1 = widths[0] as f64;
    let first = tf.ln() + 1.0 + query.ln_m + 0.5 * query.p_t().ln() - LN_2 - ln_eps - ln_sigma;
    total += d * p1 * first;
    finish(total, query, Method::Ours)
}

/// Norm-based bound, stated in bits and converted to nats.
pub fn ln_cover_norm_based(query: &BoundQuery) -> Result<LnCover> {
    const METHOD: &str = "norm_based";
    let v = query.quant.require_weights(METHOD)?.v;
    if !(v > 0.0) {
        return Err(Error::Precondition {
            method: METHOD,
            reason: format!("needs V > 0, got {v}"),
        });
    }
    let t = query.depth() as f64;
    let p_t = query.p_t();
    let d = query.arch.input_dim as f64;
    let ln_log2_n = (p_t / 2.0).ln()
        + 2.0 * t * (2.0 * p_t.sqrt()).ln()
        - 2.0 * t * (query.gamma.ln() + query.epsilon.ln())
        + t * (t + 1.0) * (2.0 * v).ln()
        + (2.0 * d + 2.0).log2().ln();
    let ln_ln_n = ln_log2_n + LN_2.ln();
    if ln_ln_n >= f64::MAX.ln() {
        return Err(Error::AstronomicallyVacuous {
            log10_ln_n: ln_ln_n / LN_10,
        });
    }
    finish(ln_ln_n.exp(), query, Method::NormBased)
}

/// The pseudo-dimension bound `P` of one real-valued output network.
pub fn pdim_p(w_rvo: u64, r_rvo: u64) -> f64 {
    let a = (w_rvo as f64 + 2.0) * r_rvo as f64;
    let r = r_rvo as f64;
    a * a + 11.0 * a * (18.0 * a * r).log2()
}

pub fn ln_cover_pdim(query: &BoundQuery) -> Result<LnCover> {
    const METHOD: &str = "pdim";
    let p = pdim_p(query.quant.require_w_rvo(METHOD)?, query.quant.require_r_rvo(METHOD)?);
    if !(query.ln_m > p.ln()) {
        return Err(Error::SampleBelowPdim { p, m: query.m() });
    }
    let p_t = query.p_t();
    let inner = LN_2 + 0.5 * p_t.ln() + 1.0 + query.ln_m - p.ln() - query.gamma.ln() - query.epsilon.ln();
    finish(p_t * p * inner, query, Method::Pdim)
}

/// Lipschitzness-based bound; `V` is the largest `‖Wᵀ‖_{1,∞}` over layers `2..T`.
pub fn ln_cover_lipschitz(query: &BoundQuery) -> Result<LnCover> {
    const METHOD: &str = "lipschitz";
    let w_rvo = query.quant.require_w_rvo(METHOD)? as f64;
    let v = query
        .quant
        .require_weights(METHOD)?
        .v_tail
        .ok_or_else(|| Error::Precondition {
            method: METHOD,
            reason: "needs at least two layers (T ≥ 2)".into(),
        })?;
    if !(v > 1.0) {
        return Err(Error::Precondition {
            method: METHOD,
            reason: format!("Lipschitz bound undefined for V ≤ 1 (V = {v})"),
        });
    }
    let t = query.depth() as f64;
    let p_t = query.p_t();
    let inner = 4f64.ln() + 1.0 + query.ln_m + 0.5 * p_t.ln() + w_rvo.ln() + t * v.ln()
        - query.gamma.ln()
        - query.epsilon.ln()
        - (v - 1.0).ln();
    finish(p_t * w_rvo * inner, query, Method::Lipschitz)
}

/// Spectral bound with the normalized input Frobenius norm.
pub fn ln_cover_spectral(query: &BoundQuery) -> Result<LnCover> {
    const METHOD: &str = "spectral";
    let wq = query.quant.require_weights(METHOD)?;
    let x_frob = query.quant.x_frob.ok_or_else(|| Error::Precondition {
        method: METHOD,
        reason: "needs the normalized Frobenius norm of the training inputs".into(),
    })?;
    if wq.s.len() != query.depth() || wq.b.len() != query.depth() {
        return Err(Error::DimensionMismatch {
            expected: query.depth(),
            got: wq.s.len(),
        });
    }
    let mut ln_prod_s2 = 0.0;
    let mut ratio_sum = 0.0;
    for (i, (&s, &b)) in wq.s.iter().zip(&wq.b).enumerate() {
        if s == 0.0 {
            if b > 0.0 {
                return Err(Error::Precondition {
                    method: METHOD,
                    reason: format!("layer {}: spectral norm 0 with (2,1) norm {b}", i + 1),
                });
            }
            ln_prod_s2 = f64::NEG_INFINITY;
            continue;
        }
        ln_prod_s2 += 2.0 * s.ln();
        ratio_sum += (b / s).powf(2.0 / 3.0);
    }
    if ratio_sum == 0.0 || x_frob == 0.0 || ln_prod_s2 == f64::NEG_INFINITY {
        return finish(0.0, query, Method::Spectral);
    }
    let w = query.quant.w as f64;
    let ln_ln_n = 4f64.ln() + 2.0 * x_frob.ln() + (2.0 * w * w).ln().ln()
        - 2.0 * (query.gamma.ln() + query.epsilon.ln())
        + ln_prod_s2
        + 3.0 * ratio_sum.ln();
    if ln_ln_n >= f64::MAX.ln() {
        return Err(Error::AstronomicallyVacuous {
            log10_ln_n: ln_ln_n / LN_10,
        });
    }
    finish(ln_ln_n.exp(), query, Method::Spectral)
}
