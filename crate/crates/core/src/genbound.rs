//! Dudley-integral generalization bounds and the NVAC solver.
//!
//! The NVAC of a bound is the smallest replicated sample size `M = m·n` at
//! which `(6/√M)·√(ln N(ε, M)) ≤ ε` with `ε = (1 − ramp loss)/10`. The search
//! runs in `ln M` so that sizes far beyond `f64` range are still reachable.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::bounds::{ln_cover, pdim_p, BoundQuery, Method};
use crate::error::{Error, Result};

/// Geometric grid of scales `ν` used both as quadrature nodes and as the
/// candidate values of the lower integration limit.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsGrid {
    points: Vec<f64>,
}

impl EpsGrid {
    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) || n < 2 {
            return Err(Error::InvalidConfig(format!(
                "geometric grid needs 0 < lo < hi and n ≥ 2, got ({lo}, {hi}, {n})"
            )));
        }
        let ratio = (hi / lo).ln() / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|k| lo * (ratio * k as f64).exp()).collect();
        points[n - 1] = hi;
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

impl Default for EpsGrid {
    /// 200 points from 10⁻⁴ to 1/2.
    fn default() -> Self {
        Self::geometric(1e-4, 0.5, 200).expect("static grid is valid")
    }
}

/// `∫_{ν_k}^{ν_last} √(ln N(ν)) dν` for every grid index `k`, by the trapezoid rule.
pub fn tail_integrals<F>(mut lncover: F, grid: &EpsGrid) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let pts = grid.points();
    let mut roots = Vec::with_capacity(pts.len());
    for &nu in pts {
        let ln_n = lncover(nu)?;
        if !(ln_n >= 0.0) || !ln_n.is_finite() {
            return Err(Error::Numerical(format!("ln N({nu}) = {ln_n} is not a finite nonnegative value")));
        }
        roots.push(ln_n.sqrt());
    }
    let mut tails = vec![0.0; pts.len()];
    for k in (0..pts.len() - 1).rev() {
        tails[k] = tails[k + 1] + 0.5 * (pts[k + 1] - pts[k]) * (roots[k] + roots[k + 1]);
    }
    Ok(tails)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DudleyBound {
    /// `min_ε 4ε + (12/√m)·∫_ε^{1/2} √(ln N)`.
    pub value: f64,
    pub best_epsilon: f64,
    /// The integral at `best_epsilon`.
    pub integral: f64,
}

pub fn dudley_integral<F>(lncover: F, m: f64, grid: &EpsGrid) -> Result<DudleyBound>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(m > 0.0) {
        return Err(Error::InvalidConfig(format!("sample size must be positive, got {m}")));
    }
    let tails = tail_integrals(lncover, grid)?;
    let scale = 12.0 / m.sqrt();
    let mut best = DudleyBound {
        value: f64::INFINITY,
        best_epsilon: f64::NAN,
        integral: f64::NAN,
    };
    for (&eps, &tail) in grid.points().iter().zip(&tails) {
        let value = 4.0 * eps + scale * tail;
        if value < best.value {
            best = DudleyBound {
                value,
                best_epsilon: eps,
                integral: tail,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbResult {
    pub gb_value: f64,
    pub best_epsilon: f64,
    pub delta: f64,
    pub integral_value: f64,
    /// Empirical ramp loss plus `gb_value`: an upper bound on the 0-1 risk.
    pub risk_bound: f64,
}

pub const DEFAULT_DELTA: f64 = 0.01;

/// `GB = 2·[Dudley bound] + 3√(ln(2/δ)/(2m))`.
pub fn full_gb<F>(lncover: F, m: f64, ramp_loss: f64, delta: f64, grid: &EpsGrid) -> Result<GbResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    let d = dudley_integral(lncover, m, grid)?;
    let gb_value = 2.0 * d.value + 3.0 * ((2.0 / delta).ln() / (2.0 * m)).sqrt();
    Ok(GbResult {
        gb_value,
        best_epsilon: d.best_epsilon,
        delta,
        integral_value: d.integral,
        risk_bound: ramp_loss + gb_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvacResult {
    pub method: String,
    pub epsilon_used: f64,
    pub ramp_loss_input: f64,
    /// Replication count; may be `inf` when beyond `f64` range.
    pub n_star: f64,
    pub log10_n_star: f64,
    pub nvac_log10: f64,
    /// `m·n*` when representable.
    pub nvac: Option<f64>,
    pub converged: bool,
    pub diagnostics: Option<String>,
}

/// Largest `log10 M` the search will consider.
pub const LOG10_M_CEILING: f64 = 400.0;
const LN_M_TOL: f64 = 1e-6;
/// Integers up to here are exact in `f64`, so `n*` can be pinned exactly.
const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

pub fn nvac_epsilon(ramp_loss: f64) -> Result<f64> {
    if !(ramp_loss >= 0.0) {
        return Err(Error::InvalidConfig(format!("ramp loss must be in [0, 1), got {ramp_loss}")));
    }
    if ramp_loss >= 1.0 {
        return Err(Error::VacuousAlready(ramp_loss));
    }
    Ok((1.0 - ramp_loss) / 10.0)
}

/// NVAC of a named bound; `base` supplies everything but `ε` and `M`, and
/// `base.ln_m` is the size of the original sample.
pub fn solve_nvac(base: &BoundQuery, ramp_loss: f64) -> Result<NvacResult> {
    let epsilon = nvac_epsilon(ramp_loss)?;
    let query = base.clone().with_epsilon(epsilon)?;
    let floor = match base.method {
        Method::Pdim => Some(
            pdim_p(
                base.quant.require_w_rvo("pdim")?,
                base.quant.require_r_rvo("pdim")?,
            )
            .ln(),
        ),
        _ => None,
    };
    let m = base.m();
    solve_nvac_with(
        base.method.as_str(),
        |ln_m_total| Ok(ln_cover(&query.clone().with_ln_m(ln_m_total)?)?.ln_n),
        m,
        ramp_loss,
        floor,
    )
}

/// NVAC for an arbitrary `ln M ↦ ln N(ε, M)`. `ln_floor`, if given, is a
/// strict lower bound on `ln M` below which the bound is undefined.
pub fn solve_nvac_with<F>(
    method: &str,
    mut lncover_at: F,
    m: f64,
    ramp_loss: f64,
    ln_floor: Option<f64>,
) -> Result<NvacResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let epsilon = nvac_epsilon(ramp_loss)?;
    if !(m >= 1.0) || !m.is_finite() {
        return Err(Error::InvalidConfig(format!("sample size must be at least 1, got {m}")));
    }
    let ln_m = m.ln();
    let ln_eps2_over_36 = 2.0 * epsilon.ln() - 36f64.ln();

    // Satisfied iff 36·ln N/ε² ≤ M, compared in logs.
    let mut holds = |ln_total: f64| -> Result<bool> {
        if ln_floor.is_some_and(|f| ln_total <= f) {
            return Ok(false);
        }
        let ln_n = lncover_at(ln_total)?;
        Ok(ln_n <= 0.0 || ln_n.ln() - ln_eps2_over_36 <= ln_total)
    };

    let ceiling = LOG10_M_CEILING * LN_10;
    let mut lo = match ln_floor {
        // One ulp-scale step above the floor keeps the strict inequality.
        Some(f) if f >= ln_m => f + f.abs().max(1.0) * 1e-12,
        _ => ln_m,
    };
    let result = |n_star: f64, log10_n_star: f64, converged: bool, diagnostics: Option<String>| {
        let nvac_log10 = ln_m / LN_10 + log10_n_star;
        let nvac = (nvac_log10 < 308.0).then(|| m * n_star);
        NvacResult {
            method: method.to_string(),
            epsilon_used: epsilon,
            ramp_loss_input: ramp_loss,
            n_star,
            log10_n_star,
            nvac_log10,
            nvac,
            converged,
            diagnostics,
        }
    };

    if lo > ceiling {
        return Ok(result(
            f64::INFINITY,
            (lo - ln_m) / LN_10,
            false,
            Some(format!("search floor ln M = {lo:.3} exceeds the ceiling")),
        ));
    }
    if holds(lo)? {
        if ln_floor.is_none() || lo == ln_m {
            return Ok(result(1.0, 0.0, true, None));
        }
        return Ok(finish_integer(&mut holds, lo - 1e-9, lo, ln_m, result)?);
    }

    let mut step = 1.0;
    let mut hi = lo + step;
    loop {
        if hi > ceiling {
            if holds(ceiling)? {
                hi = ceiling;
                break;
            }
            return Ok(result(
                f64::INFINITY,
                f64::INFINITY,
                false,
                Some(format!("no crossing below log10 M = {LOG10_M_CEILING}")),
            ));
        }
        if holds(hi)? {
            break;
        }
        lo = hi;
        step *= 2.0;
        hi = lo + step;
    }
    while hi - lo > LN_M_TOL {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    finish_integer(&mut holds, lo, hi, ln_m, result)
}

/// Turns a bracket `[lo, hi]` on `ln M` (failing at `lo`, holding at `hi`)
/// into the smallest integer replication count.
fn finish_integer<H, R>(holds: &mut H, lo: f64, hi: f64, ln_m: f64, result: R) -> Result<NvacResult>
where
    H: FnMut(f64) -> Result<bool>,
    R: Fn(f64, f64, bool, Option<String>) -> NvacResult,
{
    let n_hi = (hi - ln_m).exp().ceil().max(1.0);
    if n_hi > EXACT_INT_LIMIT || !n_hi.is_finite() {
        let log10_n = (hi - ln_m) / LN_10;
        return Ok(result(n_hi, log10_n, true, None));
    }
    let mut n_hi = n_hi;
    // Widen until the bracket is valid at integer resolution.
    while !holds(ln_m + n_hi.ln())? {
        n_hi = (n_hi * 2.0).min(EXACT_INT_LIMIT);
        if n_hi == EXACT_INT_LIMIT && !holds(ln_m + n_hi.ln())? {
            return Err(Error::Numerical("NVAC condition is not monotone in the sample size".into()));
        }
    }
    let mut n_lo = (lo - ln_m).exp().floor().max(0.0).min(n_hi - 1.0);
    while n_lo >= 1.0 && holds(ln_m + n_lo.ln())? {
        n_lo = (n_lo / 2.0).floor();
    }
    // Invariant: n_lo fails (or is 0), n_hi holds.
    while n_hi - n_lo > 1.0 {
        let mid = ((n_lo + n_hi) / 2.0).floor();
        if holds(ln_m + mid.ln())? {
            n_hi = mid;
        } else {
            n_lo = mid;
        }
    }
    Ok(result(n_hi, n_hi.log10(), true, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::NetworkArch;
    use crate::norms::ArchQuantifiers;
    use crate::bounds::NoiseScale;

    fn ours_base(log10_sigma: f64) -> BoundQuery {
        let arch = NetworkArch::baseline();
        let quant = ArchQuantifiers::structural(&arch);
        BoundQuery::new(Method::Ours, &arch, &quant, 0.1, 59000.0)
            .unwrap()
            .with_noise(NoiseScale::from_log10(log10_sigma).unwrap())
    }

    #[test]
    fn grid_endpoints() {
        let g = EpsGrid::default();
        assert_eq!(g.points().len(), 200);
        assert!((g.points()[0] - 1e-4).abs() < 1e-18);
        assert_eq!(g.points()[199], 0.5);
        assert!(EpsGrid::geometric(0.5, 0.1, 10).is_err());
    }

    #[test]
    fn zero_entropy_dudley_is_grid_floor() {
        let d = dudley_integral(|_| Ok(0.0), 1000.0, &EpsGrid::default()).unwrap();
        assert!((d.value - 4e-4).abs() < 1e-15);
        assert!((d.best_epsilon - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn constant_entropy_matches_closed_form_on_grid() {
        let grid = EpsGrid::default();
        let (c, m) = (50.0f64, 1e4f64);
        let d = dudley_integral(|_| Ok(c), m, &grid).unwrap();
        let want = grid
            .points()
            .iter()
            .map(|&e| 4.0 * e + 12.0 * c.sqrt() * (0.5 - e) / m.sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!((d.value - want).abs() < 1e-12);
    }

    #[test]
    fn inverse_scale_entropy_matches_antiderivative() {
        let grid = EpsGrid::geometric(0.01, 0.5, 200).unwrap();
        let tails = tail_integrals(|nu| Ok(1.0 / nu), &grid).unwrap();
        let want = 2.0 * (0.5f64.sqrt() - 0.1);
        assert!((tails[0] / want - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gb_closed_pieces() {
        let r = full_gb(|_| Ok(0.0), 100.0, 0.0, DEFAULT_DELTA, &EpsGrid::default()).unwrap();
        let conf = 3.0 * ((200f64).ln() / 200.0).sqrt();
        assert!((conf - 0.4884).abs() < 1e-3);
        assert!((r.gb_value - (conf + 8e-4)).abs() < 1e-12);
        assert!(full_gb(|_| Ok(0.0), 100.0, 0.0, 1.0, &EpsGrid::default()).is_err());
    }

    #[test]
    fn gb_vanishes_with_m() {
        let r = full_gb(|_| Ok(0.0), 1e16, 0.0, DEFAULT_DELTA, &EpsGrid::default()).unwrap();
        assert!(r.gb_value < 1e-3);
    }

    #[test]
    fn constant_entropy_nvac_is_closed_form() {
        let (c, m) = (1.0e4, 59000.0);
        let r = solve_nvac_with("const", |_| Ok(c), m, 0.01, None).unwrap();
        let eps = 0.099f64;
        let want = (36.0 * c / (m * eps * eps)).ceil();
        assert_eq!(r.n_star, want);
        assert_eq!(r.nvac, Some(m * want));
    }

    #[test]
    fn tiny_entropy_needs_no_replication() {
        let r = solve_nvac_with("const", |_| Ok(1e-3), 59000.0, 0.0, None).unwrap();
        assert_eq!(r.n_star, 1.0);
        assert!(r.converged);
    }

    #[test]
    fn runaway_entropy_reports_nonconvergence() {
        let r = solve_nvac_with("runaway", |_| Ok(f64::INFINITY), 10.0, 0.0, None).unwrap();
        assert!(!r.converged);
        assert!(r.diagnostics.is_some());
    }

    #[test]
    fn vacuous_ramp_loss_is_rejected() {
        assert!(matches!(
            solve_nvac_with("c", |_| Ok(1.0), 10.0, 1.0, None),
            Err(Error::VacuousAlready(_))
        ));
        assert!(solve_nvac(&ours_base(-1.3), 1.2).is_err());
    }

    #[test]
    fn ours_crossing_certificate() {
        let base = ours_base(0.05f64.log10());
        let r = solve_nvac(&base, 0.01).unwrap();
        assert!(r.converged);
        let nvac = r.nvac.unwrap();
        let q = base.clone().with_epsilon(r.epsilon_used).unwrap();
        let at = |mm: f64| ln_cover(&q.clone().with_ln_m(mm.ln()).unwrap()).unwrap().ln_n;
        let eps2 = r.epsilon_used * r.epsilon_used;
        assert!(36.0 * at(nvac) / eps2 <= nvac);
        assert!(36.0 * at(nvac / 1.01) / eps2 > nvac / 1.01);
        // One replication fewer must fail.
        let fewer = nvac - 59000.0;
        assert!(36.0 * at(fewer) / eps2 > fewer);
    }

    #[test]
    fn nvac_nondecreasing_in_ramp_loss() {
        let base = ours_base(-2.0);
        let mut prev = 0.0;
        for k in 0..10 {
            let r = solve_nvac(&base, k as f64 * 0.09).unwrap();
            assert!(r.nvac_log10 >= prev);
            prev = r.nvac_log10;
        }
    }

    #[test]
    fn pdim_nvac_respects_floor() {
        let arch = NetworkArch::baseline();
        let quant = ArchQuantifiers::structural(&arch);
        let base = BoundQuery::new(Method::Pdim, &arch, &quant, 0.1, 59000.0).unwrap();
        let r = solve_nvac(&base, 0.01).unwrap();
        let p = pdim_p(321_250, 751);
        assert!(r.converged);
        assert!(10f64.powf(r.nvac_log10) > p);
    }
}
