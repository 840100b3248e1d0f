//! Arbitrary-precision reference evaluations of the covering-number formulas.
//!
//! Everything here is written straight from the displayed formulas, in
//! decimal floating point with 60 significant digits, and shares no code with
//! the crate under test.

#![allow(dead_code)]

use std::str::FromStr;

use dashu_float::DBig;

const DIGITS: usize = 60;

pub fn big(x: f64) -> DBig {
    big_str(&format!("{x:e}"))
}

pub fn big_str(s: &str) -> DBig {
    DBig::from_str(s).unwrap().with_precision(DIGITS).value()
}

pub fn int(n: u64) -> DBig {
    big_str(&n.to_string())
}

pub fn to_f64(x: &DBig) -> f64 {
    x.to_f64().value()
}

fn sqrt(x: &DBig) -> DBig {
    (x.ln() / int(2)).exp()
}

fn pow(x: &DBig, e: &DBig) -> DBig {
    (x.ln() * e).exp()
}

fn e_const() -> DBig {
    int(1).exp()
}

fn log2(x: &DBig) -> DBig {
    x.ln() / int(2).ln()
}

/// Architecture `d, p_1 .. p_T` as plain integers.
pub struct Dims {
    pub d: u64,
    pub p: Vec<u64>,
}

impl Dims {
    pub fn t(&self) -> u64 {
        self.p.len() as u64
    }

    pub fn p_t(&self) -> u64 {
        *self.p.last().unwrap()
    }

    pub fn w_rvo(&self) -> u64 {
        let t = self.p.len();
        let mut w = self.d * self.p[0];
        for i in 1..t - 1 {
            w += self.p[i - 1] * self.p[i];
        }
        w + self.p[t - 2]
    }

    pub fn r_rvo(&self) -> u64 {
        1 + self.p[..self.p.len() - 1].iter().sum::<u64>()
    }
}

/// Our ramp-loss bound, term by term as displayed.
pub fn ours(dims: &Dims, m: &DBig, gamma: &DBig, eps: &DBig, sigma: &DBig) -> DBig {
    let t = int(dims.t());
    let sqrt_pt = sqrt(&int(dims.p_t()));
    let es = eps * sigma;
    let ge = gamma * eps;
    let three_halves = big_str("1.5");
    let five_halves = big_str("2.5");
    let mut total = int(0);
    for i in 1..dims.p.len() {
        let p_prev = int(dims.p[i - 1]);
        let p_cur = int(dims.p[i]);
        let a_num = int(10) / gamma * &t * &sqrt_pt * &p_prev - &es;
        let a = a_num / &es;
        let b = int(10) * &t * &p_prev * &sqrt_pt / (&ge * sigma);
        let num = int(30) * pow(&(int(2) * &t * &sqrt_pt), &three_halves) * pow(&p_prev, &five_halves) * sqrt(&a.ln());
        let den = pow(&ge, &three_halves) * sigma * sigma;
        let x = num / den * b.ln();
        total += p_cur * p_prev * x.ln();
    }
    let first = (&t * e_const() * m * &sqrt_pt / (&ge * sigma)).ln();
    total + int(dims.d * dims.p[0]) * first
}

pub fn norm_based(dims: &Dims, gamma: &DBig, eps: &DBig, v: &DBig) -> DBig {
    let t = dims.t();
    let pt = int(dims.p_t());
    let base = int(2) * sqrt(&pt) / (gamma * eps);
    let log2_n = &pt / int(2)
        * pow(&base, &int(2 * t))
        * pow(&(int(2) * v), &int(t * (t + 1)))
        * log2(&int(2 * dims.d + 2));
    log2_n * int(2).ln()
}

pub fn pdim_p(dims: &Dims) -> DBig {
    let a = (int(dims.w_rvo()) + int(2)) * int(dims.r_rvo());
    &a * &a + int(11) * &a * log2(&(int(18) * &a * int(dims.r_rvo())))
}

pub fn pdim(dims: &Dims, m: &DBig, gamma: &DBig, eps: &DBig) -> DBig {
    let p = pdim_p(dims);
    let pt = int(dims.p_t());
    let inner = (int(2) * sqrt(&pt) * e_const() * m / (&p * gamma * eps)).ln();
    pt * p * inner
}

pub fn lipschitz(dims: &Dims, m: &DBig, gamma: &DBig, eps: &DBig, v: &DBig) -> DBig {
    let pt = int(dims.p_t());
    let w = int(dims.w_rvo());
    let vt = pow(v, &int(dims.t()));
    let inner = (int(4) * e_const() * m * sqrt(&pt) * &w * vt / (gamma * eps * (v - int(1)))).ln();
    pt * w * inner
}

pub fn spectral(x_frob: &DBig, w: u64, gamma: &DBig, eps: &DBig, s: &[DBig], b: &[DBig]) -> DBig {
    let two_thirds = int(2) / int(3);
    let mut prod = int(1);
    let mut sum = int(0);
    for (si, bi) in s.iter().zip(b) {
        prod *= si * si;
        sum += pow(&(bi / si), &two_thirds);
    }
    let ww = int(w);
    int(4) * x_frob * x_frob * (int(2) * &ww * &ww).ln() / (gamma * gamma * eps * eps) * prod * &sum * &sum * &sum
}

/// `|got/want − 1|`, formed in high precision so huge values never pass through `f64`.
pub fn rel_err(got: f64, want: &DBig) -> f64 {
    to_f64(&(big(got) / want - int(1))).abs()
}
