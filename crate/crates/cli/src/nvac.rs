//! NVAC rows for a set of methods, their CSV form and the ordering summary.

use std::io::Write;

use anyhow::Result;
use noisecap_core::bounds::{BoundQuery, Method, NoiseScale};
use noisecap_core::genbound::{solve_nvac, solve_nvac_with, NvacResult};
use noisecap_core::mlp::NetworkArch;
use noisecap_core::norms::ArchQuantifiers;
use serde::{Deserialize, Serialize};

use crate::pipeline::runnable;

pub const NVAC_HEADER: [&str; 10] = [
    "method", "depth", "width", "sigma", "gamma", "m", "ramp_loss", "epsilon", "log10_nvac", "status",
];

/// Name of the synthetic self-test row with a constant `ln N`.
pub const CONSTANT_METHOD: &str = "constant";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvacRow {
    pub method: String,
    /// Number of hidden layers.
    pub depth: usize,
    /// Widest hidden layer.
    pub width: usize,
    pub log10_sigma: f64,
    pub gamma: f64,
    pub m: usize,
    pub ramp_loss: f64,
    pub epsilon: f64,
    pub log10_nvac: Option<f64>,
    /// `ok`, `not_converged: ..`, `skipped: ..` or `error: ..`.
    pub status: String,
}

impl NvacRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.depth.to_string(),
            self.width.to_string(),
            format_log10(self.log10_sigma),
            num(self.gamma),
            self.m.to_string(),
            num(self.ramp_loss),
            num(self.epsilon),
            self.log10_nvac.map(num).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

/// Shortest round-trip text for `v`, in exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Writes `10^x` to 12 significant digits so that values below `f64`
/// range still print, e.g. `1e-350`.
pub fn format_log10(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        return "0".into();
    }
    let v = 10f64.powf(x);
    if v.is_normal() {
        let rounded: f64 = format!("{v:.11e}").parse().expect("float formatting round-trips");
        return num(rounded);
    }
    let exp = x.floor();
    let mantissa = 10f64.powf(x - exp);
    if (mantissa - 1.0).abs() < 1e-12 {
        format!("1e{exp}")
    } else {
        format!("{mantissa}e{exp}")
    }
}

/// Everything an NVAC row needs besides the method.
#[derive(Debug, Clone)]
pub struct NvacSetting<'a> {
    pub arch: &'a NetworkArch,
    pub quant: &'a ArchQuantifiers,
    pub noise: NoiseScale,
    pub m: usize,
    pub ramp_loss: f64,
}

impl NvacSetting<'_> {
    fn row(&self, method: &str, result: std::result::Result<NvacResult, String>) -> NvacRow {
        let hidden = &self.arch.widths[..self.arch.widths.len() - 1];
        let mut row = NvacRow {
            method: method.to_string(),
            depth: hidden.len(),
            width: hidden.iter().copied().max().unwrap_or(0),
            log10_sigma: self.noise.log10(),
            gamma: self.arch.gamma,
            m: self.m,
            ramp_loss: self.ramp_loss,
            epsilon: (1.0 - self.ramp_loss) / 10.0,
            log10_nvac: None,
            status: String::new(),
        };
        match result {
            Ok(r) => {
                row.epsilon = r.epsilon_used;
                if r.converged {
                    row.log10_nvac = Some(r.nvac_log10);
                    row.status = "ok".into();
                } else {
                    row.status = format!("not_converged: {}", r.diagnostics.unwrap_or_default());
                }
            }
            Err(e) => row.status = e,
        }
        row
    }

    pub fn method_row(&self, method: Method) -> NvacRow {
        if !runnable(method, self.quant) {
            return self.row(method.as_str(), Err("skipped: needs trained weights".into()));
        }
        let result = BoundQuery::new(method, self.arch, self.quant, 0.1, self.m as f64)
            .map(|q| q.with_noise(self.noise))
            .and_then(|q| solve_nvac(&q, self.ramp_loss))
            .map_err(|e| format!("error: {e}"));
        self.row(method.as_str(), result)
    }

    /// A row that carries only a status, for points that never reached the solver.
    pub fn status_row(&self, method: &str, status: String) -> NvacRow {
        self.row(method, Err(status))
    }

    pub fn constant_row(&self, ln_n: f64) -> NvacRow {
        let result = solve_nvac_with(CONSTANT_METHOD, |_| Ok(ln_n), self.m as f64, self.ramp_loss, None)
            .map_err(|e| format!("error: {e}"));
        self.row(CONSTANT_METHOD, result)
    }

    pub fn rows(&self, methods: &[Method], constant_ln_n: Option<f64>) -> Vec<NvacRow> {
        let mut rows: Vec<NvacRow> = methods.iter().map(|&m| self.method_row(m)).collect();
        if let Some(c) = constant_ln_n {
            rows.push(self.constant_row(c));
        }
        rows
    }
}

pub fn write_nvac_csv<W: Write>(out: W, rows: &[NvacRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NVAC_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

fn sorted_ok(rows: &[NvacRow]) -> Vec<&NvacRow> {
    let mut ok: Vec<&NvacRow> = rows
        .iter()
        .filter(|r| r.is_ok() && r.method != CONSTANT_METHOD)
        .collect();
    ok.sort_by(|a, b| a.log10_nvac.partial_cmp(&b.log10_nvac).expect("finite NVAC"));
    ok
}

/// Methods in increasing NVAC order; failed rows and the self-test row are left out.
pub fn ordering(rows: &[NvacRow]) -> Vec<String> {
    sorted_ok(rows).into_iter().map(|r| r.method.clone()).collect()
}

/// One line like `ours (10.71) < pdim (22.28)`, then one line per failed row.
pub fn ordering_summary(rows: &[NvacRow]) -> String {
    let mut s = sorted_ok(rows)
        .iter()
        .map(|r| format!("{} ({:.2})", r.method, r.log10_nvac.unwrap()))
        .collect::<Vec<_>>()
        .join(" < ");
    for r in rows.iter().filter(|r| !r.is_ok()) {
        s.push_str(&format!("\n{}: {}", r.method, r.status));
    }
    s
}
