//! The six subcommands. Each reads a validated [`RunConfig`] and writes its
//! results under `out_dir`.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use noisecap_core::bounds::{ln_cover, BoundQuery, Method, NoiseScale};
use noisecap_core::checkpoint::{load_checkpoint, save_checkpoint};
use noisecap_core::dataio::Dataset;
use noisecap_core::genbound::{full_gb, EpsGrid};
use noisecap_core::mlp::NetworkArch;
use noisecap_core::norms::ArchQuantifiers;
use noisecap_core::oracle::{run_verification, CheckReport, VerifyOptions};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::nvac::{num, ordering_summary, write_nvac_csv, NvacRow, NvacSetting};
use crate::pipeline::{evaluate_all, load_data, model_quantifiers, runnable, train_model, Data};
use crate::sweep::{needs_data, run_sweep, Axis};

pub const BOUNDS_HEADER: [&str; 10] = [
    "method", "epsilon", "m", "gamma", "sigma", "ln_n", "log10_n", "gb_value", "risk_bound", "status",
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(&cfg.data)?;
    let model = train_model(&cfg.arch, &cfg.train, &data, "train")?;
    ensure_out(cfg)?;
    let ckpt = cfg.checkpoint_path();
    save_checkpoint(&ckpt, &model.params, &model.meta)?;
    write_json(&cfg.out_dir.join("train_metrics.json"), &model.metrics)?;
    for (k, l) in &model.metrics.losses {
        println!("{k:<22} ramp {:.4}  0-1 {:.4}", l.ramp_loss, l.zero_one_loss);
    }
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (params, meta) = load_checkpoint(cfg.checkpoint_path())?;
    let data = load_data(&cfg.data)?;
    let losses = evaluate_all(&params, &meta.arch, &cfg.train, &data)?;
    ensure_out(cfg)?;
    write_json(&cfg.out_dir.join("eval.json"), &losses)?;
    for (k, l) in &losses {
        println!("{k:<22} ramp {:.4}  0-1 {:.4}", l.ramp_loss, l.zero_one_loss);
    }
    Ok(())
}

/// What `bounds` and `nvac` know about the network under study.
pub struct ModelContext {
    pub arch: NetworkArch,
    pub quant: ArchQuantifiers,
    pub ramp_loss: f64,
    pub m: usize,
}

fn try_train_inputs(cfg: &RunConfig) -> Option<Dataset> {
    match load_data(&cfg.data) {
        Ok(d) => Some(d.split.train),
        Err(e) => {
            eprintln!("warning: {e:#}; the spectral bound will be unavailable");
            None
        }
    }
}

/// Reads the configured checkpoint when it exists; otherwise falls back to
/// the configured architecture with no weights.
pub fn model_context(cfg: &RunConfig) -> Result<ModelContext> {
    let path = cfg.checkpoint_path();
    let fallback_ramp = cfg.nvac.ramp_loss.unwrap_or(cfg.sweep.assumed_ramp_loss);
    if !path.exists() {
        eprintln!(
            "warning: no checkpoint at {}; only weight-free bounds will be computed",
            path.display()
        );
        return Ok(ModelContext {
            arch: cfg.arch.clone(),
            quant: ArchQuantifiers::structural(&cfg.arch),
            ramp_loss: fallback_ramp,
            m: cfg.data.train_size,
        });
    }
    let (params, meta) = load_checkpoint(&path)?;
    let train = try_train_inputs(cfg);
    let quant = model_quantifiers(&meta.arch, &params, train.as_ref())?;
    let report = meta.final_losses.get("train_expected");
    Ok(ModelContext {
        ramp_loss: cfg.nvac.ramp_loss.or(report.map(|l| l.ramp_loss)).unwrap_or(fallback_ramp),
        m: report.map_or(cfg.data.train_size, |l| l.sample_count),
        arch: meta.arch,
        quant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub method: Method,
    pub epsilon: f64,
    pub m: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub ln_n: Option<f64>,
    pub gb_value: Option<f64>,
    pub risk_bound: Option<f64>,
    pub status: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl BoundRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.method.to_string(),
            num(self.epsilon),
            self.m.to_string(),
            num(self.gamma),
            num(self.sigma),
            opt(self.ln_n),
            opt(self.ln_n.map(|v| v / std::f64::consts::LN_10)),
            opt(self.gb_value),
            opt(self.risk_bound),
            self.status.clone(),
        ]
    }
}

/// `ln N` at the configured scale and the full generalization bound for each method.
pub fn bound_rows(cfg: &RunConfig, ctx: &ModelContext) -> Vec<BoundRow> {
    let grid = EpsGrid::default();
    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = BoundRow {
                method,
                epsilon: cfg.bounds.epsilon,
                m: ctx.m,
                gamma: ctx.arch.gamma,
                sigma: ctx.arch.sigma,
                ln_n: None,
                gb_value: None,
                risk_bound: None,
                status: "ok".into(),
            };
            if !runnable(method, &ctx.quant) {
                row.status = "skipped: needs trained weights".into();
                return row;
            }
            let query = BoundQuery::new(method, &ctx.arch, &ctx.quant, cfg.bounds.epsilon, ctx.m as f64);
            let result = query.and_then(|q| {
                let ln_n = ln_cover(&q)?.ln_n;
                let gb = full_gb(
                    |nu| Ok(ln_cover(&q.clone().with_epsilon(nu)?)?.ln_n),
                    ctx.m as f64,
                    ctx.ramp_loss,
                    cfg.bounds.delta,
                    &grid,
                );
                Ok((ln_n, gb))
            });
            match result {
                Ok((ln_n, gb)) => {
                    row.ln_n = Some(ln_n);
                    match gb {
                        Ok(g) => {
                            row.gb_value = Some(g.gb_value);
                            row.risk_bound = Some(g.risk_bound);
                        }
                        Err(e) => row.status = format!("gb_error: {e}"),
                    }
                }
                Err(e) => row.status = format!("error: {e}"),
            }
            row
        })
        .collect()
}

pub fn cmd_bounds(cfg: &RunConfig) -> Result<()> {
    let ctx = model_context(cfg)?;
    let rows = bound_rows(cfg, &ctx);
    ensure_out(cfg)?;
    let path = cfg.out_dir.join("bounds.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(BOUNDS_HEADER)?;
    for r in &rows {
        w.write_record(r.record())?;
        println!("{:<11} ln N {:>14}  {}", r.method.as_str(), opt(r.ln_n), r.status);
    }
    w.flush()?;
    write_json(&cfg.out_dir.join("bounds.json"), &rows)?;
    Ok(())
}

pub fn nvac_rows(cfg: &RunConfig, ctx: &ModelContext) -> Result<Vec<NvacRow>> {
    let setting = NvacSetting {
        arch: &ctx.arch,
        quant: &ctx.quant,
        noise: NoiseScale::from_sigma(ctx.arch.sigma)?,
        m: ctx.m,
        ramp_loss: ctx.ramp_loss,
    };
    Ok(setting.rows(&cfg.methods, cfg.nvac.constant_ln_n))
}

pub fn cmd_nvac(cfg: &RunConfig) -> Result<()> {
    let ctx = model_context(cfg)?;
    let rows = nvac_rows(cfg, &ctx)?;
    ensure_out(cfg)?;
    let path = cfg.out_dir.join("nvac.csv");
    write_nvac_csv(fs::File::create(&path)?, &rows)?;
    let summary = ordering_summary(&rows);
    fs::write(cfg.out_dir.join("nvac_ordering.txt"), summary.clone() + "\n")?;
    println!("{summary}");
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, axes: &[Axis]) -> Result<()> {
    let data: Option<Data> = if needs_data(cfg, axes) {
        match load_data(&cfg.data) {
            Ok(d) => Some(d),
            Err(e) => {
                eprintln!("warning: {e:#}; points that need data will report errors");
                None
            }
        }
    } else {
        None
    };
    ensure_out(cfg)?;
    for (axis, bytes) in run_sweep(cfg, axes, data.as_ref())? {
        let path = cfg.out_dir.join(axis.file_name());
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        println!("{axis}: {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyReport {
    pub pass: bool,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckReport>,
}

pub fn verify_report(opts: &VerifyOptions) -> Result<VerifyReport> {
    let checks = run_verification(opts)?;
    Ok(VerifyReport {
        pass: checks.iter().all(|c| c.pass),
        trials: opts.trials,
        seed: opts.seed,
        checks,
    })
}

/// Runs the verification suites; returns whether every check passed.
pub fn cmd_verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<bool> {
    let report = verify_report(opts)?;
    for c in &report.checks {
        println!(
            "{} {:<22} trials {:>5}  max violation {:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.check,
            c.trials,
            c.max_violation
        );
    }
    ensure_out(cfg)?;
    write_json(&cfg.out_dir.join("verify_report.json"), &report)?;
    Ok(report.pass)
}
