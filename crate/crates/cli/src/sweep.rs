//! Figure-data sweeps over depth, width and noise scale.
//!
//! Points run on a small pool of scoped threads; results are gathered by
//! index, so the CSV bytes do not depend on scheduling.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Result};
use noisecap_core::bounds::{Method, NoiseScale};
use noisecap_core::checkpoint::load_checkpoint;
use noisecap_core::mlp::{LossReport, NetworkArch};
use noisecap_core::norms::ArchQuantifiers;

use crate::config::RunConfig;
use crate::nvac::{num, NvacRow, NvacSetting};
use crate::pipeline::{model_quantifiers, train_model, Data};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    Depth,
    Width,
    Sigma,
    LossSigma,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Depth, Axis::Width, Axis::Sigma, Axis::LossSigma];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Depth => "depth",
            Axis::Width => "width",
            Axis::Sigma => "sigma",
            Axis::LossSigma => "loss_sigma",
        }
    }

    pub fn file_name(self) -> String {
        format!("sweep_{}.csv", self.name())
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            Axis::Depth => &["depth", "method", "log10_nvac", "ramp_loss", "epsilon", "status"],
            Axis::Width => &["width", "method", "log10_nvac", "ramp_loss", "epsilon", "status"],
            Axis::Sigma => &["log10_sigma", "method", "log10_nvac", "ramp_loss", "epsilon", "status"],
            Axis::LossSigma => &[
                "sigma",
                "train_ramp_loss",
                "train_zero_one_loss",
                "test_ramp_loss",
                "test_zero_one_loss",
                "epochs_run",
                "status",
            ],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| anyhow!("unknown sweep axis '{s}' (expected depth, width, sigma or loss_sigma)"))
    }
}

/// Applies `f` to every item on up to `workers` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn csv_bytes(header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("flushing CSV: {e}"))
}

fn nvac_record(axis_value: String, r: &NvacRow) -> Vec<String> {
    vec![
        axis_value,
        r.method.clone(),
        r.log10_nvac.map(num).unwrap_or_default(),
        num(r.ramp_loss),
        num(r.epsilon),
        r.status.clone(),
    ]
}

fn error_rows(methods: &[Method], arch: &NetworkArch, m: usize, ramp: f64, msg: &str) -> Vec<NvacRow> {
    let quant = ArchQuantifiers::structural(arch);
    let setting = NvacSetting {
        arch,
        quant: &quant,
        noise: NoiseScale::from_sigma(arch.sigma).expect("validated sigma"),
        m,
        ramp_loss: ramp,
    };
    methods
        .iter()
        .map(|&method| setting.status_row(method.as_str(), format!("error: {msg}")))
        .collect()
}

/// NVAC rows for one architecture, trained first when the config asks for it.
fn arch_point(cfg: &RunConfig, arch: &NetworkArch, data: Option<&Data>, label: &str) -> Vec<NvacRow> {
    let s = &cfg.sweep;
    let noise = NoiseScale::from_sigma(arch.sigma).expect("validated sigma");
    if !s.train_points {
        let quant = ArchQuantifiers::structural(arch);
        let setting = NvacSetting {
            arch,
            quant: &quant,
            noise,
            m: cfg.data.train_size,
            ramp_loss: s.assumed_ramp_loss,
        };
        return setting.rows(&cfg.methods, None);
    }
    let trained = data
        .ok_or_else(|| anyhow!("training data unavailable"))
        .and_then(|d| {
            let model = train_model(arch, &cfg.train, d, label)?;
            let quant = model_quantifiers(arch, &model.params, Some(&d.split.train))?;
            let ramp = model
                .metrics
                .loss("train_expected")
                .map(|l| l.ramp_loss)
                .ok_or_else(|| anyhow!("missing training loss"))?;
            Ok((quant, ramp, d.split.train.len()))
        });
    match trained {
        Ok((quant, ramp, m)) => NvacSetting {
            arch,
            quant: &quant,
            noise,
            m,
            ramp_loss: ramp,
        }
        .rows(&cfg.methods, None),
        Err(e) => error_rows(&cfg.methods, arch, cfg.data.train_size, s.assumed_ramp_loss, &format!("{e:#}")),
    }
}

fn uniform_arch(base: &NetworkArch, hidden: usize, width: usize) -> Result<NetworkArch> {
    Ok(NetworkArch::uniform(
        base.input_dim,
        hidden,
        width,
        base.num_classes(),
        base.sigma,
        base.gamma,
    )?)
}

fn arch_axis(cfg: &RunConfig, axis: Axis, data: Option<&Data>) -> Result<Vec<u8>> {
    let base = &cfg.arch;
    let hidden = base.widths.len() - 1;
    let width = base.widths.first().copied().filter(|_| hidden > 0).unwrap_or(base.input_dim);
    let values = match axis {
        Axis::Depth => &cfg.sweep.depths,
        Axis::Width => &cfg.sweep.widths,
        _ => unreachable!("not an architecture axis"),
    };
    let archs = values
        .iter()
        .map(|&v| match axis {
            Axis::Depth => uniform_arch(base, v, width),
            _ => uniform_arch(base, hidden, v),
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(usize, NetworkArch)> = values.iter().copied().zip(archs).collect();
    let rows = parallel_map(&points, cfg.sweep.workers, |(v, arch)| {
        arch_point(cfg, arch, data, &format!("{axis}={v}"))
    });
    csv_bytes(
        axis.header(),
        points
            .iter()
            .zip(&rows)
            .flat_map(|((v, _), rs)| rs.iter().map(move |r| nvac_record(v.to_string(), r))),
    )
}

/// Weights, training ramp loss and sample size behind the σ sweep.
struct SigmaBase {
    quant: ArchQuantifiers,
    ramp: f64,
    m: usize,
}

fn sigma_base(cfg: &RunConfig, data: Option<&Data>) -> Result<SigmaBase> {
    let Some(path) = &cfg.sweep.reuse_checkpoint else {
        return Ok(SigmaBase {
            quant: ArchQuantifiers::structural(&cfg.arch),
            ramp: cfg.sweep.assumed_ramp_loss,
            m: cfg.data.train_size,
        });
    };
    let (params, meta) = load_checkpoint(path)?;
    if meta.arch.widths != cfg.arch.widths || meta.arch.input_dim != cfg.arch.input_dim {
        bail!(
            "checkpoint {} has architecture {:?}, the sweep expects {:?}",
            path.display(),
            meta.arch.dims(),
            cfg.arch.dims()
        );
    }
    let quant = model_quantifiers(&meta.arch, &params, data.map(|d| &d.split.train))?;
    let train: Option<&LossReport> = meta.final_losses.get("train_expected");
    Ok(SigmaBase {
        quant,
        ramp: train.map_or(cfg.sweep.assumed_ramp_loss, |l| l.ramp_loss),
        m: train.map_or(cfg.data.train_size, |l| l.sample_count),
    })
}

fn sigma_axis(cfg: &RunConfig, data: Option<&Data>) -> Result<Vec<u8>> {
    let base = sigma_base(cfg, data)?;
    let points = &cfg.sweep.log10_sigmas;
    let rows = parallel_map(points, cfg.sweep.workers, |&x| {
        NvacSetting {
            arch: &cfg.arch,
            quant: &base.quant,
            noise: NoiseScale::from_log10(x).expect("validated sigma"),
            m: base.m,
            ramp_loss: base.ramp,
        }
        .method_row(Method::Ours)
    });
    csv_bytes(
        Axis::Sigma.header(),
        points.iter().zip(&rows).map(|(x, r)| nvac_record(num(*x), r)),
    )
}

fn loss_sigma_axis(cfg: &RunConfig, data: Option<&Data>) -> Result<Vec<u8>> {
    let points = &cfg.sweep.loss_sigmas;
    let records = parallel_map(points, cfg.sweep.workers, |&sigma| {
        let result = data.ok_or_else(|| anyhow!("training data unavailable")).and_then(|d| {
            let mut arch = cfg.arch.clone();
            arch.sigma = sigma;
            let model = train_model(&arch, &cfg.train, d, &format!("sigma={sigma}"))?;
            let get = |k: &str| model.metrics.loss(k).cloned().ok_or_else(|| anyhow!("missing {k}"));
            Ok((get("train_expected")?, get("test_expected")?, model.metrics.epochs_run))
        });
        let mut rec = vec![num(sigma)];
        match result {
            Ok((train, test, epochs)) => rec.extend([
                num(train.ramp_loss),
                num(train.zero_one_loss),
                num(test.ramp_loss),
                num(test.zero_one_loss),
                epochs.to_string(),
                "ok".into(),
            ]),
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(format!("error: {e:#}"));
            }
        }
        rec
    });
    csv_bytes(Axis::LossSigma.header(), records)
}

/// Whether any requested axis needs the MNIST files.
pub fn needs_data(cfg: &RunConfig, axes: &[Axis]) -> bool {
    axes.iter().any(|a| match a {
        Axis::Depth => cfg.sweep.train_points && !cfg.sweep.depths.is_empty(),
        Axis::Width => cfg.sweep.train_points && !cfg.sweep.widths.is_empty(),
        Axis::Sigma => cfg.sweep.reuse_checkpoint.is_some() && !cfg.sweep.log10_sigmas.is_empty(),
        Axis::LossSigma => !cfg.sweep.loss_sigmas.is_empty(),
    })
}

/// CSV contents for each requested axis, in the order given.
pub fn run_sweep(cfg: &RunConfig, axes: &[Axis], data: Option<&Data>) -> Result<Vec<(Axis, Vec<u8>)>> {
    axes.iter()
        .map(|&axis| {
            let bytes = match axis {
                Axis::Depth | Axis::Width => arch_axis(cfg, axis, data)?,
                Axis::Sigma => sigma_axis(cfg, data)?,
                Axis::LossSigma => loss_sigma_axis(cfg, data)?,
            };
            Ok((axis, bytes))
        })
        .collect()
}
