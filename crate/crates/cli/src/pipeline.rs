//! Data loading, training and evaluation shared by the commands.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use noisecap_core::bounds::Method;
use noisecap_core::checkpoint::CheckpointMeta;
use noisecap_core::dataio::{input_frobenius, split, Dataset, MnistFiles, Split};
use noisecap_core::mlp::{evaluate, init_params, train_sgd, EpochStats, EvalMode, LossReport, NetworkArch, ParamSet, TrainConfig};
use noisecap_core::norms::{weight_quantifiers, ArchQuantifiers, PowerIterOptions};
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;

pub struct Data {
    pub split: Split,
    pub test: Dataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<Data> {
    let files = MnistFiles::in_dir(&cfg.mnist_dir);
    if !files.exist() {
        bail!(
            "MNIST IDX files not found in {} (expected train-images-idx3-ubyte and friends)",
            cfg.mnist_dir.display()
        );
    }
    let full = files.load_train().context("loading MNIST training file")?;
    let test = files.load_test().context("loading MNIST test file")?;
    let split = split(&full, cfg.train_size, cfg.val_size, cfg.split_seed)?;
    Ok(Data { split, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub arch: NetworkArch,
    pub train_config: TrainConfig,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochStats>,
    /// Keyed `<split>_<mode>`, mode being `deterministic` or `expected`.
    pub losses: BTreeMap<String, LossReport>,
}

impl TrainMetrics {
    pub fn loss(&self, key: &str) -> Option<&LossReport> {
        self.losses.get(key)
    }
}

pub struct TrainedModel {
    pub params: ParamSet,
    pub meta: CheckpointMeta,
    pub metrics: TrainMetrics,
}

/// Losses of `params` on every split, deterministic and MC-expected.
pub fn evaluate_all(
    params: &ParamSet,
    arch: &NetworkArch,
    cfg: &TrainConfig,
    data: &Data,
) -> Result<BTreeMap<String, LossReport>> {
    let expected = EvalMode::Expected {
        sigma: arch.sigma,
        n_samples: cfg.mc_samples_eval,
        seed: cfg.seed,
    };
    let mut out = BTreeMap::new();
    for (name, ds) in [("train", &data.split.train), ("val", &data.split.val), ("test", &data.test)] {
        out.insert(
            format!("{name}_deterministic"),
            evaluate(params, ds, arch.gamma, EvalMode::Deterministic)?,
        );
        out.insert(format!("{name}_expected"), evaluate(params, ds, arch.gamma, expected)?);
    }
    Ok(out)
}

/// Trains from a fresh initialization and evaluates the result.
/// `label` prefixes the per-epoch progress lines on stderr.
pub fn train_model(arch: &NetworkArch, cfg: &TrainConfig, data: &Data, label: &str) -> Result<TrainedModel> {
    let init = init_params(arch, cfg.seed);
    let outcome = train_sgd(init, arch, &data.split.train, cfg, |e| {
        eprintln!(
            "[{label}] epoch {:>3}  loss {:.4}  running err {:.4}",
            e.epoch, e.mean_loss, e.running_train_error
        );
    })?;
    let losses = evaluate_all(&outcome.params, arch, cfg, data)?;
    let mut meta = CheckpointMeta::new(arch.clone());
    meta.train_config = Some(cfg.clone());
    meta.epochs_run = outcome.history.len();
    meta.stopped_early = outcome.stopped_early;
    meta.final_losses = losses.clone();
    meta.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    let metrics = TrainMetrics {
        arch: arch.clone(),
        train_config: cfg.clone(),
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        history: outcome.history,
        losses,
    };
    Ok(TrainedModel {
        params: outcome.params,
        meta,
        metrics,
    })
}

/// Quantifiers of a trained network; `train` supplies the input norm the
/// spectral bound needs and may be absent.
pub fn model_quantifiers(arch: &NetworkArch, params: &ParamSet, train: Option<&Dataset>) -> Result<ArchQuantifiers> {
    let mut q = ArchQuantifiers::structural(arch);
    q.weights = Some(weight_quantifiers(params, PowerIterOptions::default())?);
    q.x_frob = train.map(input_frobenius);
    Ok(q)
}

/// Methods that can run on `quant`; the rest are reported as skipped.
pub fn runnable(method: Method, quant: &ArchQuantifiers) -> bool {
    !method.needs_weights() || quant.weights.is_some()
}
