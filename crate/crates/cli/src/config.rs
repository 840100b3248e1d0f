//! JSON run configuration. Every section is optional and falls back to the
//! baseline experiment; unknown keys anywhere are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noisecap_core::bounds::Method;
use noisecap_core::genbound::DEFAULT_DELTA;
use noisecap_core::mlp::{NetworkArch, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mnist_dir: PathBuf,
    pub train_size: usize,
    pub val_size: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            train_size: 59_000,
            val_size: 1_000,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Scale at which `bounds` reports `ln N`.
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvacConfig {
    /// Overrides the training ramp loss read from the checkpoint.
    pub ramp_loss: Option<f64>,
    /// Adds a `constant` row whose `ln N` is this value for every `M`.
    pub constant_ln_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Numbers of hidden layers, at the baseline width.
    pub depths: Vec<usize>,
    /// Hidden widths, at the baseline depth.
    pub widths: Vec<usize>,
    /// `log10 σ` values for the noise sweep.
    pub log10_sigmas: Vec<f64>,
    /// Noise levels for the loss-versus-σ sweep; each point is trained.
    pub loss_sigmas: Vec<f64>,
    /// One trained network whose weights and losses serve every σ point.
    pub reuse_checkpoint: Option<PathBuf>,
    /// Train a fresh network for every depth and width point. Without it,
    /// only the weight-free methods are evaluated there.
    pub train_points: bool,
    /// Ramp loss assumed where no trained network is available.
    pub assumed_ramp_loss: f64,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depths: vec![2, 3, 4, 5],
            widths: vec![64, 128, 250, 500, 1000, 1500],
            log10_sigmas: std::iter::once(-1.0)
                .chain((1..=35).map(|k| -10.0 * k as f64))
                .collect(),
            loss_sigmas: (0..=10).map(|k| k as f64 * 0.05).collect(),
            reuse_checkpoint: None,
            train_points: false,
            assumed_ramp_loss: 0.01,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub arch: NetworkArch,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub bounds: BoundsConfig,
    pub nvac: NvacConfig,
    pub sweep: SweepConfig,
    /// Checkpoint read by `eval`, `bounds` and `nvac`; defaults to `<out>/model.ncap`.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// When set, replaces `train.seed`.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            arch: NetworkArch::baseline(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            bounds: BoundsConfig::default(),
            nvac: NvacConfig::default(),
            sweep: SweepConfig::default(),
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.data.train_size == 0 || self.data.val_size == 0 {
            bail!("data.train_size and data.val_size must be positive");
        }
        if !(self.bounds.epsilon > 0.0) {
            bail!("bounds.epsilon must be positive");
        }
        if !(self.bounds.delta > 0.0 && self.bounds.delta < 1.0) {
            bail!("bounds.delta must lie in (0, 1)");
        }
        if let Some(r) = self.nvac.ramp_loss {
            if !(0.0..1.0).contains(&r) {
                bail!("nvac.ramp_loss must lie in [0, 1)");
            }
        }
        if let Some(c) = self.nvac.constant_ln_n {
            if !(c >= 0.0 && c.is_finite()) {
                bail!("nvac.constant_ln_n must be finite and nonnegative");
            }
        }
        let s = &self.sweep;
        if s.workers == 0 {
            bail!("sweep.workers must be at least 1");
        }
        if s.depths.contains(&0) || s.widths.contains(&0) {
            bail!("sweep depths and widths must be positive");
        }
        if s.loss_sigmas.iter().any(|v| !(*v >= 0.0)) {
            bail!("sweep.loss_sigmas must be nonnegative");
        }
        if s.log10_sigmas.iter().any(|v| !v.is_finite()) {
            bail!("sweep.log10_sigmas must be finite");
        }
        if !(0.0..1.0).contains(&s.assumed_ramp_loss) {
            bail!("sweep.assumed_ramp_loss must lie in [0, 1)");
        }
        Ok(())
    }

    /// Applies command-line overrides and the top-level seed.
    pub fn apply_overrides(&mut self, out: Option<PathBuf>, seed: Option<u64>, mnist: Option<PathBuf>) {
        if let Some(o) = out {
            self.out_dir = o;
        }
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(m) = mnist {
            self.data.mnist_dir = m;
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ncap"))
    }
}
