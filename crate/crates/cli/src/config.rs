use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mgan::game::EvalConfig;
use mgan::oracle::OracleConfig;
use mgan::{MixtureConfig, RingSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Root directory for run outputs.
    pub dir: PathBuf,
    /// Seeds to train; empty means `[mixture].seed` alone.
    pub seeds: Vec<u64>,
    /// Concurrent runs in sweeps and multi-seed training; 0 means one per CPU.
    pub workers: usize,
    /// Generated points drawn into each scatter plot.
    pub plot_samples: usize,
    /// True samples drawn into each scatter plot.
    pub plot_true_samples: usize,
    pub per_generator_hues: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
            seeds: Vec::new(),
            workers: 0,
            plot_samples: 512,
            plot_true_samples: 512,
            per_generator_hues: false,
        }
    }
}

/// Everything one experiment needs, as read from a TOML file with the
/// sections `[mixture]`, `[data]`, `[metrics]`, `[oracle]` and `[output]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mixture: MixtureConfig,
    pub data: RingSpec,
    pub metrics: EvalConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.mixture.validate()?;
        self.data.validate()?;
        self.metrics.grid.validate()?;
        self.oracle.lattice.validate()?;
        let s = &self.metrics.sinkhorn;
        if !(s.reg > 0.0 && s.tol > 0.0 && s.max_iters > 0) {
            bail!("sinkhorn settings must be positive: {s:?}");
        }
        if self.metrics.samples == 0 {
            bail!("metrics.samples must be at least 1");
        }
        if self.metrics.kl_smoothing.is_nan() || self.metrics.kl_smoothing <= 0.0 {
            bail!("metrics.kl_smoothing must be positive");
        }
        if self.oracle.kde_bandwidth.is_nan() || self.oracle.kde_bandwidth <= 0.0 {
            bail!("oracle.kde_bandwidth must be positive");
        }
        if self.output.plot_samples == 0 {
            bail!("output.plot_samples must be at least 1");
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.output.seeds.is_empty() {
            vec![self.mixture.seed]
        } else {
            self.output.seeds.clone()
        }
    }
}
