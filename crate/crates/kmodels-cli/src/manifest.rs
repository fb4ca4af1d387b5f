//! Run configuration: a single serializable document whose every field can
//! be overridden by a command-line flag. Flags win over the configuration
//! file, which wins over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use kmodels::ar::LossKind;
use kmodels::engine::{InitKind, InitMethod, KModelsConfig, ModelFamily};
use serde::{Deserialize, Serialize};

/// Environment variable that supplies the configuration path when
/// `--config` is absent. No other setting is read from the environment.
pub const CONFIG_ENV: &str = "KMODELS_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatChoice {
    /// One row per series: id, then observations; trailing blanks allowed.
    Wide,
    /// One row per observation: id, t, value; optional header row.
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    /// Least squares.
    L2,
    /// Least absolute deviations (autoregressive families only).
    L1,
}

impl From<LossChoice> for LossKind {
    fn from(c: LossChoice) -> Self {
        match c {
            LossChoice::L2 => LossKind::L2,
            LossChoice::L1 => LossKind::L1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    /// Seed each cluster with one randomly chosen series.
    Prototype,
    /// Draw a random full partition and fit each cell.
    Partition,
}

impl From<InitChoice> for InitKind {
    fn from(c: InitChoice) -> Self {
        match c {
            InitChoice::Prototype => InitKind::Prototype,
            InitChoice::Partition => InitKind::RandomPartition,
        }
    }
}

/// Everything a clustering run depends on. Serialized verbatim into the
/// result document so a run can be reproduced or re-diagnosed later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub input: Option<PathBuf>,
    pub format: FormatChoice,
    pub center: bool,
    pub log: bool,
    pub rolling_mean: Option<usize>,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub k: Option<usize>,
    pub init: InitChoice,
    pub loss: LossChoice,
    pub restarts: usize,
    pub seed: u64,
    pub lags: usize,
    pub labels: Option<String>,
    pub output: Option<PathBuf>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            input: None,
            format: FormatChoice::Wide,
            center: false,
            log: false,
            rolling_mean: None,
            d: 0,
            p: 1,
            q: 0,
            k: None,
            init: InitChoice::Prototype,
            loss: LossChoice::L2,
            restarts: 10,
            seed: 0,
            lags: 20,
            labels: None,
            output: None,
        }
    }
}

impl RunManifest {
    /// Loads the manifest from `--config`, else from `$KMODELS_CONFIG`,
    /// else starts from defaults.
    pub fn load(config_flag: Option<&Path>) -> Result<Self> {
        let path = config_flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid config {}", p.display()))
            }
            None => Ok(RunManifest::default()),
        }
    }

    /// Resolves the model family implied by p, q, d, and the loss.
    pub fn family(&self) -> Result<ModelFamily> {
        let family = match (self.q, self.loss) {
            (0, LossChoice::L2) => ModelFamily::ar_l2(self.p),
            (0, LossChoice::L1) => ModelFamily::ar_l1(self.p),
            (_, LossChoice::L2) => ModelFamily::arma(self.p, self.q),
            (_, LossChoice::L1) => {
                bail!("the l1 loss is only available for pure autoregressive models (q = 0)")
            }
        };
        Ok(family.with_d(self.d))
    }

    /// Builds the clustering configuration. Fails when `k` is missing.
    pub fn to_config(&self) -> Result<KModelsConfig> {
        let k = self
            .k
            .context("k is required; pass --k or set it in the config file")?;
        let mut config = KModelsConfig::new(k, self.family()?);
        config.init = InitMethod {
            kind: self.init.into(),
            seed: self.seed,
        };
        config.restarts = self.restarts;
        Ok(config)
    }
}
