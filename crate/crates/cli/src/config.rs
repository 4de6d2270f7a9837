//! Run configuration: a JSON document whose fields may be overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fscil_core::classifier::{HeadKind, TrainingConfig};
use fscil_core::metrics::ReportFormat;
use fscil_core::session::{DEFAULT_BASE_EPOCHS, DEFAULT_INCREMENTAL_EPOCHS};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "FSCIL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub archive: Option<PathBuf>,
    /// Expected size of the base label set; checked against the archive.
    pub base_classes: Option<usize>,
    /// Classes per incremental session; the archive's grouping when unset.
    pub n_way: Option<usize>,
    pub k_shot: usize,
    /// Keep only the first `sessions` sessions.
    pub sessions: Option<usize>,
    pub base_epochs: usize,
    pub incremental_epochs: usize,
    pub classifier: HeadKind,
    pub training: TrainingConfig,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            archive: None,
            base_classes: None,
            n_way: None,
            k_shot: 5,
            sessions: None,
            base_epochs: DEFAULT_BASE_EPOCHS,
            incremental_epochs: DEFAULT_INCREMENTAL_EPOCHS,
            classifier: HeadKind::Stochastic,
            training: TrainingConfig::default(),
            seed: None,
            output_dir: PathBuf::from("fscil-out"),
            formats: vec![ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json],
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.archive.is_none() {
            bail!(ConfigError("no archive given (config `archive` or --archive)".into()));
        }
        if self.k_shot == 0 {
            bail!(ConfigError("k_shot must be >= 1".into()));
        }
        if self.n_way == Some(0) {
            bail!(ConfigError("n_way must be >= 1".into()));
        }
        if self.sessions == Some(0) {
            bail!(ConfigError("sessions must be >= 1".into()));
        }
        if self.formats.is_empty() {
            bail!(ConfigError("at least one report format is required".into()));
        }
        self.training
            .validate()
            .map_err(|e| ConfigError(format!("training: {e}")))?;
        Ok(())
    }
}

/// Flag value, then the config file, then `FSCIL_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| ConfigError(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"k_shot": 5, "shots": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"training": {"lamda": 0.5}}"#).is_err());
    }

    #[test]
    fn partial_documents_take_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"archive": "a.fcae", "training": {"lambda": 0.6}}"#).unwrap();
        assert_eq!(c.training.lambda, 0.6);
        assert_eq!(c.training.logit_scale, 1.0);
        assert_eq!(c.k_shot, 5);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_err());
        let mut c = RunConfig {
            archive: Some("a".into()),
            ..RunConfig::default()
        };
        c.training.lambda = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn explicit_seeds_win() {
        assert_eq!(resolve_seed(Some(3), Some(4)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(4)).unwrap(), 4);
    }
}
