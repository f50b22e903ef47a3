//! Run configuration: a TOML (or JSON) file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgground_core::audit::{AuditOptions, DEFAULT_IOU_THRESHOLD, DEFAULT_MIN_POSITIVES, DEFAULT_R2_THRESHOLD};
use sgground_core::{BpParams, Method, RatkMode, SynthConfig, TrainOptions};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_max: usize,
    pub ratk_mode: RatkMode,
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_max: 100,
            ratk_mode: RatkMode::PerPositive,
            methods: vec![Method::Irsg, Method::Baseline],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub iou_threshold: f64,
    pub r2_threshold: f64,
    pub min_positives: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            r2_threshold: DEFAULT_R2_THRESHOLD,
            min_positives: DEFAULT_MIN_POSITIVES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub train: TrainOptions,
    pub bp: BpParams,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.replace('\n', " "))))
    }

    pub fn audit_options(&self) -> AuditOptions {
        AuditOptions {
            iou_threshold: self.audit.iou_threshold,
            r2_threshold: self.audit.r2_threshold,
            min_positives: self.audit.min_positives,
            bp: self.bp,
        }
    }

    /// Range checks on every numeric parameter.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1");
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad("split.train_fraction must lie in (0, 1)");
        }
        if self.train.k == 0 || self.train.neg_ratio == 0 {
            return bad("train.k and train.neg_ratio must be at least 1");
        }
        let g = &self.train.gmm;
        if g.max_iters == 0 || g.restarts == 0 || !(g.rel_tol > 0.0) {
            return bad("train.gmm needs max_iters >= 1, restarts >= 1 and rel_tol > 0");
        }
        if self.bp.max_iters == 0 || !(0.0..1.0).contains(&self.bp.damping) || !(self.bp.tol > 0.0) {
            return bad("bp needs max_iters >= 1, damping in [0, 1) and tol > 0");
        }
        if self.eval.k_max == 0 {
            return bad("eval.k_max must be at least 1");
        }
        if self.eval.methods.is_empty() {
            return bad("eval.methods must name at least one method");
        }
        if !(0.0..=1.0).contains(&self.audit.iou_threshold) || !(0.0..=1.0).contains(&self.audit.r2_threshold) {
            return bad("audit thresholds must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("this command is stochastic; pass --seed or set seed in the config".into()))
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("no {what} path given (flag or [paths] in the config)")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
