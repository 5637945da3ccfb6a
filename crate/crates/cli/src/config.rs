//! Run configuration: one JSON document with a versioned header.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dgmark_core::attack::AttackKind;
use dgmark_core::calibrate::NullMethod;
use dgmark_core::decoder::DecodeMode;
use dgmark_core::detector::DetectorConfig;
use dgmark_core::eval::DEFAULT_FPR_LEVELS;
use dgmark_core::parity::PartitionMode;
use dgmark_core::strategy::{Selection, StrategyKind, StrategySpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeSection>,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateSection>,
    /// Watermark key file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<PathBuf>,
    /// Prompt JSONL (`{"id", "tokens"}` per line); one empty prompt when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    /// Token JSONL consumed by `detect` and `attack`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Sequences generated per prompt.
    #[serde(default = "one")]
    pub seeds: usize,
    /// Root seed; every stage draws from named substreams of it.
    #[serde(default)]
    pub seed: u64,
    /// Written by `calibrate`; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<serde_json::Value>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    FactorizedUniform {
        vocab_size: usize,
    },
    /// Explicit per-position distributions.
    Factorized {
        probs: Vec<Vec<f64>>,
    },
    ContextMix {
        corpus: PathBuf,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab_size: Option<usize>,
    },
    Bridge {
        command: Vec<String>,
        #[serde(default = "default_top_k")]
        top_k: usize,
    },
}

fn default_top_k() -> usize {
    dgmark_core::bridge::DEFAULT_TOP_K
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub mode: DecodeMode,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(default = "one")]
    pub beam: usize,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
}

fn default_strategy() -> StrategySpec {
    StrategySpec::new(StrategyKind::Confidence, Selection::Multinomial)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default)]
    pub mode: PartitionMode,
    /// Needed when no model section can supply the vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectorSection {
    #[serde(flatten)]
    pub config: DetectorConfig,
    /// Include per-window match ratios in each report.
    #[serde(default)]
    pub window_ratios: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub kind: AttackKind,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreField {
    #[default]
    Z,
    ZWin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Detection JSONL of watermarked sequences.
    pub positives: PathBuf,
    /// Detection JSONL of unwatermarked sequences.
    pub negatives: PathBuf,
    #[serde(default)]
    pub score: ScoreField,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Values computed elsewhere (perplexity and the like), copied into the report.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, serde_json::Value>,
}

fn default_thresholds() -> Vec<f64> {
    vec![dgmark_core::detector::DEFAULT_Z_THRESHOLD]
}

fn default_levels() -> Vec<f64> {
    DEFAULT_FPR_LEVELS.to_vec()
}

fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibratedStatistic {
    #[default]
    Z,
    ZWin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub n: usize,
    pub target_fpr: f64,
    #[serde(default)]
    pub statistic: CalibratedStatistic,
    #[serde(default = "default_method")]
    pub method: NullMethod,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_method() -> NullMethod {
    NullMethod::ExactBinomial
}

fn default_samples() -> usize {
    100_000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(config.resolve_paths(base))
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.key, &mut self.prompts, &mut self.input, &mut self.output].into_iter().flatten() {
            fix(p);
        }
        if let Some(ModelSpec::ContextMix { corpus, .. }) = &mut self.model {
            fix(corpus);
        }
        if let Some(eval) = &mut self.eval {
            fix(&mut eval.positives);
            fix(&mut eval.negatives);
        }
        self
    }

    pub fn empty() -> Self {
        serde_json::from_value(serde_json::json!({ "schema_version": SCHEMA_VERSION })).expect("minimal config")
    }

    /// Checks that every referenced input path exists.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let mut paths: Vec<&PathBuf> = [&self.key, &self.prompts, &self.input].into_iter().flatten().collect();
        if let Some(ModelSpec::ContextMix { corpus, .. }) = &self.model {
            paths.push(corpus);
        }
        if let Some(eval) = &self.eval {
            paths.extend([&eval.positives, &eval.negatives]);
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(missing) => Err(CliError::Config(format!("{} does not exist", missing.display()))),
            None => Ok(()),
        }
    }
}
