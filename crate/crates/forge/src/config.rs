//! Pipeline configuration (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! seed = 7
//! stages = ["ingest", "filter", "dedup", "cluster", "label", "judge", "grade", "vision"]
//!
//! [io]
//! input = ["corpus.jsonl"]
//! output = "out"
//!
//! [filter]
//! max_perplexity = 1000.0
//! lm_corpus = "reference.txt"
//!
//! [dedup]
//! baseline_index = "baseline-index"
//! eval_index = "eval-index"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use forge_core::dedup::DedupParams;
use forge_core::difficulty::DifficultyWeights;
use forge_core::filters::FilterConfig;
use forge_core::rewards::GrpoConfig;
use forge_core::scorer::{Scorer, DEFAULT_MIN_ANALYSIS_TOKENS};
use forge_core::vision::{LowPassChannels, LowPassConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::scorer_client::{Backend, RetryPolicy};

pub const CONFIG_VERSION: u32 = 1;

pub const STAGES: [&str; 8] = ["ingest", "filter", "dedup", "cluster", "label", "judge", "grade", "vision"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub filter: FilterStage,
    #[serde(default)]
    pub dedup: DedupStage,
    #[serde(default)]
    pub cluster: ClusterStage,
    #[serde(default)]
    pub label: LabelStage,
    #[serde(default)]
    pub judge: JudgeStage,
    #[serde(default)]
    pub grade: GradeStage,
    #[serde(default)]
    pub vision: VisionStage,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub eval: EvalStage,
    #[serde(default)]
    pub scorer: ScorerConfig,
}

fn default_shard_size() -> usize {
    1000
}

fn default_stages() -> Vec<String> {
    STAGES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Raw record files, or shard directories when `ingest` is not a stage.
    #[serde(default)]
    pub input: Vec<PathBuf>,
    #[serde(default)]
    pub output: PathBuf,
    /// Base directory for relative image locators; defaults to the config dir.
    #[serde(default)]
    pub media_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterStage {
    #[serde(flatten)]
    pub rules: FilterConfig,
    pub lm_order: usize,
    pub lm_alpha: f64,
    /// Lower bound on the LM vocabulary, standing in for an open vocabulary.
    pub lm_vocab_size: usize,
    /// Reference text for the perplexity model, one sequence per line. When
    /// absent the model trains on the stage input.
    pub lm_corpus: Option<PathBuf>,
}

impl Default for FilterStage {
    fn default() -> Self {
        FilterStage {
            rules: FilterConfig::default(),
            lm_order: 3,
            lm_alpha: 0.01,
            lm_vocab_size: 50_000,
            lm_corpus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupStage {
    #[serde(flatten)]
    pub params: DedupParams,
    pub baseline_index: Option<PathBuf>,
    pub eval_index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterStage {
    pub k: usize,
    pub target_dim: usize,
    pub cap_factor: f64,
    pub max_iters: usize,
    /// Width of each of the text and vision embeddings before fusion.
    pub embedding_dim: usize,
}

impl Default for ClusterStage {
    fn default() -> Self {
        ClusterStage {
            k: 256,
            target_dim: 16,
            cap_factor: 2.0,
            max_iters: 50,
            embedding_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelStage {
    /// System prompt file; the bundled prompt is used when absent.
    pub prompt: Option<PathBuf>,
    pub min_analysis_tokens: usize,
}

impl Default for LabelStage {
    fn default() -> Self {
        LabelStage {
            prompt: None,
            min_analysis_tokens: DEFAULT_MIN_ANALYSIS_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeStage {
    pub threshold: f64,
}

impl Default for JudgeStage {
    fn default() -> Self {
        JudgeStage { threshold: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GradeStage {
    #[serde(flatten)]
    pub weights: DifficultyWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionStage {
    pub lowpass_fraction: f64,
    pub lowpass_channels: LowPassChannels,
}

impl Default for VisionStage {
    fn default() -> Self {
        VisionStage {
            lowpass_fraction: 0.03,
            lowpass_channels: LowPassChannels::All,
        }
    }
}

impl VisionStage {
    pub fn lowpass(&self) -> LowPassConfig {
        LowPassConfig {
            removal_fraction: self.lowpass_fraction,
            channels: self.lowpass_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalStage {
    pub drift_threshold: f64,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage { drift_threshold: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    /// Backend used when `FORGE_SCORER` is unset.
    pub backend: String,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            backend: "stub".into(),
            max_attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl PipelineConfig {
    /// A config running every stage with defaults.
    pub fn new(input: Vec<PathBuf>, output: PathBuf) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            workers: 0,
            shard_size: default_shard_size(),
            stages: default_stages(),
            io: IoConfig {
                input,
                output,
                media_root: None,
            },
            filter: FilterStage::default(),
            dedup: DedupStage::default(),
            cluster: ClusterStage::default(),
            label: LabelStage::default(),
            judge: JudgeStage::default(),
            grade: GradeStage::default(),
            vision: VisionStage::default(),
            grpo: GrpoConfig::default(),
            eval: EvalStage::default(),
            scorer: ScorerConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))
    }

    /// Loads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.io.input.iter_mut().for_each(fix);
        fix(&mut self.io.output);
        if self.io.media_root.is_none() {
            self.io.media_root = Some(base.to_path_buf());
        }
        for p in [
            self.io.media_root.as_mut(),
            self.filter.lm_corpus.as_mut(),
            self.dedup.baseline_index.as_mut(),
            self.dedup.eval_index.as_mut(),
            self.label.prompt.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn media_root(&self) -> PathBuf {
        self.io.media_root.clone().unwrap_or_default()
    }

    /// [`validate`](Self::validate) plus the `[io]` checks a full run needs.
    pub fn validate_run(&self) -> Result<()> {
        self.validate()?;
        let bad = |m: String| Err(ForgeError::Config(m));
        if self.io.input.is_empty() {
            return bad("io.input is empty".into());
        }
        if self.io.output.as_os_str().is_empty() {
            return bad("io.output is empty".into());
        }
        for p in &self.io.input {
            if !p.exists() {
                return bad(format!("input {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.scorer.max_attempts,
            base_delay: Duration::from_millis(self.scorer.base_delay_ms),
            ..RetryPolicy::default()
        }
    }

    /// Scorer for this config: `FORGE_SCORER` if set, else `scorer.backend`.
    pub fn scorer(&self) -> Result<Box<dyn Scorer + Send>> {
        let backend = Backend::from_env(&self.scorer.backend)?;
        Ok(backend.build(self.seed, self.cluster.embedding_dim, self.retry_policy()))
    }

    /// Checks everything except `[io]`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForgeError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                return bad(format!("unknown stage {s:?}"));
            }
            if !seen.insert(s.as_str()) {
                return bad(format!("stage {s:?} listed twice"));
            }
        }
        if let Some(pos) = self.stages.iter().position(|s| s == "ingest") {
            if pos != 0 {
                return bad("ingest must be the first stage".into());
            }
        }
        if self.shard_size == 0 {
            return bad("shard_size must be positive".into());
        }
        for (name, p) in [
            ("filter.lm_corpus", &self.filter.lm_corpus),
            ("dedup.baseline_index", &self.dedup.baseline_index),
            ("dedup.eval_index", &self.dedup.eval_index),
            ("label.prompt", &self.label.prompt),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{name} {} does not exist", p.display()));
                }
            }
        }
        self.filter.rules.validate().map_err(|e| ForgeError::Config(e.to_string()))?;
        if self.filter.lm_order == 0 || !(self.filter.lm_alpha > 0.0) {
            return bad("filter.lm_order and filter.lm_alpha must be positive".into());
        }
        self.dedup.params.validate().map_err(|e| ForgeError::Config(e.to_string()))?;
        let c = &self.cluster;
        if c.k == 0 || c.target_dim == 0 || c.embedding_dim == 0 || c.max_iters == 0 {
            return bad("cluster.k, target_dim, embedding_dim and max_iters must be positive".into());
        }
        if c.target_dim > 2 * c.embedding_dim {
            return bad(format!("cluster.target_dim {} exceeds the fused width {}", c.target_dim, 2 * c.embedding_dim));
        }
        if !(c.cap_factor > 0.0) {
            return bad("cluster.cap_factor must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.judge.threshold) {
            return bad("judge.threshold must lie in [0, 1]".into());
        }
        self.vision.lowpass().validate().map_err(|e| ForgeError::Config(e.to_string()))?;
        self.grpo.validate().map_err(|e| ForgeError::Config(e.to_string()))?;
        if self.scorer.max_attempts == 0 {
            return bad("scorer.max_attempts must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml("version = 1\n[io]\ninput = [\"a\"]\noutput = \"o\"\n").unwrap();
        assert_eq!(cfg.stages.len(), 8);
        assert_eq!(cfg.filter.rules.max_aspect_ratio, 4.0);
        assert_eq!(cfg.dedup.params.num_hashes, 128);
        assert_eq!(cfg.grpo.kl_beta, 0.01);
        assert_eq!(cfg.judge.threshold, 0.3);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::new(vec!["in.jsonl".into()], "out".into());
        cfg.dedup.baseline_index = Some("b".into());
        cfg.filter.lm_corpus = Some("ref.txt".into());
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(&input, "").unwrap();
        let mut cfg = PipelineConfig::new(vec![input], dir.path().join("out"));
        assert!(cfg.validate_run().is_ok());
        cfg.io.input.push(dir.path().join("missing.jsonl"));
        assert!(cfg.validate().is_ok());
        assert!(cfg.validate_run().is_err());
        cfg.stages = vec!["filter".into(), "filter".into()];
        assert!(cfg.validate().is_err());
        cfg.stages = vec!["filter".into(), "ingest".into()];
        assert!(cfg.validate().is_err());
        cfg.stages = vec!["bogus".into()];
        assert!(cfg.validate().is_err());
        cfg.stages = default_stages();
        cfg.vision.lowpass_fraction = 0.5;
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::from_toml("version = 1\nsurprise = 3\n").is_err());
        assert!(PipelineConfig::from_toml("version = 1\n[filter]\nmax_perplexity = 50.0\n").is_ok());
    }
}
