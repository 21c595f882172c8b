//! Top-level pipeline configuration: corpus locations, shared assets,
//! per-criterion config files, and stage hyperparameters.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub assets: AssetsConfig,
    #[serde(default)]
    pub sections: SectionsConfig,
    #[serde(default)]
    pub embeddings: EmbeddingsConfig,
    #[serde(default)]
    pub variants: VariantsConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub weak: Vec<WeakConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub unlabeled: PathBuf,
    pub train_labels: PathBuf,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetsConfig {
    pub cues: PathBuf,
    pub sets: PathBuf,
    pub criteria: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionsConfig {
    pub min_doc_frequency: f64,
}

impl Default for SectionsConfig {
    fn default() -> Self {
        SectionsConfig {
            min_doc_frequency: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub learning_rate: f32,
    pub min_tokens: usize,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        EmbeddingsConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 3,
            min_count: 5,
            learning_rate: 0.025,
            min_tokens: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantsConfig {
    pub neighbors: usize,
}

impl Default for VariantsConfig {
    fn default() -> Self {
        VariantsConfig { neighbors: 200 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub threshold: f64,
    pub min_df: usize,
    pub forest_trees: usize,
    pub forest_depth: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            l2: 1e-4,
            learning_rate: 0.5,
            epochs: 60,
            batch_size: 32,
            folds: 5,
            threshold: 0.5,
            min_df: 2,
            forest_trees: 25,
            forest_depth: 8,
        }
    }
}

/// One weak-supervised criterion: how its silver standard is built and which
/// learner consumes it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakConfig {
    pub criterion: String,
    /// "stacked" or "forest".
    pub kind: String,
    /// Seed trigger rules, for rule-based silver.
    pub rules: Option<PathBuf>,
    /// Structured code file, for the code-channel silver.
    pub codes: Option<PathBuf>,
    pub code_prefix: Option<String>,
    pub code_window_months: Option<u32>,
    pub max_negatives: Option<usize>,
}

/// A parsed config plus the directory its relative paths resolve against and
/// a hash of its raw bytes for artifact lineage.
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub config_hash: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let raw = std::fs::read(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: PipelineConfig = toml::from_str(
        std::str::from_utf8(&raw).with_context(|| format!("{} is not utf-8", path.display()))?,
    )
    .with_context(|| format!("cannot parse config {}", path.display()))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        base_dir,
        config_hash: crate::io_util::short_hash(&raw),
    })
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    /// Collects every missing input path; an empty result validates.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let require_dir = |errors: &mut Vec<String>, p: &Path, what: &str| {
            let full = self.resolve(p);
            if !full.is_dir() {
                errors.push(format!("{what}: directory {} does not exist", full.display()));
            }
        };
        require_dir(&mut errors, &self.config.corpus.train, "corpus.train");
        require_dir(&mut errors, &self.config.corpus.test, "corpus.test");
        require_dir(&mut errors, &self.config.corpus.unlabeled, "corpus.unlabeled");
        let require_file = |errors: &mut Vec<String>, p: &Path, what: &str| {
            let full = self.resolve(p);
            if !full.is_file() {
                errors.push(format!("{what}: file {} does not exist", full.display()));
            }
        };
        require_file(&mut errors, &self.config.corpus.train_labels, "corpus.train_labels");
        if let Some(p) = &self.config.corpus.test_labels {
            require_file(&mut errors, p, "corpus.test_labels");
        }
        require_file(&mut errors, &self.config.assets.cues, "assets.cues");
        require_file(&mut errors, &self.config.assets.sets, "assets.sets");
        for (i, p) in self.config.assets.criteria.iter().enumerate() {
            require_file(&mut errors, p, &format!("assets.criteria[{i}]"));
        }
        for (i, w) in self.config.weak.iter().enumerate() {
            if let Some(p) = &w.rules {
                require_file(&mut errors, p, &format!("weak[{i}].rules"));
            }
            if let Some(p) = &w.codes {
                require_file(&mut errors, p, &format!("weak[{i}].codes"));
            }
            if w.kind != "stacked" && w.kind != "forest" {
                errors.push(format!(
                    "weak[{i}].kind: expected \"stacked\" or \"forest\", got {:?}",
                    w.kind
                ));
            }
        }
        errors
    }
}
