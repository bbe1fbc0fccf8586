//! Run configuration: JSON file values, overridden by explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use medforum::classifier::{ArchitectureKind, TrainConfig};
use medforum::pipeline::{DEFAULT_EMBEDDING_DIM, DEFAULT_EMBEDDING_SEED};
use medforum::retrieval::RankMode;
use medforum::suggestion::{LabelSource, SuggestionConfig};

use crate::CliError;

/// Input and output files. Unset inputs fall back to the bundled data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub architecture: ArchitectureKind,
    pub train: TrainConfig,
    pub suggestion: SuggestionConfig,
    pub top_n: usize,
    pub mode: RankMode,
    pub label_source: LabelSource,
    /// Seeds training, fold assignment and gradient checks; copied into `train.seed`.
    pub seed: u64,
    /// Copied into `train.threads`.
    pub threads: usize,
    /// Size and seed of the random vectors used when no embeddings file is given.
    pub embedding_dim: usize,
    pub embedding_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            paths: Paths::default(),
            architecture: ArchitectureKind::CnnLstmCnn,
            seed: train.seed,
            threads: train.threads,
            train,
            suggestion: SuggestionConfig::default(),
            top_n: 5,
            mode: RankMode::Full,
            label_source: LabelSource::GoldThenPredicted,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            embedding_seed: DEFAULT_EMBEDDING_SEED,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Push the top-level seed and thread count into the nested configs.
    pub fn finish(mut self) -> Result<Self, CliError> {
        if self.threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(CliError::Usage("--top must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(CliError::Usage("embedding_dim must be at least 1".into()));
        }
        self.train.seed = self.seed;
        self.train.threads = self.threads;
        self.train.validate()?;
        self.suggestion.validate()?;
        Ok(self)
    }

    /// Every configured input must exist before any work starts.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        let p = &self.paths;
        let inputs = [
            ("corpus", &p.corpus),
            ("embeddings", &p.embeddings),
            ("lexicon", &p.lexicon),
            ("stopwords", &p.stopwords),
            ("judgments", &p.judgments),
        ];
        for (what, path) in inputs {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(CliError::Usage(format!(
                        "{what} file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"seed": 9, "suggestion": {"tau": 0.5}, "paths": {"model": "m.bin"}}"#).unwrap();
        let c = c.finish().unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.suggestion.tau, 0.5);
        assert_eq!(c.suggestion.max_per_disease, 10);
        assert_eq!(c.top_n, 5);
        assert_eq!(c.paths.model, Some(PathBuf::from("m.bin")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 9}"#).is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let c = RunConfig {
            threads: 0,
            ..RunConfig::default()
        };
        assert!(matches!(c.finish(), Err(CliError::Usage(_))));
    }
}
