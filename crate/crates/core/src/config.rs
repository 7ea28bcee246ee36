//! Run configuration: one TOML file, overridable from the command line, and
//! hashed so every report can name the exact settings that produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PAPER_SPLIT;
use crate::error::{Error, Result};
use crate::proxy::{DEFAULT_BINS, DEFAULT_RUNS};
use crate::stack::{Condition, Representation, StackConfig, Target};

/// Input files a command may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Corpus,
    Lexicon,
    Embeddings,
    Indicators,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Biography JSONL produced by `extract`.
    pub corpus: Option<PathBuf>,
    /// Occupation lexicon TSV; the built-in lexicon when absent.
    pub lexicon: Option<PathBuf>,
    /// Word vectors in text format; required by `we` and `dnn`.
    pub embeddings: Option<PathBuf>,
    /// Indicator TSV; the built-in list when absent.
    pub indicators: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub representation: Representation,
    pub condition: Condition,
    pub target: Target,
    #[serde(flatten)]
    pub stack: StackConfig,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            representation: Representation::Bow,
            condition: Condition::With,
            target: Target::Occupation,
            stack: StackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditOptions {
    /// Minimum `|S_{g,y}|` for a swap pair to be listed.
    pub min_support: usize,
    pub top_k: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            min_support: crate::audit::DEFAULT_MIN_SUPPORT,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub min_per_cell: usize,
    pub per_cell_train: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            min_per_cell: 50,
            per_cell_train: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub horizon: usize,
    pub pi0: Vec<f64>,
    pub tpr_lo: f64,
    pub tpr_hi: f64,
    pub tpr_points: usize,
    /// Fixed regression coefficients; fitted from a gap table when absent.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            horizon: 10,
            pi0: vec![0.1, 0.2, 0.3, 0.4],
            tpr_lo: 0.5,
            tpr_hi: 1.0,
            tpr_points: 21,
            slope: None,
            intercept: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyOptions {
    pub k: usize,
    pub runs: usize,
    pub bins: usize,
    /// Words to histogram; the stable candidates when empty.
    pub words: Vec<String>,
}

impl Default for ProxyOptions {
    fn default() -> Self {
        Self {
            k: 5,
            runs: DEFAULT_RUNS,
            bins: DEFAULT_BINS,
            words: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub paths: Paths,
    pub model: ModelOptions,
    pub audit: AuditOptions,
    pub probe: ProbeOptions,
    pub simulate: SimulateOptions,
    pub proxy: ProxyOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            split_ratios: PAPER_SPLIT,
            paths: Paths {
                output: PathBuf::from("out"),
                ..Paths::default()
            },
            model: ModelOptions::default(),
            audit: AuditOptions::default(),
            probe: ProbeOptions::default(),
            simulate: SimulateOptions::default(),
            proxy: ProxyOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Ratios are non-negative and sum to 1; each listed input, if
    /// configured, exists.
    pub fn validate(&self, inputs: &[Input]) -> Result<()> {
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::RatioSum(self.split_ratios));
        }
        for &input in inputs {
            if let Some(path) = self.input(input) {
                if !path.exists() {
                    return Err(Error::Config(format!("{} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn input(&self, input: Input) -> Option<&Path> {
        let p = &self.paths;
        match input {
            Input::Corpus => p.corpus.as_deref(),
            Input::Lexicon => p.lexicon.as_deref(),
            Input::Embeddings => p.embeddings.as_deref(),
            Input::Indicators => p.indicators.as_deref(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[model]\nrepresentation = \"dnn\"\n[model.dnn]\nhidden = 8\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.representation, Representation::Dnn);
        assert_eq!(cfg.model.stack.dnn.hidden, 8);
        assert_eq!(cfg.model.stack.dnn.attention, 32);
        assert_eq!(cfg.split_ratios, PAPER_SPLIT);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let e = RunConfig::from_toml("[model]\nrepresentation = \"lstm\"\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::from_toml("colour = 3\n").is_err());
        let cfg = RunConfig {
            split_ratios: [0.5, 0.1, 0.1],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(&[]), Err(Error::RatioSum(_))));
        let mut cfg = RunConfig::default();
        cfg.paths.corpus = Some("/definitely/not/here.jsonl".into());
        assert_eq!(cfg.validate(&[Input::Corpus]).unwrap_err().exit_code(), 2);
        // A command that does not read the corpus does not care.
        assert!(cfg.validate(&[Input::Embeddings]).is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
