//! Pipeline configuration file (TOML).
//!
//! ```toml
//! seed = 42
//! workers = 0            # 0 = one per core
//!
//! [paths]
//! interactions = "data/interactions.jsonl"
//! catalog = "data/catalog.jsonl"
//! work_dir = "work"
//!
//! [generator]
//! mode = "builtin"       # or "external:<command>"
//! order = 3
//! alpha = 0.01
//! history_bias = 0.5
//! gamma = 0.7
//! max_query_tokens = 12
//! num_queries = 10
//! timeout_secs = 60
//!
//! [retrieval]
//! ks = [5, 10, 20, 40]
//! tuning_k = 20
//! exclude_history = false
//!
//! [grid]
//! k1 = { start = 0.0, stop = 3.0, step = 0.25 }
//! b = { start = 0.1, stop = 0.9, step = 0.1 }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorMode};
use crate::search::ParamGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub interactions: PathBuf,
    pub catalog: PathBuf,
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub mode: String,
    pub order: usize,
    pub alpha: f64,
    pub history_bias: f64,
    pub gamma: f64,
    pub max_query_tokens: usize,
    pub num_queries: usize,
    pub timeout_secs: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            mode: g.mode.to_string(),
            order: 3,
            alpha: 0.01,
            history_bias: g.history_bias,
            gamma: g.gamma,
            max_query_tokens: g.max_query_tokens,
            num_queries: g.num_queries,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub ks: Vec<usize>,
    pub tuning_k: usize,
    pub exclude_history: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            ks: crate::evaluate::DEFAULT_KS.to_vec(),
            tuning_k: 20,
            exclude_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub grid: ParamGrid,
}

fn default_seed() -> u64 {
    42
}

impl PipelineConfig {
    /// Config with default settings for the given inputs.
    pub fn new(interactions: impl Into<PathBuf>, catalog: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            paths: Paths {
                interactions: interactions.into(),
                catalog: catalog.into(),
                work_dir: work_dir.into(),
            },
            seed: default_seed(),
            workers: 0,
            generator: GeneratorSection::default(),
            retrieval: RetrievalSection::default(),
            grid: ParamGrid::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [
            &mut cfg.paths.interactions,
            &mut cfg.paths.catalog,
            &mut cfg.paths.work_dir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn generator_mode(&self) -> Result<GeneratorMode> {
        self.generator.mode.parse()
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let cfg = GeneratorConfig {
            mode: self.generator_mode()?,
            history_bias: self.generator.history_bias,
            max_query_tokens: self.generator.max_query_tokens,
            num_queries: self.generator.num_queries,
            gamma: self.generator.gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn external_timeout(&self) -> Duration {
        Duration::from_secs(self.generator.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config()?;
        let g = &self.generator;
        if g.order < 2 {
            return Err(Error::Config(format!("generator.order must be >= 2, got {}", g.order)));
        }
        if !(g.alpha.is_finite() && g.alpha > 0.0) {
            return Err(Error::Config(format!("generator.alpha must be > 0, got {}", g.alpha)));
        }
        if g.timeout_secs == 0 {
            return Err(Error::Config("generator.timeout_secs must be >= 1".into()));
        }
        let r = &self.retrieval;
        if r.ks.is_empty() || r.ks.contains(&0) {
            return Err(Error::Config("retrieval.ks must be non-empty with every K >= 1".into()));
        }
        if r.tuning_k == 0 {
            return Err(Error::Config("retrieval.tuning_k must be >= 1".into()));
        }
        self.grid.points()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [paths]
        interactions = "in.jsonl"
        catalog = "/abs/cat.jsonl"
        work_dir = "work"
    "#;

    #[test]
    fn defaults_and_path_resolution() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.paths.interactions, PathBuf::from("/base/in.jsonl"));
        assert_eq!(cfg.paths.catalog, PathBuf::from("/abs/cat.jsonl"));
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.retrieval.ks, vec![5, 10, 20, 40]);
        assert_eq!(cfg.generator.num_queries, 10);
        assert_eq!(cfg.generator_mode().unwrap(), GeneratorMode::Builtin);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[generator]\nbeam = 4\n");
        assert!(matches!(PipelineConfig::from_toml(&text, Path::new("/")), Err(Error::Config(_))));
        let text = format!("colour = 1\n{MINIMAL}");
        assert!(PipelineConfig::from_toml(&text, Path::new("/")).is_err());
    }

    #[test]
    fn ranges_validated() {
        for extra in [
            "[generator]\nhistory_bias = 1.2",
            "[generator]\nnum_queries = 0",
            "[generator]\norder = 1",
            "[generator]\nmode = \"neural\"",
            "[retrieval]\nks = []",
            "[grid]\nk1 = { start = 0.0, stop = 5.0, step = 1.0 }\nb = { start = 0.1, stop = 0.9, step = 0.1 }",
        ] {
            let text = format!("{MINIMAL}\n{extra}\n");
            assert!(PipelineConfig::from_toml(&text, Path::new("/")).is_err(), "{extra}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::new("/a", "/b", "/c");
        let back = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/")).unwrap();
        assert_eq!(back, cfg);
    }
}
