//! Query generation: tokenizer, language models and generator front-ends.
//!
//! A [`QueryGenerator`] turns a prompt into scored query strings. The
//! built-in implementation decodes an interpolated n-gram model with beam
//! search; [`external::ExternalGenerator`] delegates to a child process over
//! line-delimited JSON.

pub mod external;
pub mod ngram;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beam::{self, BeamConfig};
use crate::error::{Error, Result};

pub use ngram::{next_token_distribution, HistoryModel, NGramModel, TokenId, Vocabulary};

/// Lowercases `text` and splits it on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Default length-normalization exponent for [`generation_score`].
pub const DEFAULT_GAMMA: f64 = 0.7;

/// Length-normalized log-likelihood: `sum(log_probs) / len^gamma`.
pub fn generation_score(log_probs: &[f64], gamma: f64) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::invalid("cannot score a zero-length query"));
    }
    let total: f64 = log_probs.iter().sum();
    Ok(normalized_score(total, log_probs.len(), gamma))
}

#[inline]
pub(crate) fn normalized_score(log_prob: f64, len: usize, gamma: f64) -> f64 {
    log_prob / (len as f64).powf(gamma)
}

/// A conditional next-token model over a dense id space, as seen by the
/// beam decoder.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> TokenId;

    /// Whether the decoder may emit `id`. Reserved ids such as BOS are not.
    fn is_generatable(&self, id: TokenId) -> bool;

    /// Probabilities over all ids given the tokens generated so far.
    fn next_distribution(&self, continuation: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub score: f64,
}

/// Queries for one prompt, best first. `requested` is the beam size asked
/// for; fewer queries means the model could not support that many.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub queries: Vec<Query>,
    pub requested: usize,
}

impl QueryBatch {
    pub fn deficit(&self) -> usize {
        self.requested.saturating_sub(self.queries.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub user_id: &'a str,
    pub prompt: &'a str,
    pub history_titles: &'a [&'a str],
    pub num_queries: usize,
    pub max_tokens: usize,
}

pub trait QueryGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<QueryBatch>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum GeneratorMode {
    #[default]
    Builtin,
    /// Shell command line of an external generator process.
    External(String),
}

impl FromStr for GeneratorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(GeneratorMode::Builtin),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(GeneratorMode::External(cmd.trim().to_string())),
                _ => Err(Error::Config(format!(
                    "generator must be `builtin` or `external:<command>`, got `{s}`"
                ))),
            },
        }
    }
}

impl fmt::Display for GeneratorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorMode::Builtin => f.write_str("builtin"),
            GeneratorMode::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    /// Weight λ of the per-user history model in the interpolation.
    pub history_bias: f64,
    pub max_query_tokens: usize,
    /// Beam size m, which is also the number of queries per user.
    pub num_queries: usize,
    pub gamma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mode: GeneratorMode::Builtin,
            history_bias: 0.5,
            max_query_tokens: 12,
            num_queries: 10,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.history_bias) {
            return Err(Error::Config(format!(
                "history_bias must lie in [0, 1], got {}",
                self.history_bias
            )));
        }
        if self.num_queries < 1 {
            return Err(Error::Config("beam size m must be at least 1".into()));
        }
        if self.max_query_tokens < 1 {
            return Err(Error::Config("max_query_tokens must be at least 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Beam search over an [`NGramModel`] interpolated with a per-user history
/// model.
#[derive(Debug, Clone)]
pub struct BuiltinGenerator {
    pub model: NGramModel,
    pub history_bias: f64,
    pub gamma: f64,
}

impl QueryGenerator for BuiltinGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<QueryBatch> {
        let config = BeamConfig {
            beam_size: request.num_queries,
            max_len: request.max_tokens,
            gamma: self.gamma,
        };
        beam::generate_queries(
            request.prompt,
            request.history_titles,
            &self.model,
            self.history_bias,
            &config,
        )
    }
}

/// Sanity-check generator that emits the known target title of each user
/// as its only query.
#[derive(Debug, Clone, Default)]
pub struct OracleGenerator {
    targets: HashMap<String, String>,
}

impl OracleGenerator {
    pub fn new(targets: HashMap<String, String>) -> Self {
        Self { targets }
    }
}

impl QueryGenerator for OracleGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<QueryBatch> {
        let title = self
            .targets
            .get(request.user_id)
            .ok_or_else(|| Error::UnknownUser(request.user_id.to_string()))?;
        Ok(QueryBatch {
            queries: vec![Query {
                text: title.clone(),
                score: 0.0,
            }],
            requested: request.num_queries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Logitech M510 Mouse"), ["logitech", "m510", "mouse"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("wet-n-wild #5"), ["wet", "n", "wild", "5"]);
        assert_eq!(tokenize("  --Crème  BRÛLÉE!! "), ["crème", "brûlée"]);
    }

    #[test]
    fn score_examples() {
        assert_eq!(generation_score(&[0.0], 0.7).unwrap(), 0.0);
        let half = 0.5f64.ln();
        assert!((generation_score(&[half, half], 1.0).unwrap() - half).abs() < 1e-15);
        assert_eq!(generation_score(&[-1.0, -2.5, -0.5], 0.0).unwrap(), -4.0);
        assert!(generation_score(&[], 0.7).is_err());
    }

    #[test]
    fn appending_certain_token_never_lowers_unnormalized_score() {
        let base = [-1.2, -0.3];
        let extended = [-1.2, -0.3, 0.0];
        assert!(generation_score(&extended, 0.0).unwrap() >= generation_score(&base, 0.0).unwrap());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("builtin".parse::<GeneratorMode>().unwrap(), GeneratorMode::Builtin);
        assert_eq!(
            "external:python3 gen.py".parse::<GeneratorMode>().unwrap(),
            GeneratorMode::External("python3 gen.py".into())
        );
        assert!("external:".parse::<GeneratorMode>().is_err());
        assert!("gpt".parse::<GeneratorMode>().is_err());
    }

    #[test]
    fn config_ranges() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let bad = [
            GeneratorConfig { history_bias: 1.5, ..Default::default() },
            GeneratorConfig { num_queries: 0, ..Default::default() },
            GeneratorConfig { max_query_tokens: 0, ..Default::default() },
            GeneratorConfig { gamma: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
