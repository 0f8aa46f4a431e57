//! Interpolated n-gram language model.
//!
//! Counts are kept for every context length `0..order`. A distribution is
//! read from the longest suffix of the context that was observed during
//! training, with additive smoothing over the generatable vocabulary; shorter
//! contexts are not mixed in. At generation time the global model is
//! interpolated with a [`HistoryModel`] fitted on one user's history titles.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{tokenize, LanguageModel};
use crate::corpus::EOS_MARKER;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;
const RESERVED: [&str; 3] = [BOS, EOS, UNK];

/// Dense token ↔ id map. Ids 0..3 are BOS, EOS and UNK; the remaining
/// tokens follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        sorted.sort_unstable();
        sorted.dedup();
        let tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).chain(sorted).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK_ID`] if it is out of vocabulary.
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// BOS and UNK are never predicted.
    pub fn is_generatable(id: TokenId) -> bool {
        id != BOS_ID && id != UNK_ID
    }

    /// Number of ids that carry probability mass.
    pub fn support_size(&self) -> usize {
        self.len() - 2
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    /// (next token, count), sorted by token id.
    next: Vec<(TokenId, u64)>,
}

/// Context → next-token count tables for all context lengths below `order`.
#[derive(Debug, Clone, PartialEq)]
struct CountTables {
    order: usize,
    contexts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl CountTables {
    /// Fits counts over sequences that already end with EOS. Each sequence
    /// is left-padded with `order - 1` BOS tokens.
    fn fit<'a>(sequences: impl IntoIterator<Item = &'a [TokenId]>, order: usize) -> Self {
        let mut raw: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = HashMap::new();
        let pad = order - 1;
        for seq in sequences {
            let mut padded = vec![BOS_ID; pad];
            padded.extend_from_slice(seq);
            for pos in pad..padded.len() {
                let target = padded[pos];
                for len in 0..order {
                    let ctx = padded[pos - len..pos].to_vec();
                    *raw.entry(ctx).or_default().entry(target).or_default() += 1;
                }
            }
        }
        let contexts = raw
            .into_iter()
            .map(|(ctx, next)| {
                let total = next.values().sum();
                (
                    ctx,
                    ContextCounts {
                        total,
                        next: next.into_iter().collect(),
                    },
                )
            })
            .collect();
        Self { order, contexts }
    }

    /// Counts of the longest observed suffix of `context`, considering at
    /// most `order - 1` tokens. Missing leading positions are BOS.
    fn lookup(&self, context: &[TokenId]) -> Option<&ContextCounts> {
        let width = self.order - 1;
        let mut window = vec![BOS_ID; width.saturating_sub(context.len())];
        window.extend_from_slice(&context[context.len().saturating_sub(width)..]);
        (0..=width).rev().find_map(|len| {
            self.contexts
                .get(&window[width - len..])
                .filter(|c| c.total > 0)
        })
    }

    /// Writes the smoothed distribution for `context` into `out`.
    fn distribution_into(&self, context: &[TokenId], alpha: f64, vocab_len: usize, out: &mut [f64]) {
        let support = (vocab_len - 2) as f64;
        let (total, next): (u64, &[(TokenId, u64)]) = match self.lookup(context) {
            Some(c) => (c.total, &c.next),
            None => (0, &[]),
        };
        let denom = total as f64 + alpha * support;
        let floor = alpha / denom;
        for (id, p) in out.iter_mut().enumerate() {
            *p = if Vocabulary::is_generatable(id as TokenId) { floor } else { 0.0 };
        }
        for &(id, count) in next {
            out[id as usize] = (count as f64 + alpha) / denom;
        }
    }
}

/// Global n-gram model trained on prompt + target-title lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NGramSnapshot", try_from = "NGramSnapshot")]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    tables: CountTables,
}

/// Strips an optional trailing [`EOS_MARKER`], tokenizes, and appends EOS.
fn encode_line(vocab: &Vocabulary, line: &str) -> Vec<TokenId> {
    let body = line.strip_suffix(EOS_MARKER).unwrap_or(line);
    let mut ids = vocab.encode(body);
    ids.push(EOS_ID);
    ids
}

impl NGramModel {
    pub fn train<S: AsRef<str>>(lines: &[S], order: usize, alpha: f64) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::invalid("cannot train an n-gram model on an empty corpus"));
        }
        if order < 2 {
            return Err(Error::Config(format!("n-gram order must be at least 2, got {order}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("smoothing alpha must be > 0, got {alpha}")));
        }
        let vocab = Vocabulary::from_tokens(lines.iter().flat_map(|l| {
            let l = l.as_ref();
            tokenize(l.strip_suffix(EOS_MARKER).unwrap_or(l))
        }));
        let encoded: Vec<Vec<TokenId>> = lines.iter().map(|l| encode_line(&vocab, l.as_ref())).collect();
        let tables = CountTables::fit(encoded.iter().map(Vec::as_slice), order);
        Ok(Self {
            order,
            alpha,
            vocab,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Global distribution over all ids given `context`.
    pub fn global_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab.len()];
        self.tables
            .distribution_into(context, self.alpha, self.vocab.len(), &mut out);
        out
    }

    /// Fits the per-user history model over this model's vocabulary.
    pub fn history_model<S: AsRef<str>>(&self, titles: &[S]) -> HistoryModel {
        let encoded: Vec<Vec<TokenId>> = titles
            .iter()
            .map(|t| {
                let mut ids: Vec<TokenId> = self
                    .vocab
                    .encode(t.as_ref())
                    .into_iter()
                    .filter(|&id| id != UNK_ID)
                    .collect();
                ids.push(EOS_ID);
                ids
            })
            .collect();
        HistoryModel {
            tables: CountTables::fit(encoded.iter().map(Vec::as_slice), self.order),
        }
    }
}

/// N-gram counts over a single user's history titles.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryModel {
    tables: CountTables,
}

/// `(1 - λ)·P_global(·|context) + λ·P_history(·|context)`.
pub fn next_token_distribution(
    model: &NGramModel,
    context: &[TokenId],
    history: &HistoryModel,
    lambda: f64,
) -> Vec<f64> {
    let n = model.vocab.len();
    let mut global = vec![0.0; n];
    model
        .tables
        .distribution_into(context, model.alpha, n, &mut global);
    if lambda == 0.0 {
        return global;
    }
    let mut personal = vec![0.0; n];
    history
        .tables
        .distribution_into(context, model.alpha, n, &mut personal);
    global
        .iter()
        .zip(&personal)
        .map(|(g, h)| (1.0 - lambda) * g + lambda * h)
        .collect()
}

/// The global model conditioned on a prompt and a user's history, exposed
/// to the beam decoder.
pub struct ConditionedModel<'a> {
    model: &'a NGramModel,
    history: HistoryModel,
    lambda: f64,
    /// Trailing prompt tokens, at most `order - 1` of them.
    prompt_tail: Vec<TokenId>,
}

impl<'a> ConditionedModel<'a> {
    pub fn new<S: AsRef<str>>(model: &'a NGramModel, prompt: &str, history_titles: &[S], lambda: f64) -> Self {
        let ids = model.vocab.encode(prompt);
        let keep = model.order - 1;
        let prompt_tail = ids[ids.len().saturating_sub(keep)..].to_vec();
        Self {
            model,
            history: model.history_model(history_titles),
            lambda,
            prompt_tail,
        }
    }
}

impl LanguageModel for ConditionedModel<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn eos(&self) -> TokenId {
        EOS_ID
    }

    fn is_generatable(&self, id: TokenId) -> bool {
        Vocabulary::is_generatable(id)
    }

    fn next_distribution(&self, continuation: &[TokenId]) -> Vec<f64> {
        let keep = self.model.order - 1;
        let context: Vec<TokenId> = if continuation.len() >= keep {
            continuation[continuation.len() - keep..].to_vec()
        } else {
            let from_prompt = keep - continuation.len();
            let start = self.prompt_tail.len().saturating_sub(from_prompt);
            self.prompt_tail[start..]
                .iter()
                .chain(continuation)
                .copied()
                .collect()
        };
        next_token_distribution(self.model, &context, &self.history, self.lambda)
    }
}

const SNAPSHOT_FORMAT: &str = "queryrec-ngram";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContextRow {
    context: Vec<TokenId>,
    total: u64,
    next: Vec<(TokenId, u64)>,
}

/// On-disk form: vocabulary in id order and context rows sorted by context.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NGramSnapshot {
    format: String,
    version: u32,
    order: usize,
    alpha: f64,
    tokens: Vec<String>,
    contexts: Vec<ContextRow>,
}

impl From<NGramModel> for NGramSnapshot {
    fn from(model: NGramModel) -> Self {
        let mut contexts: Vec<ContextRow> = model
            .tables
            .contexts
            .into_iter()
            .map(|(context, c)| ContextRow {
                context,
                total: c.total,
                next: c.next,
            })
            .collect();
        contexts.sort_unstable_by(|a, b| a.context.cmp(&b.context));
        NGramSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            order: model.order,
            alpha: model.alpha,
            tokens: model.vocab.tokens,
            contexts,
        }
    }
}

impl TryFrom<NGramSnapshot> for NGramModel {
    type Error = String;

    fn try_from(snap: NGramSnapshot) -> std::result::Result<Self, String> {
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(format!(
                "unsupported model snapshot {} v{}",
                snap.format, snap.version
            ));
        }
        if snap.order < 2 || !(snap.alpha.is_finite() && snap.alpha > 0.0) {
            return Err("snapshot has invalid order or alpha".into());
        }
        if snap.tokens.len() < RESERVED.len() || snap.tokens[..RESERVED.len()] != RESERVED {
            return Err("snapshot vocabulary lacks reserved tokens".into());
        }
        let vocab = Vocabulary::from_tokens(snap.tokens.iter().skip(RESERVED.len()).cloned());
        if vocab.tokens != snap.tokens {
            return Err("snapshot vocabulary is not in canonical order".into());
        }
        let mut contexts = HashMap::with_capacity(snap.contexts.len());
        for row in snap.contexts {
            let sum: u64 = row.next.iter().map(|&(_, c)| c).sum();
            if sum != row.total || row.context.len() >= snap.order {
                return Err(format!("inconsistent counts for context {:?}", row.context));
            }
            if row.next.iter().any(|&(id, _)| id as usize >= vocab.len()) {
                return Err(format!("token id out of range in context {:?}", row.context));
            }
            contexts.insert(
                row.context,
                ContextCounts {
                    total: row.total,
                    next: row.next,
                },
            );
        }
        Ok(NGramModel {
            order: snap.order,
            alpha: snap.alpha,
            vocab,
            tables: CountTables {
                order: snap.order,
                contexts,
            },
        })
    }
}
