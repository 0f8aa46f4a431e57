//! Multi-query beam search.
//!
//! Every step extends each unfinished hypothesis by every generatable token,
//! pools the extensions with the finished hypotheses (which compete at their
//! final score), and keeps the best `m` by generation score. Equal scores
//! are ordered by token ids, lexicographically, so decoding is deterministic.
//! Zero-probability extensions are pruned, and EOS is not allowed as the
//! first token, so every query holds at least one word.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::generator::ngram::ConditionedModel;
use crate::generator::{normalized_score, LanguageModel, NGramModel, Query, QueryBatch, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    /// Beam width m.
    pub beam_size: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Continuation tokens. A finished hypothesis ends with EOS.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    pub step: usize,
}

impl Beam {
    /// A beam holding the single empty hypothesis.
    pub fn initial() -> Self {
        Self {
            hypotheses: vec![Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                score: 0.0,
                finished: false,
            }],
            step: 0,
        }
    }

    pub fn has_unfinished(&self) -> bool {
        self.hypotheses.iter().any(|h| !h.finished)
    }
}

struct Candidate {
    score: f64,
    log_prob: f64,
    parent: usize,
    /// `None` for a finished hypothesis carried over unchanged.
    token: Option<TokenId>,
}

pub fn beam_step<L: LanguageModel + ?Sized>(beam: &Beam, lm: &L, beam_size: usize, gamma: f64) -> Result<Beam> {
    if beam_size == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if !beam.has_unfinished() {
        return Err(Error::invalid("beam_step called on a beam with no unfinished hypotheses"));
    }
    let eos = lm.eos();
    let mut pool = Vec::new();
    for (parent, hyp) in beam.hypotheses.iter().enumerate() {
        if hyp.finished {
            pool.push(Candidate {
                score: hyp.score,
                log_prob: hyp.log_prob,
                parent,
                token: None,
            });
            continue;
        }
        let dist = lm.next_distribution(&hyp.tokens);
        let len = hyp.tokens.len() + 1;
        for (id, &p) in dist.iter().enumerate() {
            let id = id as TokenId;
            if p <= 0.0 || !lm.is_generatable(id) || (id == eos && hyp.tokens.is_empty()) {
                continue;
            }
            let log_prob = hyp.log_prob + p.ln();
            pool.push(Candidate {
                score: normalized_score(log_prob, len, gamma),
                log_prob,
                parent,
                token: Some(id),
            });
        }
    }

    let hyps = &beam.hypotheses;
    let cmp = |a: &Candidate, b: &Candidate| {
        b.score.total_cmp(&a.score).then_with(|| {
            let ta = hyps[a.parent].tokens.iter().chain(a.token.as_ref());
            let tb = hyps[b.parent].tokens.iter().chain(b.token.as_ref());
            ta.cmp(tb)
        })
    };
    if pool.len() > beam_size {
        pool.select_nth_unstable_by(beam_size - 1, cmp);
        pool.truncate(beam_size);
    }
    pool.sort_unstable_by(cmp);

    let hypotheses = pool
        .into_iter()
        .map(|c| match c.token {
            None => hyps[c.parent].clone(),
            Some(tok) => {
                let mut tokens = Vec::with_capacity(hyps[c.parent].tokens.len() + 1);
                tokens.extend_from_slice(&hyps[c.parent].tokens);
                tokens.push(tok);
                Hypothesis {
                    tokens,
                    log_prob: c.log_prob,
                    score: c.score,
                    finished: tok == eos,
                }
            }
        })
        .collect();
    Ok(Beam {
        hypotheses,
        step: beam.step + 1,
    })
}

/// Runs [`beam_step`] until every hypothesis is finished or `max_len`
/// tokens have been generated. Hypotheses still open at `max_len` are
/// returned as they are. Result is best first.
pub fn decode<L: LanguageModel + ?Sized>(lm: &L, config: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if config.beam_size == 0 || config.max_len == 0 {
        return Err(Error::Config("beam size and max_len must be at least 1".into()));
    }
    let mut beam = Beam::initial();
    while beam.step < config.max_len && beam.has_unfinished() {
        beam = beam_step(&beam, lm, config.beam_size, config.gamma)?;
    }
    Ok(beam.hypotheses)
}

/// Decodes up to `m` distinct queries for `prompt` from the interpolated
/// n-gram model. EOS is stripped from the rendered text.
pub fn generate_queries<S: AsRef<str>>(
    prompt: &str,
    history_titles: &[S],
    model: &NGramModel,
    history_bias: f64,
    config: &BeamConfig,
) -> Result<QueryBatch> {
    let lm = ConditionedModel::new(model, prompt, history_titles, history_bias);
    let hypotheses = decode(&lm, config)?;
    let vocab = model.vocab();
    let eos = lm.eos();
    let mut seen = HashSet::new();
    let mut queries = Vec::with_capacity(hypotheses.len());
    for hyp in hypotheses {
        let text = hyp
            .tokens
            .iter()
            .filter(|&&t| t != eos)
            .map(|&t| vocab.token(t))
            .collect::<Vec<_>>()
            .join(" ");
        if seen.insert(text.clone()) {
            queries.push(Query { text, score: hyp.score });
        }
    }
    let batch = QueryBatch {
        queries,
        requested: config.beam_size,
    };
    if batch.deficit() > 0 {
        log::warn!(
            "beam produced {} distinct queries, {} requested",
            batch.queries.len(),
            batch.requested
        );
    }
    Ok(batch)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Bigram table model: row `prev + 1` (row 0 at the start) gives the
    /// next-token distribution. Token 0 is EOS.
    pub(crate) struct TableModel {
        pub rows: Vec<Vec<f64>>,
    }

    impl LanguageModel for TableModel {
        fn vocab_size(&self) -> usize {
            self.rows[0].len()
        }
        fn eos(&self) -> TokenId {
            0
        }
        fn is_generatable(&self, _: TokenId) -> bool {
            true
        }
        fn next_distribution(&self, continuation: &[TokenId]) -> Vec<f64> {
            let row = continuation.last().map_or(0, |&t| t as usize + 1);
            self.rows[row].clone()
        }
    }

    fn uniform(v: usize) -> TableModel {
        TableModel {
            rows: vec![vec![1.0 / v as f64; v]; v + 1],
        }
    }

    #[test]
    fn uniform_ties_break_lexicographically() {
        // vocab {EOS=0, a=1, b=2}
        let first = beam_step(&Beam::initial(), &uniform(3), 2, 0.7).unwrap();
        let toks: Vec<_> = first.hypotheses.iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(toks, vec![vec![1], vec![2]]);
        let second = beam_step(&first, &uniform(3), 2, 0.7).unwrap();
        let toks: Vec<_> = second.hypotheses.iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(toks, vec![vec![1, 0], vec![1, 1]]);
        assert!(second.hypotheses[0].finished);
    }

    #[test]
    fn width_one_is_greedy() {
        let lm = TableModel {
            rows: vec![
                vec![0.1, 0.6, 0.3],
                vec![0.5, 0.2, 0.3],
                vec![0.2, 0.3, 0.5],
                vec![0.4, 0.4, 0.2],
            ],
        };
        let mut beam = Beam::initial();
        let mut greedy: Vec<TokenId> = Vec::new();
        while beam.has_unfinished() && beam.step < 5 {
            beam = beam_step(&beam, &lm, 1, 0.0).unwrap();
            if greedy.last() != Some(&0) {
                let d = lm.next_distribution(&greedy);
                let best = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a))).unwrap();
                greedy.push(best as TokenId);
            }
            assert_eq!(beam.hypotheses.len(), 1);
            assert_eq!(beam.hypotheses[0].tokens, greedy);
        }
    }

    #[test]
    fn fully_finished_beam_is_an_error() {
        let beam = Beam {
            hypotheses: vec![Hypothesis {
                tokens: vec![0],
                log_prob: 0.0,
                score: 0.0,
                finished: true,
            }],
            step: 1,
        };
        assert!(beam_step(&beam, &uniform(3), 2, 0.7).is_err());
    }

    #[test]
    fn deterministic_model_collapses_to_one_query() {
        // a -> a -> ... with certainty, never EOS.
        let lm = TableModel {
            rows: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let hyps = decode(&lm, &BeamConfig { beam_size: 3, max_len: 4, gamma: 0.7 }).unwrap();
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].tokens, vec![1, 1, 1, 1]);
        assert_eq!(hyps[0].score, 0.0);
    }

    #[test]
    fn hypothesis_score_matches_generation_score() {
        let lm = TableModel {
            rows: vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]],
        };
        for hyp in decode(&lm, &BeamConfig { beam_size: 5, max_len: 3, gamma: 0.7 }).unwrap() {
            let mut ctx = Vec::new();
            let mut lps = Vec::new();
            for &t in &hyp.tokens {
                lps.push(lm.next_distribution(&ctx)[t as usize].ln());
                ctx.push(t);
            }
            assert_eq!(hyp.score, crate::generator::generation_score(&lps, 0.7).unwrap());
        }
    }

    #[test]
    fn generated_queries_are_sorted_and_distinct() {
        let model = NGramModel::train(
            &[
                "Previously, the customer has bought: red soap. In the future, the customer wants to buy red lipstick</s>",
                "Previously, the customer has bought: lipstick. In the future, the customer wants to buy blue mascara</s>",
                "Previously, the customer has bought: mascara. In the future, the customer wants to buy green soap bar</s>",
            ],
            3,
            0.05,
        )
        .unwrap();
        let prompt = crate::corpus::format_prompt(&["red soap"]).unwrap();
        let cfg = BeamConfig { beam_size: 6, max_len: 5, gamma: 0.7 };
        let batch = generate_queries(&prompt, &["red soap"], &model, 0.5, &cfg).unwrap();
        assert_eq!(batch.queries.len(), 6);
        assert!(batch.queries.windows(2).all(|w| w[0].score >= w[1].score));
        let texts: HashSet<_> = batch.queries.iter().map(|q| &q.text).collect();
        assert_eq!(texts.len(), 6);
        assert!(batch.queries.iter().all(|q| !q.text.contains("</s>")));
        let again = generate_queries(&prompt, &["red soap"], &model, 0.5, &cfg).unwrap();
        assert_eq!(batch, again);
    }
}
