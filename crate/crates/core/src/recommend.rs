//! Per-user recommendation: prompt, queries, retrieval, ranking-based merge.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{format_prompt, titles_of, Catalog};
use crate::error::{Error, Result};
use crate::generator::{GenerationRequest, Query, QueryGenerator};
use crate::search::{Bm25Params, InvertedIndex};

/// One merged item and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedItem {
    pub item_id: String,
    /// 0-based position of the query in generation-score order.
    pub source_query: usize,
    /// 1-based rank within that query's hits.
    pub source_rank: usize,
}

/// Items per query: `floor(k / m)`, plus one for the first `k mod m` queries.
pub fn quotas(k: usize, m: usize) -> Vec<usize> {
    let base = k / m;
    let extra = k % m;
    (0..m).map(|i| base + usize::from(i < extra)).collect()
}

/// Merges per-query hit lists (ordered by generation score, best first)
/// into at most `k` distinct items.
///
/// Each query first takes its quota of not-yet-selected hits in order. If
/// the list is still short of `k`, queries take turns contributing their
/// next unused hit until `k` is reached or every list is exhausted.
pub fn merge_results<S: AsRef<str>>(hit_lists: &[Vec<S>], k: usize) -> Result<Vec<MergedItem>> {
    if hit_lists.is_empty() {
        return Err(Error::invalid("cannot merge zero query results"));
    }
    let quota = quotas(k, hit_lists.len());
    let mut cursor = vec![0usize; hit_lists.len()];
    let mut selected: HashSet<&str> = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    let mut take = |q: usize, cursor: &mut [usize], out: &mut Vec<MergedItem>| -> bool {
        match next_unused(&hit_lists[q], &mut cursor[q], &selected) {
            Some(pos) => {
                let id = hit_lists[q][pos].as_ref();
                selected.insert(id);
                out.push(MergedItem {
                    item_id: id.to_string(),
                    source_query: q,
                    source_rank: pos + 1,
                });
                true
            }
            None => false,
        }
    };

    for (q, &want) in quota.iter().enumerate() {
        let mut taken = 0;
        while taken < want && out.len() < k && take(q, &mut cursor, &mut out) {
            taken += 1;
        }
    }
    while out.len() < k {
        let mut progressed = false;
        for q in 0..hit_lists.len() {
            if out.len() == k {
                break;
            }
            progressed |= take(q, &mut cursor, &mut out);
        }
        if !progressed {
            break;
        }
    }
    Ok(out)
}

/// Position of the next hit not yet selected, advancing `cursor` past it.
fn next_unused<'a, S: AsRef<str>>(hits: &'a [S], cursor: &mut usize, selected: &HashSet<&'a str>) -> Option<usize> {
    while *cursor < hits.len() {
        let pos = *cursor;
        *cursor += 1;
        if !selected.contains(hits[pos].as_ref()) {
            return Some(pos);
        }
    }
    None
}

/// Searches each query to depth `k` (plus room for exclusions), drops
/// excluded items, and merges. Queries are ordered best first; ties keep
/// their input order.
pub fn retrieve_and_merge(
    index: &InvertedIndex,
    params: &Bm25Params,
    queries: &[Query],
    k: usize,
    excluded: &HashSet<String>,
) -> Result<Vec<MergedItem>> {
    let lists = hit_lists(index, params, queries, k, excluded);
    merge_results(&lists, k)
}

/// Ranked item ids per query, best query first.
pub fn hit_lists(
    index: &InvertedIndex,
    params: &Bm25Params,
    queries: &[Query],
    depth: usize,
    excluded: &HashSet<String>,
) -> Vec<Vec<String>> {
    let mut ordered: Vec<&Query> = queries.iter().collect();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score));
    ordered
        .into_iter()
        .map(|q| {
            index
                .search(params, &q.text, depth + excluded.len())
                .into_iter()
                .map(|h| h.item_id)
                .filter(|id| !excluded.contains(id))
                .take(depth)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecommendOptions {
    pub num_queries: usize,
    pub max_query_tokens: usize,
    pub exclude_history: bool,
}

/// One user's recommendation with the queries behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user_id: String,
    /// Best first; `source_query` in `items` indexes this list.
    pub queries: Vec<Query>,
    pub items: Vec<MergedItem>,
}

/// Queries and hit lists for one user, before merging.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub queries: Vec<Query>,
    pub hit_lists: Vec<Vec<String>>,
    pub query_deficit: usize,
}

impl Retrieval {
    pub fn merge(&self, k: usize) -> Result<Vec<MergedItem>> {
        let truncated: Vec<&[String]> = self.hit_lists.iter().map(|l| &l[..l.len().min(k)]).collect();
        let owned: Vec<Vec<&str>> = truncated
            .iter()
            .map(|l| l.iter().map(String::as_str).collect())
            .collect();
        merge_results(&owned, k)
    }
}

pub struct Recommender<'a> {
    pub generator: &'a dyn QueryGenerator,
    pub index: &'a InvertedIndex,
    pub catalog: &'a Catalog,
    pub params: Bm25Params,
    pub options: RecommendOptions,
}

impl Recommender<'_> {
    /// Generates queries for `history` and searches each to `depth`.
    pub fn retrieve(&self, user_id: &str, history: &[String], depth: usize) -> Result<Retrieval> {
        let titles = titles_of(history, self.catalog)?;
        let prompt = format_prompt(&titles)?;
        let batch = self.generator.generate(&GenerationRequest {
            user_id,
            prompt: &prompt,
            history_titles: &titles,
            num_queries: self.options.num_queries,
            max_tokens: self.options.max_query_tokens,
        })?;
        if batch.queries.is_empty() {
            return Err(Error::invalid(format!("generator returned no queries for user `{user_id}`")));
        }
        if batch.deficit() > 0 {
            log::warn!(
                "user `{user_id}`: {} of {} queries generated; quotas use the actual count",
                batch.queries.len(),
                batch.requested
            );
        }
        let mut queries = batch.queries;
        queries.sort_by(|a, b| b.score.total_cmp(&a.score));
        let excluded: HashSet<String> = if self.options.exclude_history {
            history.iter().cloned().collect()
        } else {
            HashSet::new()
        };
        let lists = hit_lists(self.index, &self.params, &queries, depth, &excluded);
        Ok(Retrieval {
            query_deficit: self.options.num_queries.saturating_sub(queries.len()),
            queries,
            hit_lists: lists,
        })
    }

    pub fn recommend(&self, user_id: &str, history: &[String], k: usize) -> Result<Recommendation> {
        let retrieval = self.retrieve(user_id, history, k)?;
        let items = retrieval.merge(k)?;
        Ok(Recommendation {
            user_id: user_id.to_string(),
            queries: retrieval.queries,
            items,
        })
    }
}
