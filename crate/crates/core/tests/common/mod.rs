//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use queryrec::corpus::{Catalog, Item};
use queryrec::generator::{LanguageModel, TokenId};
use rand::Rng;

/// Bigram probability table: row 0 is the start distribution, row `t + 1`
/// the distribution after token `t`. Token 0 is EOS.
#[derive(Debug, Clone)]
pub struct TableModel {
    pub rows: Vec<Vec<f64>>,
}

impl TableModel {
    /// Random rows over `v` tokens; roughly one entry in five is zero, but
    /// every row keeps at least one positive entry.
    pub fn random<R: Rng>(rng: &mut R, v: usize) -> Self {
        let rows = (0..=v)
            .map(|_| {
                let mut row: Vec<f64> = (0..v)
                    .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.01..1.0) })
                    .collect();
                if row.iter().all(|&p| p == 0.0) {
                    let i = rng.gen_range(0..v);
                    row[i] = 1.0;
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
                row
            })
            .collect();
        Self { rows }
    }

    pub fn prob(&self, prefix: &[TokenId], next: TokenId) -> f64 {
        let row = prefix.last().map_or(0, |&t| t as usize + 1);
        self.rows[row][next as usize]
    }
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

/// Every sequence the decoder can emit: at least one token before EOS,
/// ending in EOS or at `max_len`, with positive probability. Ranked by
/// score descending then tokens ascending.
pub fn enumerate_sequences<L: LanguageModel>(lm: &L, max_len: usize, gamma: f64) -> Vec<(Vec<TokenId>, f64)> {
    fn walk<L: LanguageModel>(
        lm: &L,
        max_len: usize,
        gamma: f64,
        prefix: &mut Vec<TokenId>,
        log_prob: f64,
        out: &mut Vec<(Vec<TokenId>, f64)>,
    ) {
        let dist = lm.next_distribution(prefix);
        for (t, &p) in dist.iter().enumerate() {
            let t = t as TokenId;
            if p <= 0.0 || !lm.is_generatable(t) || (t == lm.eos() && prefix.is_empty()) {
                continue;
            }
            let lp = log_prob + p.ln();
            prefix.push(t);
            if t == lm.eos() || prefix.len() == max_len {
                let score = lp / (prefix.len() as f64).powf(gamma);
                out.push((prefix.clone(), score));
            } else {
                walk(lm, max_len, gamma, prefix, lp, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(lm, max_len, gamma, &mut Vec::new(), 0.0, &mut out);
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Linear-scan BM25 over raw token lists. Returns (doc index, score) for
/// every positive-scoring doc, ranked by score then doc index.
pub fn brute_force_bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len();
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        let mut score = 0.0;
        for term in &terms {
            let tf = doc.iter().filter(|w| w == term).count();
            if tf == 0 {
                continue;
            }
            let df = docs.iter().filter(|other| other.contains(term)).count() as f64;
            let idf = (1.0 + (n as f64 - df + 0.5) / (df + 0.5)).ln();
            let tf = tf as f64;
            let norm = 1.0 - b + b * doc.len() as f64 / avgdl;
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
        }
        if score > 0.0 {
            scored.push((d, score));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

fn jaccard_counting(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let mut inter = 0usize;
    for x in a {
        if b.contains(x) {
            inter += 1;
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn attr_set(item: &Item, brand: bool) -> HashSet<String> {
    if brand {
        item.brand.iter().cloned().collect()
    } else {
        item.categories.iter().cloned().collect()
    }
}

/// Diversity over all ordered pairs, or `None` when `recs.len() != k`.
pub fn brute_diversity(recs: &[String], catalog: &Catalog, brand: bool, k: usize) -> Option<f64> {
    if recs.len() != k {
        return None;
    }
    let sets: Vec<HashSet<String>> = recs.iter().map(|r| attr_set(&catalog[r], brand)).collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                total += jaccard_counting(&sets[i], &sets[j]);
            }
        }
    }
    Some(1.0 - total / (k * (k - 1)) as f64)
}

pub fn brute_coverage(recs: &[String], history: &[String], catalog: &Catalog, brand: bool) -> Option<f64> {
    let mut hist: Vec<String> = Vec::new();
    for h in history {
        for a in attr_set(&catalog[h], brand) {
            if !hist.contains(&a) {
                hist.push(a);
            }
        }
    }
    if hist.is_empty() {
        return None;
    }
    let mut rec: HashMap<String, ()> = HashMap::new();
    for r in recs {
        for a in attr_set(&catalog[r], brand) {
            rec.insert(a, ());
        }
    }
    let covered = hist.iter().filter(|a| rec.contains_key(*a)).count();
    Some(covered as f64 / hist.len() as f64)
}

pub fn item(id: &str, title: &str, categories: &[&str], brand: Option<&str>) -> Item {
    Item {
        item_id: id.to_string(),
        title: title.to_string(),
        categories: categories.iter().map(|c| c.to_string()).collect::<BTreeSet<_>>(),
        brand: brand.map(str::to_string),
    }
}

pub fn catalog_of(items: Vec<Item>) -> Catalog {
    items.into_iter().map(|i| (i.item_id.clone(), i)).collect()
}
