use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::generator::tokenize;

/// BM25 free parameters: term-frequency saturation `k1` and length
/// normalization `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=3.0).contains(&self.k1) {
            return Err(Error::Config(format!("k1 must lie in [0, 3], got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub item_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// `ln(1 + (N - n + 0.5) / (n + 0.5))`, always positive for `n <= N`.
pub fn idf(num_docs: usize, doc_freq: usize) -> f64 {
    let n = doc_freq as f64;
    (1.0 + (num_docs as f64 - n + 0.5) / (n + 0.5)).ln()
}

/// Immutable title index. Document ids follow item id order, so ascending
/// doc id is also the search tie-break order.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    item_ids: Vec<String>,
    doc_ids: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(catalog: &Catalog) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::invalid("cannot index an empty catalog"));
        }
        let mut item_ids = Vec::with_capacity(catalog.len());
        let mut doc_lengths = Vec::with_capacity(catalog.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (doc, (item_id, item)) in catalog.iter().enumerate() {
            let tokens = tokenize(&item.title);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
            item_ids.push(item_id.clone());
            doc_lengths.push(tokens.len() as u32);
        }
        Ok(Self::assemble(item_ids, doc_lengths, postings))
    }

    fn assemble(item_ids: Vec<String>, doc_lengths: Vec<u32>, postings: HashMap<String, Vec<Posting>>) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;
        let doc_ids = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Self {
            item_ids,
            doc_ids,
            doc_lengths,
            avgdl,
            postings,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.item_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, item_id: &str) -> Option<u32> {
        self.doc_ids.get(item_id).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.doc_ids.contains_key(item_id)
    }

    fn term_weight(&self, params: &Bm25Params, doc_freq: usize, tf: u32, doc_len: u32) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - params.b + params.b * f64::from(doc_len) / self.avgdl;
        idf(self.num_docs(), doc_freq) * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm)
    }

    /// BM25 score of one item for a tokenized query. Repeated query terms
    /// count once; unknown terms contribute nothing.
    pub fn bm25_score<S: AsRef<str>>(&self, params: &Bm25Params, query: &[S], item_id: &str) -> Result<f64> {
        let doc = *self
            .doc_ids
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        let mut score = 0.0;
        for term in distinct(query) {
            let plist = self.postings(term);
            if let Ok(pos) = plist.binary_search_by_key(&doc, |p| p.doc) {
                score += self.term_weight(params, plist.len(), plist[pos].tf, self.doc_lengths[doc as usize]);
            }
        }
        Ok(score)
    }

    /// Top `top_k` items with positive score for `query`, ranked by score
    /// descending and item id ascending.
    pub fn search(&self, params: &Bm25Params, query: &str, top_k: usize) -> Vec<SearchHit> {
        self.search_tokens(params, &tokenize(query), top_k)
    }

    pub fn search_tokens<S: AsRef<str>>(&self, params: &Bm25Params, query: &[S], top_k: usize) -> Vec<SearchHit> {
        if top_k == 0 {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.num_docs()];
        let mut touched = Vec::new();
        for term in distinct(query) {
            let plist = self.postings(term);
            for p in plist {
                let slot = &mut acc[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                *slot += self.term_weight(params, plist.len(), p.tf, self.doc_lengths[p.doc as usize]);
            }
        }
        let mut scored: Vec<(u32, f64)> = touched
            .into_iter()
            .map(|d| (d, acc[d as usize]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > top_k {
            scored.select_nth_unstable_by(top_k - 1, cmp);
            scored.truncate(top_k);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (d, score))| SearchHit {
                item_id: self.item_ids[d as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }
}

/// Query terms in first-occurrence order without repeats.
fn distinct<S: AsRef<str>>(query: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    query
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect()
}

const SNAPSHOT_FORMAT: &str = "queryrec-index";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexSnapshot {
    format: String,
    version: u32,
    item_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    /// Sorted by term; each list sorted by doc.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Serialize for InvertedIndex {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        IndexSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            item_ids: self.item_ids.clone(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, l)| (t.clone(), l.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InvertedIndex {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let snap = IndexSnapshot::deserialize(deserializer)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported index snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        let n = snap.item_ids.len();
        if n == 0 || snap.doc_lengths.len() != n {
            return Err(D::Error::custom("index snapshot has inconsistent document tables"));
        }
        if snap.item_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(D::Error::custom("index snapshot item ids are not strictly ascending"));
        }
        let mut tf_sums = vec![0u64; n];
        let mut postings = HashMap::with_capacity(snap.postings.len());
        for (term, list) in snap.postings {
            if list.is_empty() || list.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(D::Error::custom(format!("posting list for `{term}` is not sorted")));
            }
            let mut plist = Vec::with_capacity(list.len());
            for (doc, tf) in list {
                if doc as usize >= n || tf == 0 {
                    return Err(D::Error::custom(format!("bad posting ({doc}, {tf}) for `{term}`")));
                }
                tf_sums[doc as usize] += u64::from(tf);
                plist.push(Posting { doc, tf });
            }
            postings.insert(term, plist);
        }
        if tf_sums.iter().zip(&snap.doc_lengths).any(|(&s, &l)| s != u64::from(l)) {
            return Err(D::Error::custom("posting frequencies disagree with document lengths"));
        }
        Ok(Self::assemble(snap.item_ids, snap.doc_lengths, postings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Item;

    fn catalog(titles: &[&str]) -> Catalog {
        titles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let id = format!("d{i}");
                (
                    id.clone(),
                    Item {
                        item_id: id,
                        title: t.to_string(),
                        categories: Default::default(),
                        brand: None,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn statistics_on_two_docs() {
        let idx = InvertedIndex::build(&catalog(&["a b", "a"])).unwrap();
        assert_eq!(idx.doc_freq("a"), 2);
        assert_eq!(idx.doc_freq("b"), 1);
        assert_eq!(idx.avgdl(), 1.5);
        assert_eq!(idx.num_docs(), 2);
    }

    #[test]
    fn single_doc_avgdl() {
        let idx = InvertedIndex::build(&catalog(&["one two three"])).unwrap();
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn empty_catalog_rejected() {
        assert!(InvertedIndex::build(&Catalog::new()).is_err());
    }

    #[test]
    fn worked_score() {
        let idx = InvertedIndex::build(&catalog(&["a b", "a"])).unwrap();
        let s = idx.bm25_score(&Bm25Params::default(), &["b"], "d0").unwrap();
        assert!((s - 0.88 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let idx = InvertedIndex::build(&catalog(&["a b", "a"])).unwrap();
        assert_eq!(idx.bm25_score(&Bm25Params::default(), &["b", "zzz"], "d1").unwrap(), 0.0);
        assert!(idx.search(&Bm25Params::default(), "zzz yyy", 10).is_empty());
        assert!(idx.search(&Bm25Params::default(), "!!!", 10).is_empty());
    }

    #[test]
    fn unknown_item_is_error() {
        let idx = InvertedIndex::build(&catalog(&["a"])).unwrap();
        assert!(matches!(
            idx.bm25_score(&Bm25Params::default(), &["a"], "nope"),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn k1_zero_sums_idf_of_present_terms() {
        let idx = InvertedIndex::build(&catalog(&["a a b c", "a", "c d"])).unwrap();
        let p = Bm25Params { k1: 0.0, b: 0.75 };
        let s = idx.bm25_score(&p, &["a", "b", "d"], "d0").unwrap();
        assert!((s - (idf(3, 2) + idf(3, 1))).abs() < 1e-12);
    }

    #[test]
    fn b_zero_ignores_length() {
        let idx = InvertedIndex::build(&catalog(&["x y", "x y z w v u", "q"])).unwrap();
        let p = Bm25Params { k1: 1.5, b: 0.0 };
        let short = idx.bm25_score(&p, &["x"], "d0").unwrap();
        let long = idx.bm25_score(&p, &["x"], "d1").unwrap();
        assert_eq!(short, long);
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let idx = InvertedIndex::build(&catalog(&["a b", "a"])).unwrap();
        let p = Bm25Params::default();
        assert_eq!(
            idx.bm25_score(&p, &["b", "b"], "d0").unwrap(),
            idx.bm25_score(&p, &["b"], "d0").unwrap()
        );
    }

    #[test]
    fn ranks_ties_by_item_id() {
        let idx = InvertedIndex::build(&catalog(&["red", "red", "blue red"])).unwrap();
        let hits = idx.search(&Bm25Params::default(), "red", 10);
        let ids: Vec<_> = hits.iter().map(|h| h.item_id.as_str()).collect();
        assert_eq!(ids, ["d0", "d1", "d2"]);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(idx.search(&Bm25Params::default(), "red", 2).len(), 2);
    }

    #[test]
    fn snapshot_round_trip_preserves_results() {
        let idx = InvertedIndex::build(&catalog(&["red soap", "blue soap bar", "red red lipstick"])).unwrap();
        let text = serde_json::to_string(&idx).unwrap();
        let back: InvertedIndex = serde_json::from_str(&text).unwrap();
        assert_eq!(back, idx);
        for q in ["red", "soap bar", "lipstick red", "none"] {
            assert_eq!(
                back.search(&Bm25Params::default(), q, 5),
                idx.search(&Bm25Params::default(), q, 5)
            );
        }
    }

    #[test]
    fn snapshot_rejects_inconsistent_lengths() {
        let idx = InvertedIndex::build(&catalog(&["red soap", "blue"])).unwrap();
        let mut v = serde_json::to_value(&idx).unwrap();
        v["doc_lengths"][0] = serde_json::json!(7);
        assert!(serde_json::from_value::<InvertedIndex>(v).is_err());
    }

    #[test]
    fn params_ranges() {
        assert!(Bm25Params::new(3.0, 1.0).is_ok());
        assert!(Bm25Params::new(3.1, 0.5).is_err());
        assert!(Bm25Params::new(1.0, -0.1).is_err());
    }
}
