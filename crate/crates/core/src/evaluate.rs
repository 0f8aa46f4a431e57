//! Recall@K, Diversity@K and Coverage@K.
//!
//! Diversity is one minus the mean Jaccard similarity over all `K(K-1)`
//! ordered pairs of recommended items' attribute sets. Coverage is the share
//! of the attribute union of the user's history that the recommended items'
//! union intersects. Users whose list is shorter than K (diversity) or whose
//! history has an empty attribute union (coverage) are skipped and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, Item, Split, UserSequence};
use crate::error::{Error, Result};
use crate::recommend::Recommender;

pub const DEFAULT_KS: [usize; 4] = [5, 10, 20, 40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Category,
    Brand,
}

impl Attribute {
    pub const ALL: [Attribute; 2] = [Attribute::Category, Attribute::Brand];

    /// Category set, or the brand as a singleton (empty when missing).
    pub fn of(self, item: &Item) -> BTreeSet<&str> {
        match self {
            Attribute::Category => item.categories.iter().map(String::as_str).collect(),
            Attribute::Brand => item.brand.iter().map(String::as_str).collect(),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Category => "category",
            Attribute::Brand => "brand",
        })
    }
}

/// 1.0 if `target` is among the first `k` items.
pub fn recall_at_k<S: AsRef<str>>(recommended: &[S], target: &str, k: usize) -> f64 {
    let hit = recommended.iter().take(k).any(|r| r.as_ref() == target);
    if hit {
        1.0
    } else {
        0.0
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Diversity of exactly `k` attribute sets; `None` when `sets.len() != k`.
pub fn diversity_of_sets<T: Ord>(sets: &[BTreeSet<T>], k: usize) -> Result<Option<f64>> {
    if k < 2 {
        return Err(Error::invalid(format!("Diversity@K needs K >= 2, got {k}")));
    }
    if sets.len() != k {
        return Ok(None);
    }
    let mut sim = 0.0;
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            if i != j {
                sim += jaccard(a, b);
            }
        }
    }
    Ok(Some(1.0 - sim / (k * (k - 1)) as f64))
}

/// Coverage of the history union by the recommendation union; `None` when
/// the history union is empty.
pub fn coverage_of_sets<T: Ord + Clone>(recommended: &[BTreeSet<T>], history: &[BTreeSet<T>]) -> Option<f64> {
    let hist: BTreeSet<&T> = history.iter().flatten().collect();
    if hist.is_empty() {
        return None;
    }
    let rec: BTreeSet<&T> = recommended.iter().flatten().collect();
    Some(rec.intersection(&hist).count() as f64 / hist.len() as f64)
}

fn attribute_sets<'c, S: AsRef<str>>(items: &[S], catalog: &'c Catalog, attr: Attribute) -> Result<Vec<BTreeSet<&'c str>>> {
    items
        .iter()
        .map(|id| {
            catalog
                .get(id.as_ref())
                .map(|item| attr.of(item))
                .ok_or_else(|| Error::UnknownItem(id.as_ref().to_string()))
        })
        .collect()
}

pub fn diversity_at_k<S: AsRef<str>>(recommended: &[S], catalog: &Catalog, attr: Attribute, k: usize) -> Result<Option<f64>> {
    let top = &recommended[..recommended.len().min(k)];
    diversity_of_sets(&attribute_sets(top, catalog, attr)?, k)
}

pub fn coverage_at_k<S: AsRef<str>>(
    recommended: &[S],
    history: &[S],
    catalog: &Catalog,
    attr: Attribute,
    k: usize,
) -> Result<Option<f64>> {
    let top = &recommended[..recommended.len().min(k)];
    Ok(coverage_of_sets(
        &attribute_sets(top, catalog, attr)?,
        &attribute_sets(history, catalog, attr)?,
    ))
}

/// One evaluated user: history, target and the recommendation for each K.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user_id: String,
    pub history: Vec<String>,
    pub target: String,
    pub lists: BTreeMap<usize, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Diversity,
    Coverage,
}

/// One aggregate keyed by (metric, K, attribute).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attribute: Option<Attribute>,
    /// Mean over qualifying users; `None` when no user qualified.
    pub value: Option<f64>,
    pub users: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetricRow {
    pub user_id: String,
    pub target: String,
    pub k: usize,
    pub recall: f64,
    pub diversity_category: Option<f64>,
    pub diversity_brand: Option<f64>,
    pub coverage_category: Option<f64>,
    pub coverage_brand: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_queries: usize,
    pub ks: Vec<usize>,
    pub users: usize,
    pub rows: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_user: Option<Vec<UserMetricRow>>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric, k: usize, attribute: Option<Attribute>) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k && r.attribute == attribute)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.get(Metric::Recall, k, None).and_then(|r| r.value)
    }

    pub fn diversity(&self, k: usize, attr: Attribute) -> Option<f64> {
        self.get(Metric::Diversity, k, Some(attr)).and_then(|r| r.value)
    }

    pub fn coverage(&self, k: usize, attr: Attribute) -> Option<f64> {
        self.get(Metric::Coverage, k, Some(attr)).and_then(|r| r.value)
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    users: usize,
    skipped: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        match v {
            Some(v) => {
                self.sum += v;
                self.users += 1;
            }
            None => self.skipped += 1,
        }
    }

    fn row(&self, metric: Metric, k: usize, attribute: Option<Attribute>) -> MetricRow {
        MetricRow {
            metric,
            k,
            attribute,
            value: (self.users > 0).then(|| self.sum / self.users as f64),
            users: self.users,
            skipped: self.skipped,
        }
    }
}

/// Computes every metric for every K over precomputed recommendation lists.
pub fn aggregate(
    outcomes: &[UserOutcome],
    catalog: &Catalog,
    ks: &[usize],
    num_queries: usize,
    keep_per_user: bool,
) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    let mut per_user = Vec::new();
    for &k in ks {
        let mut recall = Mean::default();
        let mut div: BTreeMap<Attribute, Mean> = BTreeMap::new();
        let mut cov: BTreeMap<Attribute, Mean> = BTreeMap::new();
        for o in outcomes {
            let list = o
                .lists
                .get(&k)
                .ok_or_else(|| Error::invalid(format!("user `{}` has no list for K={k}", o.user_id)))?;
            let r = recall_at_k(list, &o.target, k);
            recall.add(Some(r));
            let mut vals = [None; 4];
            for (a, attr) in Attribute::ALL.into_iter().enumerate() {
                let d = if k >= 2 { diversity_at_k(list, catalog, attr, k)? } else { None };
                let c = coverage_at_k(list, &o.history, catalog, attr, k)?;
                div.entry(attr).or_default().add(d);
                cov.entry(attr).or_default().add(c);
                vals[a] = d;
                vals[2 + a] = c;
            }
            if keep_per_user {
                per_user.push(UserMetricRow {
                    user_id: o.user_id.clone(),
                    target: o.target.clone(),
                    k,
                    recall: r,
                    diversity_category: vals[0],
                    diversity_brand: vals[1],
                    coverage_category: vals[2],
                    coverage_brand: vals[3],
                });
            }
        }
        rows.push(recall.row(Metric::Recall, k, None));
        for attr in Attribute::ALL {
            rows.push(div[&attr].row(Metric::Diversity, k, Some(attr)));
        }
        for attr in Attribute::ALL {
            rows.push(cov[&attr].row(Metric::Coverage, k, Some(attr)));
        }
    }
    Ok(MetricsReport {
        num_queries,
        ks: ks.to_vec(),
        users: outcomes.len(),
        rows,
        per_user: keep_per_user.then_some(per_user),
    })
}

/// Runs the recommender on every test user (history = all but the last
/// item, target = last item) and aggregates the metrics. Users are
/// processed in parallel on the current rayon pool; results are in user
/// order.
pub fn evaluate_split(
    sequences: &[UserSequence],
    recommender: &Recommender<'_>,
    ks: &[usize],
    keep_per_user: bool,
) -> Result<MetricsReport> {
    let test: Vec<&UserSequence> = sequences.iter().filter(|s| s.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K set must be non-empty with every K >= 1".into()));
    }
    let depth = *ks.iter().max().expect("non-empty");
    let outcomes: Vec<UserOutcome> = test
        .par_iter()
        .map(|seq| {
            let history = seq.history().to_vec();
            let target = seq.target().expect("sequences have >= 2 items").clone();
            let retrieval = recommender.retrieve(&seq.user_id, &history, depth)?;
            let mut lists = BTreeMap::new();
            for &k in ks {
                let merged = retrieval.merge(k)?;
                lists.insert(k, merged.into_iter().map(|m| m.item_id).collect());
            }
            Ok(UserOutcome {
                user_id: seq.user_id.clone(),
                history,
                target,
                lists,
            })
        })
        .collect::<Result<_>>()?;
    aggregate(
        &outcomes,
        recommender.catalog,
        ks,
        recommender.options.num_queries,
        keep_per_user,
    )
}
