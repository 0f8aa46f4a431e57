//! Interaction and catalog ingestion.
//!
//! Raw inputs are line-delimited JSON. Catalog records with missing or
//! overlong titles are dropped, per-user interaction streams are ordered,
//! deduplicated and truncated into [`UserSequence`]s, and users are split
//! into train/validation/test partitions by a seeded shuffle.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::for_each_line;

/// Titles longer than this many characters are treated as noise.
pub const MAX_TITLE_CHARS: usize = 400;
/// Sequences keep at most this many of the user's most recent items.
pub const MAX_SEQUENCE_LEN: usize = 15;
/// A sequence needs one history item and one target.
pub const MIN_SEQUENCE_LEN: usize = 2;

pub const PROMPT_PREFIX: &str = "Previously, the customer has bought: ";
pub const PROMPT_SUFFIX: &str = "In the future, the customer wants to buy ";
/// Terminator appended to training lines. Tokenized as the model's EOS.
pub const EOS_MARKER: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub categories: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
}

/// Catalog keyed by item id. Iteration order is item id ascending.
pub type Catalog = BTreeMap<String, Item>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// A user's time-ordered, deduplicated item list.
///
/// Sequences fresh out of [`build_sequences`] are labelled [`Split::Train`]
/// until [`split_users`] assigns the real partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<String>,
    pub split: Split,
}

impl UserSequence {
    /// All items but the last.
    pub fn history(&self) -> &[String] {
        &self.items[..self.items.len().saturating_sub(1)]
    }

    pub fn target(&self) -> Option<&String> {
        self.items.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub user_id: String,
    pub text: String,
}

/// Result of [`load_catalog`] with per-reason drop counts.
#[derive(Debug, Clone, Default)]
pub struct CatalogLoad {
    pub catalog: Catalog,
    pub dropped_missing_title: usize,
    pub dropped_long_title: usize,
    pub dropped_duplicate_id: usize,
    pub malformed: usize,
}

impl CatalogLoad {
    pub fn dropped(&self) -> usize {
        self.dropped_missing_title + self.dropped_long_title + self.dropped_duplicate_id
    }
}

#[derive(Deserialize)]
struct RawItem {
    item_id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    categories: Option<Vec<String>>,
    #[serde(default)]
    brand: Option<String>,
}

/// Collapses internal whitespace so a title always renders on one line.
fn normalize_title(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn load_catalog(path: &Path) -> Result<CatalogLoad> {
    let mut load = CatalogLoad::default();
    for_each_line(path, |lineno, line| {
        let raw: RawItem = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                log::warn!("{}:{lineno}: skipping malformed catalog record: {e}", path.display());
                load.malformed += 1;
                return;
            }
        };
        let title = raw.title.as_deref().map(normalize_title).unwrap_or_default();
        if title.is_empty() {
            load.dropped_missing_title += 1;
            return;
        }
        if title.chars().count() > MAX_TITLE_CHARS {
            load.dropped_long_title += 1;
            return;
        }
        if load.catalog.contains_key(&raw.item_id) {
            load.dropped_duplicate_id += 1;
            return;
        }
        let categories = raw
            .categories
            .unwrap_or_default()
            .into_iter()
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        let brand = raw
            .brand
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty());
        load.catalog.insert(
            raw.item_id.clone(),
            Item {
                item_id: raw.item_id,
                title,
                categories,
                brand,
            },
        );
    })?;
    Ok(load)
}

#[derive(Debug, Clone, Default)]
pub struct InteractionLoad {
    pub events: Vec<InteractionEvent>,
    pub malformed: usize,
}

pub fn load_interactions(path: &Path) -> Result<InteractionLoad> {
    let mut load = InteractionLoad::default();
    for_each_line(path, |lineno, line| {
        match serde_json::from_str::<InteractionEvent>(line) {
            Ok(ev) if ev.timestamp >= 0 => load.events.push(ev),
            Ok(_) => {
                log::warn!("{}:{lineno}: skipping event with negative timestamp", path.display());
                load.malformed += 1;
            }
            Err(e) => {
                log::warn!("{}:{lineno}: skipping malformed interaction: {e}", path.display());
                load.malformed += 1;
            }
        }
    })?;
    Ok(load)
}

/// Result of [`build_sequences`], sequences sorted by user id.
#[derive(Debug, Clone, Default)]
pub struct SequenceBuild {
    pub sequences: Vec<UserSequence>,
    pub dropped_unknown_item: usize,
    pub dropped_short_users: usize,
}

/// Orders each user's events by (timestamp, item_id), keeps the first
/// occurrence of every item, then keeps the most recent
/// [`MAX_SEQUENCE_LEN`] items. Users left with fewer than
/// [`MIN_SEQUENCE_LEN`] items are dropped.
pub fn build_sequences(events: &[InteractionEvent], catalog: &Catalog) -> SequenceBuild {
    let mut per_user: BTreeMap<&str, Vec<(i64, &str)>> = BTreeMap::new();
    let mut build = SequenceBuild::default();
    for ev in events {
        if !catalog.contains_key(&ev.item_id) {
            build.dropped_unknown_item += 1;
            continue;
        }
        per_user
            .entry(ev.user_id.as_str())
            .or_default()
            .push((ev.timestamp, ev.item_id.as_str()));
    }
    for (user, mut evs) in per_user {
        evs.sort_unstable();
        let mut seen = HashSet::new();
        let mut items: Vec<String> = evs
            .into_iter()
            .filter(|(_, item)| seen.insert(*item))
            .map(|(_, item)| item.to_string())
            .collect();
        if items.len() > MAX_SEQUENCE_LEN {
            items.drain(..items.len() - MAX_SEQUENCE_LEN);
        }
        if items.len() < MIN_SEQUENCE_LEN {
            build.dropped_short_users += 1;
            continue;
        }
        build.sequences.push(UserSequence {
            user_id: user.to_string(),
            items,
            split: Split::Train,
        });
    }
    build
}

/// Split sizes for `n` users: floor(0.8n), floor(0.1n), remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Assigns users to train/validation/test by a seeded shuffle.
///
/// The shuffle runs over users ordered by id, so the assignment depends only
/// on the user set and the seed. Output is sorted by user id.
pub fn split_users(mut sequences: Vec<UserSequence>, seed: u64) -> Result<Vec<UserSequence>> {
    let n = sequences.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 users to form train/validation/test splits, got {n}"
        )));
    }
    sequences.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, validation, _) = split_sizes(n);
    for (pos, &idx) in order.iter().enumerate() {
        sequences[idx].split = if pos < train {
            Split::Train
        } else if pos < train + validation {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(sequences)
}

pub fn format_prompt<S: AsRef<str>>(titles: &[S]) -> Result<String> {
    if titles.is_empty() {
        return Err(Error::invalid("cannot format a prompt from an empty history"));
    }
    let mut text = String::from(PROMPT_PREFIX);
    for title in titles {
        text.push_str(title.as_ref());
        text.push_str(". ");
    }
    text.push_str(PROMPT_SUFFIX);
    Ok(text)
}

/// Looks up the titles of `items` in order.
pub fn titles_of<'a>(items: &[String], catalog: &'a Catalog) -> Result<Vec<&'a str>> {
    items
        .iter()
        .map(|id| {
            catalog
                .get(id)
                .map(|item| item.title.as_str())
                .ok_or_else(|| Error::UnknownItem(id.clone()))
        })
        .collect()
}

/// Renders the prompt for a history of item ids.
pub fn prompt_for(user_id: &str, history: &[String], catalog: &Catalog) -> Result<Prompt> {
    let titles = titles_of(history, catalog)?;
    Ok(Prompt {
        user_id: user_id.to_string(),
        text: format_prompt(&titles)?,
    })
}

/// Prompt over `i_1..i_{T-1}` followed by the title of `i_T` and [`EOS_MARKER`].
pub fn make_training_line(sequence: &UserSequence, catalog: &Catalog) -> Result<String> {
    if sequence.items.len() < MIN_SEQUENCE_LEN {
        return Err(Error::invalid(format!(
            "user `{}` has {} items; a training line needs at least {MIN_SEQUENCE_LEN}",
            sequence.user_id,
            sequence.items.len()
        )));
    }
    let titles = titles_of(&sequence.items, catalog)?;
    let (target, history) = titles.split_last().expect("length checked");
    let mut line = format_prompt(history)?;
    line.push_str(target);
    line.push_str(EOS_MARKER);
    Ok(line)
}

/// One training line per train-split user, in user id order.
pub fn training_lines(sequences: &[UserSequence], catalog: &Catalog) -> Result<Vec<String>> {
    sequences
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| make_training_line(s, catalog))
        .collect()
}
