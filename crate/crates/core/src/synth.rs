//! Synthetic multi-interest dataset.
//!
//! Each category owns a disjoint vocabulary of made-up words, a few brands
//! and a few subcategories. Item titles combine a brand with words from
//! their category. Every user draws a handful of categories as interests
//! and buys popular items from them, so sequences mix several interests.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{InteractionEvent, Item};
use crate::error::{Error, Result};
use crate::io::write_jsonl;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub categories: usize,
    pub interests_per_user: usize,
    pub items_per_category: usize,
    pub words_per_category: usize,
    pub brands_per_category: usize,
    pub subcategories: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Exponent of the Zipf popularity within a category.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            categories: 10,
            interests_per_user: 3,
            items_per_category: 100,
            words_per_category: 30,
            brands_per_category: 6,
            subcategories: 4,
            min_events: 6,
            max_events: 15,
            popularity_skew: 1.0,
            seed: 2023,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub items: Vec<Item>,
    pub events: Vec<InteractionEvent>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

struct WordMint {
    used: HashSet<String>,
}

impl WordMint {
    fn mint(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let word: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
                .collect();
            if self.used.insert(word.clone()) {
                return word;
            }
        }
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.items_per_category == 0 || self.users == 0 {
            return Err(Error::Config("synthetic dataset needs users, categories and items".into()));
        }
        if self.interests_per_user == 0 || self.interests_per_user > self.categories {
            return Err(Error::Config("interests_per_user must lie in 1..=categories".into()));
        }
        if self.words_per_category < 4 || self.brands_per_category == 0 || self.subcategories == 0 {
            return Err(Error::Config("need >= 4 words, >= 1 brand and >= 1 subcategory per category".into()));
        }
        if self.min_events < 2 || self.max_events < self.min_events {
            return Err(Error::Config("event counts must satisfy 2 <= min <= max".into()));
        }
        Ok(())
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mint = WordMint { used: HashSet::new() };
    let mut items = Vec::with_capacity(cfg.categories * cfg.items_per_category);
    let mut titles = HashSet::new();
    // Item indices per category, most popular first.
    let mut by_category: Vec<Vec<usize>> = Vec::with_capacity(cfg.categories);

    for c in 0..cfg.categories {
        let category = capitalize(&mint.mint(&mut rng));
        let words: Vec<String> = (0..cfg.words_per_category).map(|_| mint.mint(&mut rng)).collect();
        let brands: Vec<String> = (0..cfg.brands_per_category)
            .map(|_| capitalize(&mint.mint(&mut rng)))
            .collect();
        let heads: Vec<String> = (0..cfg.subcategories).map(|_| mint.mint(&mut rng)).collect();
        let mut members = Vec::with_capacity(cfg.items_per_category);
        let mut attempts = 0;
        while members.len() < cfg.items_per_category {
            attempts += 1;
            if attempts > cfg.items_per_category * 1000 {
                return Err(Error::Config("vocabulary too small for unique titles".into()));
            }
            let sub = rng.gen_range(0..heads.len());
            let brand = brands.choose(&mut rng).unwrap();
            let n_words = rng.gen_range(2..=3);
            let picked: Vec<&str> = index::sample(&mut rng, words.len(), n_words)
                .into_iter()
                .map(|i| words[i].as_str())
                .collect();
            let title = format!("{brand} {} {}", picked.join(" "), heads[sub]);
            if !titles.insert(title.clone()) {
                continue;
            }
            let idx = items.len();
            items.push(Item {
                item_id: format!("c{c:02}i{:04}", members.len()),
                title,
                categories: BTreeSet::from([category.clone(), format!("{category}/{}", heads[sub])]),
                brand: Some(brand.clone()),
            });
            members.push(idx);
        }
        by_category.push(members);
    }

    let popularity: Vec<f64> = (0..cfg.items_per_category)
        .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_skew))
        .collect();
    let pick_item = WeightedIndex::new(&popularity).expect("positive weights");

    let mut events = Vec::new();
    for u in 0..cfg.users {
        let user_id = format!("u{u:05}");
        let interests = index::sample(&mut rng, cfg.categories, cfg.interests_per_user).into_vec();
        let weights: Vec<f64> = interests.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let pick_interest = WeightedIndex::new(&weights).expect("positive weights");
        let n = rng.gen_range(cfg.min_events..=cfg.max_events);
        let start: i64 = 1_600_000_000 + rng.gen_range(0..1_000_000);
        for e in 0..n {
            let category = interests[pick_interest.sample(&mut rng)];
            let item = by_category[category][pick_item.sample(&mut rng)];
            events.push(InteractionEvent {
                user_id: user_id.clone(),
                item_id: items[item].item_id.clone(),
                timestamp: start + 3600 * e as i64,
            });
        }
    }
    Ok(SynthDataset { items, events })
}

/// Writes `interactions.jsonl` and `catalog.jsonl` into `dir`.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let interactions = dir.join("interactions.jsonl");
    let catalog = dir.join("catalog.jsonl");
    write_jsonl(&interactions, &dataset.events)?;
    write_jsonl(&catalog, &dataset.items)?;
    Ok((interactions, catalog))
}
