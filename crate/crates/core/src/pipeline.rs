//! Work-directory commands: `prepare`, `train`, `tune`, `recommend`, `eval`.
//!
//! Every command reads its inputs from the configured paths and the work
//! directory and writes its artifacts atomically. Outputs depend only on
//! the inputs and the seed, so reruns are byte-identical.
//!
//! | file                 | written by | content                                   |
//! |----------------------|------------|-------------------------------------------|
//! | `catalog.jsonl`      | prepare    | retained catalog, one item per line       |
//! | `sequences.jsonl`    | prepare    | `{user_id, items, split}` per user        |
//! | `manifest.json`      | prepare    | counts, seed and preprocessing policy     |
//! | `model.json`         | train      | n-gram snapshot plus generator metadata   |
//! | `index.json`         | tune       | inverted index snapshot                   |
//! | `grid_report.tsv`    | tune       | `k1 b recall` per grid point              |
//! | `params.json`        | tune       | selected `{k1, b}` and the tuning K       |
//! | `metrics_m<m>.json`  | eval       | metrics report for beam size m            |

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{self, Catalog, Split, UserSequence};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_split, MetricsReport};
use crate::generator::external::ExternalGenerator;
use crate::generator::{BuiltinGenerator, GenerationRequest, GeneratorMode, NGramModel, QueryGenerator};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::recommend::{Recommendation, RecommendOptions, Recommender};
use crate::search::{tune_params, Bm25Params, GridReport, InvertedIndex, ValidationCase};

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const INDEX_FILE: &str = "index.json";
pub const GRID_REPORT_FILE: &str = "grid_report.tsv";
pub const PARAMS_FILE: &str = "params.json";

pub fn metrics_file(m: usize) -> String {
    format!("metrics_m{m}.json")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogCounts {
    pub kept: usize,
    pub dropped_missing_title: usize,
    pub dropped_long_title: usize,
    pub dropped_duplicate_id: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionCounts {
    pub events: usize,
    pub malformed: usize,
    pub dropped_unknown_item: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCounts {
    pub kept: usize,
    pub dropped_short: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Preprocessing choices recorded alongside the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub dedup: String,
    pub truncation: String,
    pub tie_break: String,
    pub max_title_chars: usize,
    pub min_sequence_len: usize,
    pub max_sequence_len: usize,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            dedup: "global, keep first occurrence".into(),
            truncation: "keep most recent".into(),
            tie_break: "timestamp then item_id ascending".into(),
            max_title_chars: corpus::MAX_TITLE_CHARS,
            min_sequence_len: corpus::MIN_SEQUENCE_LEN,
            max_sequence_len: corpus::MAX_SEQUENCE_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub seed: u64,
    pub catalog: CatalogCounts,
    pub interactions: InteractionCounts,
    pub users: UserCounts,
    pub policy: Policy,
}

fn work_path(cfg: &PipelineConfig, file: &str) -> PathBuf {
    cfg.paths.work_dir.join(file)
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} not found; run `{produced_by}` first",
            path.display()
        )))
    }
}

pub fn prepare(cfg: &PipelineConfig) -> Result<PrepareManifest> {
    let catalog_load = corpus::load_catalog(&cfg.paths.catalog)?;
    let interaction_load = corpus::load_interactions(&cfg.paths.interactions)?;
    let build = corpus::build_sequences(&interaction_load.events, &catalog_load.catalog);
    let sequences = corpus::split_users(build.sequences, cfg.seed)?;
    let count = |s| sequences.iter().filter(|q| q.split == s).count();
    let manifest = PrepareManifest {
        seed: cfg.seed,
        catalog: CatalogCounts {
            kept: catalog_load.catalog.len(),
            dropped_missing_title: catalog_load.dropped_missing_title,
            dropped_long_title: catalog_load.dropped_long_title,
            dropped_duplicate_id: catalog_load.dropped_duplicate_id,
            malformed: catalog_load.malformed,
        },
        interactions: InteractionCounts {
            events: interaction_load.events.len(),
            malformed: interaction_load.malformed,
            dropped_unknown_item: build.dropped_unknown_item,
        },
        users: UserCounts {
            kept: sequences.len(),
            dropped_short: build.dropped_short_users,
            train: count(Split::Train),
            validation: count(Split::Validation),
            test: count(Split::Test),
        },
        policy: Policy::default(),
    };
    write_jsonl(&work_path(cfg, CATALOG_FILE), catalog_load.catalog.values())?;
    write_jsonl(&work_path(cfg, SEQUENCES_FILE), &sequences)?;
    write_json(&work_path(cfg, MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_catalog_snapshot(cfg: &PipelineConfig) -> Result<Catalog> {
    let path = work_path(cfg, CATALOG_FILE);
    require(&path, "prepare")?;
    let items: Vec<corpus::Item> = read_jsonl(&path)?;
    Ok(items.into_iter().map(|i| (i.item_id.clone(), i)).collect())
}

pub fn load_sequences(cfg: &PipelineConfig) -> Result<Vec<UserSequence>> {
    let path = work_path(cfg, SEQUENCES_FILE);
    require(&path, "prepare")?;
    read_jsonl(&path)
}

/// Generator settings stored next to the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub order: usize,
    pub alpha: f64,
    pub history_bias: f64,
    pub gamma: f64,
    pub max_query_tokens: usize,
    pub training_lines: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub metadata: ModelMetadata,
    pub model: NGramModel,
}

pub fn train(cfg: &PipelineConfig) -> Result<ModelMetadata> {
    let catalog = load_catalog_snapshot(cfg)?;
    let sequences = load_sequences(cfg)?;
    let lines = corpus::training_lines(&sequences, &catalog)?;
    if lines.is_empty() {
        return Err(Error::invalid("the train split is empty"));
    }
    let model = NGramModel::train(&lines, cfg.generator.order, cfg.generator.alpha)?;
    let metadata = ModelMetadata {
        order: cfg.generator.order,
        alpha: cfg.generator.alpha,
        history_bias: cfg.generator.history_bias,
        gamma: cfg.generator.gamma,
        max_query_tokens: cfg.generator.max_query_tokens,
        training_lines: lines.len(),
        seed: cfg.seed,
    };
    write_json(
        &work_path(cfg, MODEL_FILE),
        &ModelFile {
            metadata: metadata.clone(),
            model,
        },
    )?;
    Ok(metadata)
}

pub fn load_model(cfg: &PipelineConfig) -> Result<ModelFile> {
    let path = work_path(cfg, MODEL_FILE);
    require(&path, "train")?;
    read_json(&path)
}

/// Builds the generator selected by the config.
pub fn build_generator(cfg: &PipelineConfig) -> Result<Box<dyn QueryGenerator>> {
    match cfg.generator_mode()? {
        GeneratorMode::Builtin => {
            let file = load_model(cfg)?;
            Ok(Box::new(BuiltinGenerator {
                model: file.model,
                history_bias: cfg.generator.history_bias,
                gamma: cfg.generator.gamma,
            }))
        }
        GeneratorMode::External(cmd) => Ok(Box::new(ExternalGenerator::spawn_with_timeout(
            &cmd,
            cfg.external_timeout(),
        )?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub k1: f64,
    pub b: f64,
    pub tuning_k: usize,
    pub num_queries: usize,
    pub validation_users: usize,
    pub recall: f64,
}

impl ParamsFile {
    pub fn params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
        }
    }
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn build_index(cfg: &PipelineConfig) -> Result<InvertedIndex> {
    let catalog = load_catalog_snapshot(cfg)?;
    let index = InvertedIndex::build(&catalog)?;
    write_json(&work_path(cfg, INDEX_FILE), &index)?;
    Ok(index)
}

pub fn load_index(cfg: &PipelineConfig) -> Result<InvertedIndex> {
    let path = work_path(cfg, INDEX_FILE);
    require(&path, "tune")?;
    read_json(&path)
}

/// Generates validation queries with the trained generator, then grid
/// searches (k1, b) on Recall@`tuning_k`.
pub fn tune(cfg: &PipelineConfig, generator: &dyn QueryGenerator) -> Result<(ParamsFile, GridReport)> {
    let catalog = load_catalog_snapshot(cfg)?;
    let sequences = load_sequences(cfg)?;
    let index = build_index(cfg)?;
    let validation: Vec<&UserSequence> = sequences.iter().filter(|s| s.split == Split::Validation).collect();
    if validation.is_empty() {
        return Err(Error::invalid("the validation split is empty"));
    }
    let report = run_pool(cfg.workers, || -> Result<GridReport> {
        use rayon::prelude::*;
        let cases: Vec<ValidationCase> = validation
            .par_iter()
            .map(|seq| {
                let history = seq.history();
                let titles = corpus::titles_of(history, &catalog)?;
                let prompt = corpus::format_prompt(&titles)?;
                let batch = generator.generate(&GenerationRequest {
                    user_id: &seq.user_id,
                    prompt: &prompt,
                    history_titles: &titles,
                    num_queries: cfg.generator.num_queries,
                    max_tokens: cfg.generator.max_query_tokens,
                })?;
                let excluded: HashSet<String> = if cfg.retrieval.exclude_history {
                    history.iter().cloned().collect()
                } else {
                    HashSet::new()
                };
                Ok(ValidationCase {
                    queries: batch.queries,
                    target: seq.target().expect("sequences have >= 2 items").clone(),
                    excluded,
                })
            })
            .collect::<Result<_>>()?;
        tune_params(&index, &cases, cfg.retrieval.tuning_k, &cfg.grid)
    })??;
    let recall = report
        .rows
        .iter()
        .find(|r| r.k1 == report.best.k1 && r.b == report.best.b)
        .map_or(0.0, |r| r.recall);
    let params = ParamsFile {
        k1: report.best.k1,
        b: report.best.b,
        tuning_k: cfg.retrieval.tuning_k,
        num_queries: cfg.generator.num_queries,
        validation_users: validation.len(),
        recall,
    };
    write_atomic(&work_path(cfg, GRID_REPORT_FILE), report.to_tsv().as_bytes())?;
    write_json(&work_path(cfg, PARAMS_FILE), &params)?;
    Ok((params, report))
}

pub fn load_params(cfg: &PipelineConfig) -> Result<ParamsFile> {
    let path = work_path(cfg, PARAMS_FILE);
    require(&path, "tune")?;
    read_json(&path)
}

/// Which users `recommend` should serve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserSelection {
    One(String),
    All,
}

/// Recommends `k` items per selected user from the user's full sequence.
pub fn recommend(
    cfg: &PipelineConfig,
    generator: &dyn QueryGenerator,
    users: &UserSelection,
    k: usize,
) -> Result<Vec<Recommendation>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let catalog = load_catalog_snapshot(cfg)?;
    let sequences = load_sequences(cfg)?;
    let index = load_index(cfg)?;
    let params = load_params(cfg)?.params();
    let selected: Vec<&UserSequence> = match users {
        UserSelection::All => sequences.iter().collect(),
        UserSelection::One(id) => vec![sequences
            .iter()
            .find(|s| &s.user_id == id)
            .ok_or_else(|| Error::UnknownUser(id.clone()))?],
    };
    let recommender = Recommender {
        generator,
        index: &index,
        catalog: &catalog,
        params,
        options: RecommendOptions {
            num_queries: cfg.generator.num_queries,
            max_query_tokens: cfg.generator.max_query_tokens,
            exclude_history: cfg.retrieval.exclude_history,
        },
    };
    run_pool(cfg.workers, || {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|s| recommender.recommend(&s.user_id, &s.items, k))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Evaluates the test split once per beam size in `beam_sizes` and writes
/// one report per size.
pub fn eval(
    cfg: &PipelineConfig,
    generator: &dyn QueryGenerator,
    beam_sizes: &[usize],
    keep_per_user: bool,
) -> Result<Vec<MetricsReport>> {
    if beam_sizes.is_empty() || beam_sizes.contains(&0) {
        return Err(Error::Config("beam sizes must be non-empty and >= 1".into()));
    }
    let catalog = load_catalog_snapshot(cfg)?;
    let sequences = load_sequences(cfg)?;
    let index = load_index(cfg)?;
    let params = load_params(cfg)?.params();
    let mut reports = Vec::with_capacity(beam_sizes.len());
    for &m in beam_sizes {
        let recommender = Recommender {
            generator,
            index: &index,
            catalog: &catalog,
            params,
            options: RecommendOptions {
                num_queries: m,
                max_query_tokens: cfg.generator.max_query_tokens,
                exclude_history: cfg.retrieval.exclude_history,
            },
        };
        let report = run_pool(cfg.workers, || {
            evaluate_split(&sequences, &recommender, &cfg.retrieval.ks, keep_per_user)
        })??;
        write_json(&work_path(cfg, &metrics_file(m)), &report)?;
        reports.push(report);
    }
    Ok(reports)
}
