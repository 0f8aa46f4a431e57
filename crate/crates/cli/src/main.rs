use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use queryrec::config::PipelineConfig;
use queryrec::evaluate::{Attribute, MetricsReport};
use queryrec::pipeline::{self, UserSelection};
use queryrec::synth::{self, SynthConfig};
use queryrec::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;

#[derive(Parser)]
#[command(name = "queryrec", version, about = "Recommend items by generating and searching queries")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Interactions file; overrides `paths.interactions`.
    #[arg(long, global = true)]
    interactions: Option<PathBuf>,

    /// Catalog file; overrides `paths.catalog`.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,

    /// Work directory; overrides `paths.work_dir`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Beam size(s) m, comma separated. `eval` runs once per value.
    #[arg(long, global = true, value_delimiter = ',')]
    m: Vec<usize>,

    /// Cutoff(s) K, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Vec<usize>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Drop items the user already interacted with from the hit lists.
    #[arg(long, global = true)]
    exclude_history: bool,

    /// `builtin` or `external:<command>`.
    #[arg(long, global = true)]
    generator: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        users: usize,
        #[arg(long = "data-seed", default_value_t = SynthConfig::default().seed)]
        data_seed: u64,
    },
    /// Preprocess interactions and catalog into split user sequences.
    Prepare,
    /// Fit the n-gram query generator on the train split.
    Train,
    /// Build the index and grid-search BM25 parameters on validation users.
    Tune,
    /// Recommend items for one user or all users.
    Recommend {
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        user: Option<String>,
        #[arg(long)]
        all: bool,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the test split.
    Eval {
        /// Keep per-user metric rows in the report.
        #[arg(long)]
        per_user: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::External(_) => EXIT_PROTOCOL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let (Some(i), Some(c), Some(w)) = (&g.interactions, &g.catalog, &g.work_dir) else {
                return Err(Failure::usage(
                    "pass --config or all of --interactions, --catalog and --work-dir",
                ));
            };
            PipelineConfig::new(i, c, w)
        }
    };
    if let Some(p) = &g.interactions {
        cfg.paths.interactions = p.clone();
    }
    if let Some(p) = &g.catalog {
        cfg.paths.catalog = p.clone();
    }
    if let Some(p) = &g.work_dir {
        cfg.paths.work_dir = p.clone();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if g.exclude_history {
        cfg.retrieval.exclude_history = true;
    }
    if let Some(spec) = &g.generator {
        cfg.generator.mode = spec.clone();
    }
    if let [m] = g.m.as_slice() {
        cfg.generator.num_queries = *m;
    }
    if !g.k.is_empty() {
        cfg.retrieval.ks = g.k.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_k(g: &GlobalArgs, cfg: &PipelineConfig) -> Result<usize, Failure> {
    match g.k.as_slice() {
        [] => Ok(*cfg.retrieval.ks.iter().max().expect("validated non-empty")),
        [k] => Ok(*k),
        _ => Err(Failure::usage("recommend takes a single --k")),
    }
}

fn print_summary(report: &MetricsReport) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for &k in &report.ks {
        println!(
            "m={:<3} K={:<3} recall={} div_cat={} div_brand={} cov_cat={} cov_brand={}",
            report.num_queries,
            k,
            fmt(report.recall(k)),
            fmt(report.diversity(k, Attribute::Category)),
            fmt(report.diversity(k, Attribute::Brand)),
            fmt(report.coverage(k, Attribute::Category)),
            fmt(report.coverage(k, Attribute::Brand)),
        );
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Synth { out, users, data_seed } => {
            let data = synth::generate(&SynthConfig {
                users,
                seed: data_seed,
                ..Default::default()
            })?;
            let (i, c) = synth::write_dataset(&data, &out)?;
            println!("wrote {} and {}", i.display(), c.display());
        }
        Command::Prepare => {
            let cfg = load_config(g)?;
            for (what, path) in [("catalog", &cfg.paths.catalog), ("interactions", &cfg.paths.interactions)] {
                if !path.exists() {
                    return Err(Failure::usage(format!("{what} file {} does not exist", path.display())));
                }
            }
            let manifest = pipeline::prepare(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let meta = pipeline::train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&meta).expect("metadata serializes"));
        }
        Command::Tune => {
            let cfg = load_config(g)?;
            let generator = pipeline::build_generator(&cfg)?;
            let (params, report) = pipeline::tune(&cfg, generator.as_ref())?;
            println!(
                "k1={} b={} recall@{}={:.4} ({} grid points)",
                params.k1,
                params.b,
                params.tuning_k,
                params.recall,
                report.rows.len()
            );
        }
        Command::Recommend { user, all, out } => {
            let cfg = load_config(g)?;
            let k = single_k(g, &cfg)?;
            let selection = match (user, all) {
                (Some(u), _) => UserSelection::One(u),
                (None, true) => UserSelection::All,
                (None, false) => return Err(Failure::usage("pass --user <id> or --all")),
            };
            let generator = pipeline::build_generator(&cfg)?;
            let recs = pipeline::recommend(&cfg, generator.as_ref(), &selection, k)?;
            let mut buf = Vec::new();
            for r in &recs {
                serde_json::to_writer(&mut buf, r).expect("records serialize");
                buf.push(b'\n');
            }
            match out {
                Some(path) => queryrec::io::write_atomic(&path, &buf)?,
                None => std::io::stdout()
                    .write_all(&buf)
                    .map_err(|e| Failure { code: EXIT_DATA, message: e.to_string() })?,
            }
        }
        Command::Eval { per_user } => {
            let cfg = load_config(g)?;
            let sizes = if g.m.is_empty() {
                vec![cfg.generator.num_queries]
            } else {
                g.m.clone()
            };
            let generator = pipeline::build_generator(&cfg)?;
            for report in pipeline::eval(&cfg, generator.as_ref(), &sizes, per_user)? {
                print_summary(&report);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::debug!("exiting with code {}", f.code);
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
