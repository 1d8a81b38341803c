//! `speller` command line.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use speller_core::catalog::{load_catalog, CatalogFormat};
use speller_core::config::{BackendKind, Config};
use speller_core::eval::{load_eval_pairs, run_eval, EvalOptions};
use speller_core::finetune::{build_dataset_file, DatasetSpec, OutputFormat};
use speller_core::gateway::RetrieverKind;
use speller_core::pipeline::{CorrectionMode, Corrector};
use speller_core::sparse::{build_index, load_index, save_index, InvertedIndex};
use tracing_subscriber::EnvFilter;

use crate::service::{self, AppState, RequestDefaults};

#[derive(Debug, Parser)]
#[command(name = "speller", version, about = "Retrieval-augmented spelling correction for search queries")]
struct Cli {
    /// TOML config file. SPELLER_<SECTION>_<KEY> environment variables
    /// override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log filter, e.g. `info` or `speller_core=debug`. RUST_LOG wins if set.
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index from a catalog file.
    IndexBuild {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: CatalogFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print document count, vocabulary size and average document length.
    IndexInfo { index: PathBuf },
    /// Correct a single query.
    Correct {
        #[arg(long)]
        query: String,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        sources: Sources,
        #[command(flatten)]
        generation: Generation,
    },
    /// Score corrections against a labeled dataset.
    Eval {
        /// Line-delimited {input, label, has_brand, brand?} records.
        #[arg(long)]
        dataset: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// File with one fine-tuning brand per line; adds the unseen-brand slice.
        #[arg(long)]
        seen_brands: Option<PathBuf>,
        /// Include latency figures in the JSON report.
        #[arg(long)]
        with_timings: bool,
        #[command(flatten)]
        sources: Sources,
        #[command(flatten)]
        generation: Generation,
    },
    /// Write a fine-tuning dataset from labeled pairs.
    BuildFtData {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        retriever: Option<RetrieverKind>,
        /// Context items per record.
        #[arg(long)]
        k: Option<usize>,
        /// Bare training strings separated by blank lines instead of JSON lines.
        #[arg(long)]
        plain: bool,
        #[command(flatten)]
        sources: Sources,
    },
    /// Run the HTTP service.
    Serve {
        /// Listen address, e.g. 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
        #[command(flatten)]
        sources: Sources,
        #[command(flatten)]
        generation: Generation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Basic,
    Contextual,
}

#[derive(Debug, Args)]
struct Sources {
    /// Saved index file.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Catalog to index in memory when no saved index is given.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    catalog_format: Option<CatalogFormat>,
}

#[derive(Debug, Args)]
struct Generation {
    /// rag or zero_shot.
    #[arg(long)]
    mode: Option<CorrectionMode>,
    /// bm25, fuzzy_bm25 or dense_remote.
    #[arg(long)]
    retriever: Option<RetrieverKind>,
    /// mock or remote.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Retrieved items placed in the prompt.
    #[arg(long)]
    context_size: Option<usize>,
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn apply_sources(config: &mut Config, sources: &Sources) {
    if let Some(p) = &sources.index {
        config.index.path = Some(path_string(p));
    }
    if let Some(p) = &sources.catalog {
        config.catalog.path = Some(path_string(p));
    }
    if let Some(f) = sources.catalog_format {
        config.catalog.format = f;
    }
}

fn apply_generation(config: &mut Config, g: &Generation) {
    if let Some(m) = g.mode {
        config.retrieval.mode = m;
    }
    if let Some(r) = g.retriever {
        config.retrieval.retriever = r;
    }
    if let Some(b) = g.backend {
        config.backend.kind = b;
    }
    if let Some(k) = g.context_size {
        config.retrieval.context_size = k;
    }
}

fn open_index(config: &Config, sources: &Sources) -> Result<Option<Arc<InvertedIndex>>> {
    if let Some(path) = &sources.index {
        let index = load_index(path).with_context(|| format!("loading index {}", path.display()))?;
        return Ok(Some(Arc::new(index)));
    }
    Ok(config.load_index()?.map(Arc::new))
}

fn corrector(config: &Config, sources: &Sources) -> Result<Corrector> {
    let index = open_index(config, sources)?;
    let needs_index = config.retrieval.mode == CorrectionMode::Rag && config.retrieval.retriever != RetrieverKind::DenseRemote;
    if needs_index && index.is_none() {
        bail!("rag mode needs an index: pass --index or --catalog, or set index.path / catalog.path");
    }
    let retriever = Arc::new(config.build_retriever(index));
    Ok(Corrector::new(retriever, config.build_backend(), config.pipeline_config())?)
}

fn retriever_for(config: &Config) -> Option<RetrieverKind> {
    (config.retrieval.mode == CorrectionMode::Rag).then_some(config.retrieval.retriever)
}

fn load_config(path: Option<&Path>, adjust: impl FnOnce(&mut Config)) -> Result<Config> {
    let mut config = Config::load(path)?;
    adjust(&mut config);
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::IndexBuild { catalog, format, out } => {
            let loaded = load_catalog(&catalog, format)?;
            let index = build_index(&loaded.documents)?;
            save_index(&index, &out)?;
            println!(
                "indexed {} documents ({} rows rejected) into {}",
                index.doc_count(),
                loaded.rejected.len(),
                out.display()
            );
        }
        Command::IndexInfo { index } => {
            let index = load_index(&index).with_context(|| format!("loading index {}", index.display()))?;
            println!("documents {}", index.doc_count());
            println!("vocabulary {}", index.vocabulary_size());
            println!("avg_doc_length {}", index.avg_doc_length());
        }
        Command::Correct { query, json, sources, generation } => {
            let config = load_config(config_path, |c| {
                apply_sources(c, &sources);
                apply_generation(c, &generation);
            })?;
            let corrector = corrector(&config, &sources)?;
            let result = corrector.correct(&query, config.retrieval.mode, retriever_for(&config))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!("{}", result.correction);
            }
        }
        Command::Eval { dataset, report, seen_brands, with_timings, sources, generation } => {
            let config = load_config(config_path, |c| {
                apply_sources(c, &sources);
                apply_generation(c, &generation);
            })?;
            let pairs = load_eval_pairs(&dataset)?;
            let seen_brands = match seen_brands {
                Some(p) => Some(
                    fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_owned)
                        .collect::<HashSet<_>>(),
                ),
                None => None,
            };
            let corrector = corrector(&config, &sources)?;
            let options = EvalOptions { seen_brands, with_timings };
            let result = run_eval(&pairs, &corrector, config.retrieval.mode, retriever_for(&config), &options)?;
            if let Some(path) = &report {
                fs::write(path, result.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", result.render_table());
            if result.has_failures() {
                eprintln!("{} of {} pairs failed", result.failures.len(), result.pairs);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::BuildFtData { pairs, out, variant, retriever, k, plain, sources } => {
            let config = load_config(config_path, |c| {
                apply_sources(c, &sources);
                if let Some(r) = retriever {
                    c.retrieval.retriever = r;
                }
            })?;
            let format = if plain { OutputFormat::Plain } else { OutputFormat::Jsonl };
            let meta = match variant {
                Variant::Basic => build_dataset_file(&pairs, &out, DatasetSpec::Basic, format)?,
                Variant::Contextual => {
                    let index = open_index(&config, &sources)?;
                    let retriever = config.build_retriever(index);
                    let spec = DatasetSpec::Contextual {
                        retriever: &retriever,
                        kind: config.retrieval.retriever,
                        k: k.unwrap_or(config.retrieval.context_size),
                    };
                    build_dataset_file(&pairs, &out, spec, format)?
                }
            };
            println!("wrote {} records ({} skipped) to {}", meta.records, meta.skipped, out.display());
        }
        Command::Serve { bind, sources, generation } => {
            let config = load_config(config_path, |c| {
                apply_sources(c, &sources);
                apply_generation(c, &generation);
                if let Some(b) = bind {
                    c.service.bind = b;
                }
            })?;
            let corrector = Arc::new(corrector(&config, &sources)?);
            let defaults = RequestDefaults { mode: config.retrieval.mode, retriever: config.retrieval.retriever };
            let state = AppState::new(corrector, defaults, config.service.max_in_flight);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&config.service.bind)
                    .await
                    .with_context(|| format!("binding {}", config.service.bind))?;
                service::serve(listener, state, shutdown_signal()).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 on error, 2 on usage error.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
