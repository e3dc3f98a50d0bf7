use std::fs::File;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use tracing::info;

use dyadtalk::analytics::{parse_annotations, render_summary, Period};
use dyadtalk::app::{caption_symbols, App};
use dyadtalk::config::{ProviderMode, ServiceConfig};
use dyadtalk::domain::DyadId;

#[derive(Parser)]
#[command(
    name = "dyadtalk",
    version,
    about = "Parent-child conversation service"
)]
struct Cli {
    /// TOML config file; built-in defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    port: Option<u16>,
    #[arg(long, global = true)]
    storage: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    providers: Option<Providers>,
    #[arg(long, global = true)]
    locale_source: Option<String>,
    #[arg(long, global = true)]
    locale_target: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Providers {
    Mock,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve,
    /// Load translation memory, example translations and symbols. Paths
    /// default to the `[seed]` section of the config.
    Seed {
        #[arg(long)]
        translation_memory: Option<PathBuf>,
        #[arg(long)]
        examples: Option<PathBuf>,
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Recompute embeddings for every reference collection.
    Reembed,
    /// Usage report over the stored session logs.
    Report {
        #[arg(long, requires = "to")]
        from: Option<NaiveDate>,
        #[arg(long, requires = "from")]
        to: Option<NaiveDate>,
        /// JSONL file of human-coded guide adoption annotations.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Write the full report as JSON instead of the text summary.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// One dyad's conversations on one day, as plain text.
    ExportTranscript {
        #[arg(long)]
        dyad: String,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate captions for symbols that lack one (JSONL in, JSONL out).
    CaptionSymbols {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(std::env::vars())?;
    if let Some(port) = cli.port {
        config.server.port = port;
    }
    if let Some(storage) = &cli.storage {
        config.storage.path = storage.clone();
    }
    if let Some(providers) = cli.providers {
        config.providers.mode = match providers {
            Providers::Mock => ProviderMode::Mock,
            Providers::Live => ProviderMode::Live,
        };
    }
    if let Some(source) = &cli.locale_source {
        config.locale.source = source.clone();
    }
    if let Some(target) = &cli.locale_target {
        config.locale.target = target.clone();
    }
    config.validate("", "command line")?;
    Ok(config)
}

fn write_output(output: Option<&PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

async fn serve(app: App) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", app.config.server.host, app.config.server.port)
        .parse()
        .context("server.host must be an IP address")?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    info!(%addr, "listening");
    axum::serve(listener, dyadtalk_server::router(Arc::new(app)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let config = load_config(&cli)?;

    if let Command::CaptionSymbols { input, output } = &cli.command {
        // Needs providers only; no storage is opened.
        let app = App::open(ServiceConfig {
            storage: dyadtalk::config::StorageSection {
                path: std::env::temp_dir().join("dyadtalk-caption"),
            },
            ..config
        })?;
        let reader = File::open(input).with_context(|| format!("reading {}", input.display()))?;
        let writer =
            File::create(output).with_context(|| format!("writing {}", output.display()))?;
        let written = caption_symbols(&app.engine.services().providers.completion, reader, writer)?;
        println!("captioned {written} symbols into {}", output.display());
        return Ok(());
    }

    let app = App::open(config)?;
    match cli.command {
        Command::Serve => serve(app).await?,
        Command::Seed {
            translation_memory,
            examples,
            symbols,
        } => {
            let seed = &app.config.seed;
            let translation_memory = translation_memory.or(seed.translation_memory.clone());
            let examples = examples.or(seed.example_translations.clone());
            let symbols = symbols.or(seed.symbols.clone());
            if translation_memory.is_none() && examples.is_none() && symbols.is_none() {
                bail!("nothing to seed: pass file paths or set them in the [seed] config section");
            }
            let summary = app.seed(
                translation_memory.as_deref(),
                examples.as_deref(),
                symbols.as_deref(),
            )?;
            println!(
                "translation memory: {} added, {} total\nexample translations: {} added\nsymbols: {} added",
                summary.memory_added, summary.memory_size, summary.examples_added, summary.symbols_added
            );
        }
        Command::Reembed => {
            for (collection, count) in app.reembed()? {
                println!("{collection}: {count} entries re-embedded");
            }
        }
        Command::Report {
            from,
            to,
            annotations,
            json,
            output,
        } => {
            let period = match (from, to) {
                (Some(from), Some(to)) if from <= to => Some(Period { from, to }),
                (Some(_), Some(_)) => bail!("--from must not be after --to"),
                _ => None,
            };
            let annotations = match annotations {
                Some(path) => parse_annotations(
                    File::open(&path).with_context(|| format!("reading {}", path.display()))?,
                )
                .with_context(|| format!("in {}", path.display()))?,
                None => Vec::new(),
            };
            let report = app.report(period, &annotations)?;
            let text = if json {
                serde_json::to_string_pretty(&report)? + "\n"
            } else {
                render_summary(&report)
            };
            write_output(output.as_ref(), &text)?;
        }
        Command::ExportTranscript { dyad, date, output } => {
            let text = app.transcript(&DyadId::new(dyad), date)?;
            write_output(output.as_ref(), &text)?;
        }
        Command::CaptionSymbols { .. } => unreachable!("handled above"),
    }
    Ok(())
}
