//! `cbi`: ingest, ask, repl, eval, serve, fetch.
//!
//! Exit codes: 0 success; 1 a check failed (rejection cap exceeded, corpus
//! accuracy below 0.90, or `ask` produced an error turn); 2 `ask` found no
//! matching command (clap also uses 2 for usage errors); 3 configuration,
//! data or I/O failure.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use cbi_cli::config::{self, DownloadConfig};
use cbi_cli::report::{self, Format};
use cbi_cli::{api, fetch};
use cbi_core::table::LoadOptions;
use cbi_core::{evaluate, parse_corpus, ChatService, ReplyKind, SessionStore};
use clap::{Parser, Subcommand};

/// Minimum corpus accuracy for `eval` to succeed.
const EVAL_THRESHOLD: f64 = 0.90;

#[derive(Debug, Parser)]
#[command(name = "cbi", version, about = "Conversational exploration of road-accident tables")]
struct Cli {
    /// Directory holding `<table>.csv` for every catalog table.
    #[arg(long, global = true, env = "CBI_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Use the bundled fixture tables instead of --data-dir.
    #[arg(long, global = true, env = "CBI_FIXTURES")]
    fixtures: bool,
    /// Catalog file; the built-in catalog when omitted.
    #[arg(long, global = true, env = "CBI_CATALOG")]
    catalog: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the CSV files against the catalog.
    Ingest,
    /// Answer one question.
    Ask { question: String },
    /// Interactive dialogue bound to a logged session.
    Repl {
        #[arg(long, env = "CBI_LOG_FILE", default_value = "sessions.jsonl")]
        log_file: PathBuf,
        #[arg(long, env = "CBI_USER", default_value = "local")]
        user: String,
        /// Resume this session instead of starting one.
        #[arg(long)]
        session: Option<String>,
    },
    /// Matcher accuracy over a labelled corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "CBI_LOG_FILE", default_value = "sessions.jsonl")]
        log_file: PathBuf,
        #[arg(long, env = "CBI_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "CBI_BIND", default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
    /// Download one year of source files into --data-dir.
    Fetch {
        #[arg(long, env = "CBI_DOWNLOAD_CONFIG")]
        config: PathBuf,
        #[arg(long)]
        year: i32,
    },
}

impl Cli {
    fn data_dir(&self) -> PathBuf {
        if self.fixtures {
            config::fixtures_dir()
        } else {
            self.data_dir.clone()
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("CBI_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let data_dir = cli.data_dir();
    let mut stdout = std::io::stdout().lock();
    match &cli.command {
        Command::Ingest => {
            let catalog = config::catalog(cli.catalog.as_deref())?;
            let reports = config::inspect(&data_dir, &catalog)?;
            let (text, ok) = report::ingest(&reports, LoadOptions::default().max_reject_fraction, cli.format);
            stdout.write_all(text.as_bytes())?;
            Ok(if ok { 0 } else { 1 })
        }
        Command::Ask { question } => {
            let assistant = config::assistant(&data_dir, cli.catalog.as_deref())?;
            let outcome = assistant.ask(question);
            stdout.write_all(report::ask(&outcome, cli.format).as_bytes())?;
            Ok(match outcome.reply.kind {
                ReplyKind::NoMatch => 2,
                ReplyKind::Error => 1,
                ReplyKind::Answer | ReplyKind::Clarification => 0,
            })
        }
        Command::Eval { corpus } => {
            let catalog = config::catalog(cli.catalog.as_deref())?;
            let registry = cbi_core::builtin_registry();
            let text = std::fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let entries = parse_corpus(&text)?;
            let matcher = cbi_core::Matcher::new(&registry, &catalog);
            let result = evaluate(&matcher, &entries);
            stdout.write_all(report::eval(&result, cli.format).as_bytes())?;
            Ok(if result.accuracy() >= EVAL_THRESHOLD { 0 } else { 1 })
        }
        Command::Repl { log_file, user, session } => {
            let service = service(&data_dir, cli.catalog.as_deref(), log_file)?;
            repl(&service, user, session.as_deref(), cli.format)?;
            Ok(0)
        }
        Command::Serve { log_file, port, bind } => {
            let service = service(&data_dir, cli.catalog.as_deref(), log_file)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(Arc::new(service), (*bind, *port).into()))?;
            Ok(0)
        }
        Command::Fetch { config, year } => {
            let cfg = DownloadConfig::read(config)?;
            let fetched = fetch::fetch_year(&cfg, *year, &data_dir)?;
            for f in &fetched {
                writeln!(
                    stdout,
                    "{} {}: {} ({})",
                    f.source.table,
                    f.sha256,
                    f.path.display(),
                    if f.cached { "cached" } else { "downloaded" }
                )?;
            }
            if let Some(f) = fetched.iter().find(|f| f.source.table == "characteristics") {
                let catalog = config::catalog(cli.catalog.as_deref())?;
                let (rows, removed) = fetch::missing_in(&f.path, "characteristics", "atm", &catalog)?;
                tracing::info!(year, rows, removed, "missing weather values");
                writeln!(stdout, "year {year}: atm missing in {removed} of {rows} accidents")?;
            }
            Ok(0)
        }
    }
}

fn service(data_dir: &Path, catalog: Option<&Path>, log_file: &Path) -> anyhow::Result<ChatService> {
    let assistant = config::assistant(data_dir, catalog)?;
    let store = SessionStore::open(log_file).with_context(|| format!("opening {}", log_file.display()))?;
    if store.truncated_bytes() > 0 {
        tracing::warn!("dropped {} bytes of a torn final record", store.truncated_bytes());
    }
    Ok(ChatService::new(Arc::new(assistant), Arc::new(store)))
}

fn repl(service: &ChatService, user: &str, session: Option<&str>, format: Format) -> anyhow::Result<()> {
    let id = match session {
        Some(s) => service.store.summary(s)?.session,
        None => service.store.create_session(user)?.session,
    };
    eprintln!("session {id}; empty line or :quit to leave");
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text == ":quit" {
            break;
        }
        let turn = service.send(&id, user, text, None)?;
        match format {
            Format::Text => {
                writeln!(stdout, "{}", turn.reply.text)?;
                if !turn.reply.suggestions.is_empty() {
                    writeln!(stdout, "  ({})", turn.reply.suggestions.join(" | "))?;
                }
            }
            Format::Json => writeln!(stdout, "{}", serde_json::to_string(&turn.reply)?)?,
        }
        stdout.flush()?;
    }
    Ok(())
}
