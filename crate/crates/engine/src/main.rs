use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use drape_core::backend::mock::MockTransport;
use drape_core::config::EngineConfig;
use drape_core::eval::{emit_report, load_corpus, parse_corpus, ReportFormat};
use drape_core::exec::Exec;
use drape_core::resources::CORPUS_JSONL;
use drape_core::session::{replay_log, Author};
use drape_engine::eval_cmd::{parse_backend, run_eval, EvalTaskArg};
use drape_engine::{api, mock_server, open_app};

#[derive(Parser)]
#[command(name = "engine", version, about = "Conversational garment editing engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the session HTTP API.
    Serve {
        /// TOML config; defaults to all-mock backends under ./drape-data.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Rebuild a session from its event log and print the transcript.
    Replay {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = ReplayFormat::Text)]
        format: ReplayFormat,
    },
    /// Score task splitting and/or classification of a chat backend.
    Eval {
        /// JSON-lines corpus; the shipped 220-case corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// rules | mock | scripted | http(s)://chat-endpoint | scenario.json
        #[arg(long, default_value = "rules")]
        backend: String,
        #[arg(long, value_enum, default_value_t = EvalTaskArg::All)]
        task: EvalTaskArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
        /// Score cases one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Serve the deterministic mock model servers over HTTP.
    MockBackends {
        #[arg(long, default_value = "127.0.0.1:9100")]
        bind: String,
        /// Scenario JSON; the built-in scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReplayFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_filter = match cli.command {
        Command::Eval { .. } | Command::Replay { .. } => "error",
        _ => "warn,drape_core=info",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| default_filter.into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Eval {
            corpus,
            backend,
            task,
            format,
            sequential,
        } => eval(corpus, &backend, task, format, sequential),
        other => match run(other) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

/// Exits nonzero only when the corpus cannot be loaded.
fn eval(corpus: Option<PathBuf>, backend: &str, task: EvalTaskArg, format: FormatArg, sequential: bool) -> ExitCode {
    let cases = match &corpus {
        Some(path) => load_corpus(path),
        None => parse_corpus(CORPUS_JSONL),
    };
    let cases = match cases {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
    let report = parse_backend(backend, &cases).and_then(|b| run_eval(backend, &cases, b, task, exec));
    match report {
        Ok(report) => {
            let format = match format {
                FormatArg::Table => ReportFormat::Table,
                FormatArg::Json => ReportFormat::Json,
            };
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", emit_report(&report, format).trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("warning: backend unusable, nothing scored: {e}");
            ExitCode::SUCCESS
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Serve { config, bind } => {
            let mut cfg = match &config {
                Some(p) => EngineConfig::load(p)?,
                None => EngineConfig::default(),
            };
            if let Some(b) = bind {
                cfg.server.bind = b;
            }
            let addr = cfg.server.bind.clone();
            let state = open_app(cfg)?;
            serve(&addr, api::router(state))
        }
        Command::MockBackends { bind, scenario } => {
            let mock = match scenario {
                Some(p) => MockTransport::from_file(&p).map_err(anyhow::Error::msg)?,
                None => MockTransport::builtin(),
            };
            serve(&bind, mock_server::router(Arc::new(mock)))
        }
        Command::Replay { log, format } => {
            let (session, _) = replay_log(&log).with_context(|| format!("replaying {}", log.display()))?;
            match format {
                ReplayFormat::Json => println!("{}", serde_json::to_string_pretty(&session)?),
                ReplayFormat::Text => {
                    println!("session {} ({})", session.id, session.state);
                    for (name, hash) in &session.image_slots {
                        println!("  slot {name}: {hash}");
                    }
                    for turn in &session.turns {
                        let who = match turn.author {
                            Author::User => "user",
                            Author::Assistant => "assistant",
                        };
                        println!("[{}] {who}: {}", turn.timestamp, turn.text);
                        for a in &turn.attachments {
                            let task = a.task_number.map(|n| format!(" (task {n})")).unwrap_or_default();
                            println!("    {:?}{task}: {}", a.kind, a.hash);
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Eval { .. } => unreachable!("handled in main"),
    }
}

fn serve(addr: &str, app: axum::Router) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
