use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use cpe_core::backend::{scripted, BackendConfig, DEFAULT_MODEL_ID};
use cpe_core::demo::{demo_rows, demo_script, DEMO_SEED};
use cpe_core::evalsuite::session_stats;
use cpe_core::ingest::DataFormat;
use cpe_core::orchestrator::VisibleMessage;
use cpe_core::promptkit::TargetTemplate;
use cpe_core::templates::TemplateSet;
use cpe_core::SessionConfig;
use cpe_service::export::transcript_jsonl;
use cpe_service::http::{router, AppState};
use cpe_service::manager::{BusyPolicy, ManagerConfig, PromptKind, SessionManager};
use cpe_service::store::EventStore;
use cpe_service::template_dir::{load_template_dir, write_template_dir};

/// Build a task prompt through a guided chat, in the terminal or over HTTP.
#[derive(Debug, Parser)]
#[command(name = "cpe", version)]
struct Cli {
    /// Data file with a `text` column (CSV) or field (JSONL).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Data format; inferred from the file extension when omitted.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
    /// `scripted:<file>` (JSON array of responses) or `remote`.
    #[arg(long, default_value = "remote")]
    chat_backend: String,
    /// Same forms as --chat-backend.
    #[arg(long, default_value = "remote")]
    target_backend: String,
    /// Target model chat format.
    #[arg(long, default_value = "generic", value_parser = TargetTemplate::NAMES)]
    template: String,
    /// Seed for example selection and evaluation order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Serve the HTTP API on this address instead of chatting in the terminal.
    #[arg(long)]
    serve: Option<SocketAddr>,
    /// Chat-completions URL of the remote chat model.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = DEFAULT_MODEL_ID)]
    model: String,
    /// Environment variable holding the chat model's bearer token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Target model URL; defaults to --endpoint.
    #[arg(long)]
    target_endpoint: Option<String>,
    /// Target model id; defaults to --model.
    #[arg(long)]
    target_model: Option<String>,
    /// Defaults to --auth-env.
    #[arg(long)]
    target_auth_env: Option<String>,
    /// Where session event logs are kept.
    #[arg(long, default_value = "cpe-data")]
    data_dir: PathBuf,
    /// Directory of system-instruction overrides (`<name>.txt`).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// JSON array of user messages to send instead of reading stdin.
    #[arg(long)]
    user_script: Option<PathBuf>,
    /// Where the terminal session writes its prompt files and transcript.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Run the built-in scripted demo session.
    #[arg(long)]
    demo: bool,
    /// Write the demo data, scripts and user messages to a directory and exit.
    #[arg(long)]
    write_demo: Option<PathBuf>,
    /// Write the built-in system instructions to a directory and exit.
    #[arg(long)]
    dump_templates: Option<PathBuf>,
    /// Let HTTP clients choose remote backends when creating sessions.
    #[arg(long)]
    allow_client_backends: bool,
    /// Make concurrent requests to one session wait instead of failing with 409.
    #[arg(long)]
    queue_busy: bool,
    #[arg(long, default_value_t = 24)]
    idle_expiry_hours: u64,
}

fn read_json_strings(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} must be a JSON array of strings", path.display()))
}

fn backend_config(
    spec: &str,
    endpoint: Option<&String>,
    model: &str,
    auth_env: Option<&String>,
) -> Result<BackendConfig> {
    if let Some(file) = spec.strip_prefix("scripted:") {
        return Ok(scripted(read_json_strings(Path::new(file))?));
    }
    if spec != "remote" {
        bail!("backend must be `scripted:<file>` or `remote`, got `{spec}`");
    }
    let endpoint = endpoint.context("a remote backend needs --endpoint")?;
    Ok(BackendConfig::remote(endpoint.clone(), model, auth_env.cloned()))
}

fn demo_csv() -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["text"])?;
    for row in demo_rows() {
        w.write_record([row.text])?;
    }
    Ok(w.into_inner()?)
}

fn write_demo(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let script = demo_script(1);
    std::fs::write(dir.join("data.csv"), demo_csv()?)?;
    std::fs::write(dir.join("chat.json"), serde_json::to_string_pretty(&script.chat)?)?;
    std::fs::write(dir.join("target.json"), serde_json::to_string_pretty(&script.target)?)?;
    std::fs::write(dir.join("user.json"), serde_json::to_string_pretty(&script.user_messages)?)?;
    println!("demo files written to {}; run with --seed {DEMO_SEED}", dir.display());
    Ok(())
}

fn print_messages(messages: &[VisibleMessage]) {
    for m in messages {
        let who = if m.notice { "notice" } else { "model" };
        if m.author != cpe_core::chatstore::Author::User {
            println!("{who}> {}\n", m.text);
        }
    }
}

fn run_terminal(cli: &Cli, manager: &SessionManager, config: SessionConfig) -> Result<()> {
    let (filename, bytes, scripted_users, seed) = if cli.demo {
        let script = demo_script(1);
        ("demo.csv".to_string(), demo_csv()?, Some(script.user_messages), DEMO_SEED)
    } else {
        let path = cli.data.as_ref().context("--data is required (or use --demo / --serve)")?;
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let users = cli.user_script.as_deref().map(read_json_strings).transpose()?;
        (path.display().to_string(), bytes, users, cli.seed)
    };
    let format = cli.format.as_deref().and_then(DataFormat::parse);

    let id = manager.create_session(config)?;
    println!("session {id}\n");
    let summary = manager.upload_data(&id, &filename, &bytes, format, seed)?;
    println!("{} chat examples, {} evaluation examples\n", summary.chat_count, summary.eval_count);
    print_messages(&summary.messages);

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut scripted_iter = scripted_users.map(Vec::into_iter);
    while !manager.chat(&id)?.ended {
        let text = match scripted_iter.as_mut() {
            Some(it) => match it.next() {
                Some(t) => {
                    println!("you> {t}\n");
                    t
                }
                None => break,
            },
            None => {
                print!("you> ");
                std::io::stdout().flush()?;
                match lines.next() {
                    Some(line) => line?,
                    None => break,
                }
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        print_messages(&manager.post_message(&id, &text)?);
    }

    let session = manager.snapshot(&id)?;
    if !manager.chat(&id)?.ended {
        println!("conversation not finished; resume later via the HTTP API with session {id}");
        return Ok(());
    }
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("fs_prompt.txt"), manager.prompt(&id, PromptKind::Fs)?)?;
    std::fs::write(cli.out.join("zs_prompt.txt"), manager.prompt(&id, PromptKind::Zs)?)?;
    std::fs::write(cli.out.join("transcript.jsonl"), transcript_jsonl(&session))?;
    let stats = session_stats(&session)?;
    println!(
        "done: {} turns, {} iterations, instruction distance {}; prompts written to {}",
        stats.turns,
        stats.iterations,
        stats.instruction_distance_chars,
        cli.out.display()
    );
    Ok(())
}

async fn serve(addr: SocketAddr, state: Arc<AppState>) -> Result<()> {
    let manager = state.manager.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let m = manager.clone();
            if let Ok(n) = tokio::task::spawn_blocking(move || m.expire_idle()).await {
                if n > 0 {
                    tracing::info!(expired = n, "idle sessions unloaded");
                }
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    if let Some(dir) = &cli.write_demo {
        return write_demo(dir);
    }
    let templates = match &cli.templates {
        Some(dir) => load_template_dir(dir)?,
        None => TemplateSet::default(),
    };
    if let Some(dir) = &cli.dump_templates {
        write_template_dir(dir, &templates)?;
        return Ok(());
    }

    let config = if cli.demo {
        demo_script(1).config()
    } else {
        let target_endpoint = cli.target_endpoint.as_ref().or(cli.endpoint.as_ref());
        let target_model = cli.target_model.as_deref().unwrap_or(&cli.model);
        let target_auth = cli.target_auth_env.as_ref().or(cli.auth_env.as_ref());
        SessionConfig {
            chat: backend_config(&cli.chat_backend, cli.endpoint.as_ref(), &cli.model, cli.auth_env.as_ref())?,
            target: backend_config(&cli.target_backend, target_endpoint, target_model, target_auth)?,
            template: TargetTemplate::by_name(&cli.template).context("unknown template")?,
        }
    };

    let store = EventStore::open(&cli.data_dir)?;
    let manager_config = ManagerConfig {
        idle_expiry: Duration::from_secs(cli.idle_expiry_hours * 3600),
        busy: if cli.queue_busy { BusyPolicy::Queue } else { BusyPolicy::Reject },
    };
    let manager = Arc::new(SessionManager::new(store, templates, manager_config));

    match cli.serve {
        Some(addr) => {
            let state = Arc::new(AppState {
                manager,
                defaults: config,
                allow_client_backends: cli.allow_client_backends,
                default_seed: if cli.demo { DEMO_SEED } else { cli.seed },
            });
            tokio::runtime::Runtime::new()?.block_on(serve(addr, state))
        }
        None => run_terminal(&cli, &manager, config),
    }
}
