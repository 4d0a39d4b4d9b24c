use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use prc_core::backend::{CompletionBackend, OpenAiBackend, OpenAiConfig, RecordingBackend, ReplayBackend};
use prc_core::harness::{diff_golden, LoadedScenario};
use prc_core::service::{serve, Service, ServiceConfig};
use prc_core::session::Mode;
use prc_core::store::DirStore;

#[derive(Parser)]
#[command(name = "prc", about = "Prompt refinement control middleware")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Live,
    Replay,
    Record,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP + event-stream service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value_t = BackendKind::Live)]
        backend: BackendKind,
        /// Fixture directory (required for replay and record).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Fixture file name inside the directory; defaults to the only one
        /// present (replay) or `recorded.json` (record).
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value = "dynamic")]
        mode: Mode,
        /// Persist sessions under this directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Run a scenario headlessly and compare its transcript with a golden file.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        /// Rewrite the golden file instead of comparing.
        #[arg(long)]
        update_golden: bool,
    },
}

fn pick_fixture(dir: &Path, name: Option<&str>) -> Result<PathBuf, String> {
    if !dir.is_dir() {
        return Err(format!("fixtures directory {} does not exist", dir.display()));
    }
    if let Some(name) = name {
        return Ok(dir.join(name));
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(format!("no fixture (*.json) in {}", dir.display())),
        n => Err(format!("{n} fixtures in {}; choose one with --fixture", dir.display())),
    }
}

fn build_backend(kind: BackendKind, fixtures: Option<&Path>, fixture: Option<&str>) -> Result<Arc<dyn CompletionBackend>, String> {
    match kind {
        BackendKind::Live => Ok(Arc::new(OpenAiBackend::new(OpenAiConfig::from_env()))),
        BackendKind::Replay => {
            let dir = fixtures.ok_or("--fixtures is required with --backend replay")?;
            let path = pick_fixture(dir, fixture)?;
            let backend = ReplayBackend::from_file(&path).map_err(|e| e.to_string())?;
            Ok(Arc::new(backend))
        }
        BackendKind::Record => {
            let dir = fixtures.ok_or("--fixtures is required with --backend record")?;
            std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
            let name = fixture.unwrap_or("recorded.json");
            let scenario = name.trim_end_matches(".json").to_string();
            let live = OpenAiBackend::new(OpenAiConfig::from_env());
            Ok(Arc::new(RecordingBackend::new(live, scenario, dir.join(name))))
        }
    }
}

fn replay(scenario: &Path, golden: &Path, update: bool) -> Result<(), String> {
    let loaded = LoadedScenario::load(scenario).map_err(|e| e.to_string())?;
    let transcript = loaded.run().map_err(|e| e.to_string())?.to_text();
    if update {
        std::fs::write(golden, &transcript).map_err(|e| format!("cannot write {}: {e}", golden.display()))?;
        eprintln!("wrote {}", golden.display());
        return Ok(());
    }
    let expected = std::fs::read_to_string(golden).map_err(|e| format!("cannot read {}: {e}", golden.display()))?;
    diff_golden(&expected, &transcript).map_err(|m| m.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Replay {
            scenario,
            golden,
            update_golden,
        } => replay(&scenario, &golden, update_golden),
        Cmd::Serve {
            port,
            backend,
            fixtures,
            fixture,
            mode,
            store,
        } => async {
            let backend = build_backend(backend, fixtures.as_deref(), fixture.as_deref())?;
            let store = match store {
                Some(dir) => Some(DirStore::open(&dir).map_err(|e| format!("cannot open store {}: {e}", dir.display()))?),
                None => None,
            };
            let config = ServiceConfig {
                default_mode: mode,
                store,
                ..ServiceConfig::default()
            };
            let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
                .await
                .map_err(|e| format!("cannot bind port {port}: {e}"))?;
            tracing::info!(port, "listening");
            serve(Service::new(backend, config), listener).await.map_err(|e| e.to_string())
        }
        .await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
