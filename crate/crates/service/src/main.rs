use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use curio_core::config::{Overrides, RunConfig};
use curio_service::{serve, AppState};

/// Serves the curio operations over HTTP/JSON.
#[derive(Parser)]
#[command(name = "curio-service", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8787")]
    bind: SocketAddr,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for persisted cards; in memory when omitted.
    #[arg(long)]
    store_root: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let args = Args::parse();
    let overrides = Overrides {
        store_root: args.store_root,
        ..Overrides::default()
    };
    let config = RunConfig::resolve(args.config.as_deref(), &overrides)?;
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    serve(listener, state).await?;
    Ok(())
}
