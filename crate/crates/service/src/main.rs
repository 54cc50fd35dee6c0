use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use emoc_service::{router, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "emoc-service", about = "Active-learning annotation service")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory holding the session logs.
    #[arg(long, default_value = "emoc-state")]
    state_dir: PathBuf,
    /// Origin allowed to call the API from a browser, or `*`.
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Milliseconds a request waits for scoring or an update before
    /// answering 202.
    #[arg(long, default_value_t = 5000)]
    max_wait_ms: u64,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    if let Some(origin) = &args.cors_origin {
        if origin != "*" {
            axum::http::HeaderValue::from_str(origin).map_err(|e| format!("--cors-origin {origin:?}: {e}"))?;
        }
    }
    let cfg = ServiceConfig {
        max_wait: Duration::from_millis(args.max_wait_ms),
        cors_origin: args.cors_origin,
        ..ServiceConfig::new(args.state_dir)
    };
    let state = AppState::start(cfg).await?;
    let addr: SocketAddr = format!("{}:{}", args.bind, args.port).parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
