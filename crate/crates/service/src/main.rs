use clap::Parser;
use geokonvex_service::{router, AppState, ServiceConfig};
use std::time::Duration;

#[derive(Parser)]
#[command(name = "geokonvex-serve", version, about = "HTTP API for convex geodesic segmentation")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080", env = "GEOKONVEX_ADDR")]
    addr: String,
    /// Concurrent segmentation workers (default: number of cores).
    #[arg(long, env = "GEOKONVEX_THREADS")]
    workers: Option<usize>,
    /// Per-request compute budget in seconds.
    #[arg(long, default_value_t = 60.0)]
    budget: f64,
    /// Browser origin allowed by CORS (default: any).
    #[arg(long, env = "GEOKONVEX_UI_ORIGIN")]
    ui_origin: Option<String>,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let mut cfg = ServiceConfig { budget: Duration::from_secs_f64(args.budget), ui_origin: args.ui_origin, ..Default::default() };
    if let Some(w) = args.workers.filter(|w| *w > 0) {
        cfg.workers = w;
    }
    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(cfg))).await
}
