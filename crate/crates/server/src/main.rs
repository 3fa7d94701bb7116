use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use facetflow::scenario::Workspace;

#[derive(Parser)]
#[command(name = "facetflow-server", version, about = "HTTP API over a facetflow workspace")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, default_value = ".")]
    workspace: PathBuf,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    if !args.workspace.is_dir() {
        eprintln!("error: workspace {} is not a directory", args.workspace.display());
        std::process::exit(1);
    }
    let app = facetflow_server::router(Workspace::new(&args.workspace));
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    eprintln!("serving {} on http://{}", args.workspace.display(), listener.local_addr()?);
    axum::serve(listener, app).await
}
