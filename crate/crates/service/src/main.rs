use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use syllaform_core::tokenizer::Vocab;
use syllaform_service::{router, AppState, LoadedModel};

#[derive(Parser)]
#[command(name = "syllaform-serve", version, about = "Serve generation and infilling over HTTP")]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: SocketAddr,
    /// Load a checkpoint: `NAME=CHECKPOINT,VOCAB`. Repeatable; the first is the default.
    #[arg(long = "model", value_name = "NAME=CHECKPOINT,VOCAB")]
    models: Vec<String>,
    /// Register the syllable oracle over a vocabulary file, named `oracle`.
    #[arg(long, value_name = "VOCAB")]
    oracle: Option<PathBuf>,
}

fn load(args: &Args) -> Result<Vec<LoadedModel>, String> {
    let mut out = Vec::new();
    for spec in &args.models {
        let (name, paths) = spec.split_once('=').ok_or_else(|| format!("--model {spec:?}: expected NAME=CHECKPOINT,VOCAB"))?;
        let (ckpt, vocab) = paths.split_once(',').ok_or_else(|| format!("--model {spec:?}: expected NAME=CHECKPOINT,VOCAB"))?;
        out.push(LoadedModel::load(name, ckpt.as_ref(), vocab.as_ref()).map_err(|e| e.to_string())?);
    }
    if let Some(path) = &args.oracle {
        let vocab = Vocab::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        out.push(LoadedModel::oracle("oracle", vocab));
    }
    Ok(out)
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let models = match load(&args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": { "kind": "config", "message": e } }));
            return ExitCode::from(2);
        }
    };
    let app = router(AppState::with_models(models));
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": { "kind": "io", "message": format!("{}: {e}", args.bind) } }));
            return ExitCode::from(1);
        }
    };
    eprintln!("listening on http://{}", args.bind);
    if let Err(e) = axum::serve(listener, app).await {
        eprintln!("{}", serde_json::json!({ "error": { "kind": "io", "message": e.to_string() } }));
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
