use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use syllaform_cli::config::keys_help;
use syllaform_cli::{pipeline, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "syllaform", version, about = "Syllable-controlled lyrics pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic toy corpus to `paths.corpus`.
    SynthCorpus,
    /// Filter and split `paths.corpus` into `<out_dir>/splits`.
    Preprocess,
    /// Train the BPE vocabulary on the training split.
    TrainVocab,
    /// Train the language model; writes the checkpoint and `loss.csv`.
    Train,
    /// Decode generation plans for the selected split.
    Generate,
    /// Decode infilling masks for the selected split.
    Infill,
    /// Build the metrics report for `evaluate.source`.
    Evaluate,
    /// Song-form consistency matrices for `evaluate.source`.
    Consistency,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let value = match cli.command {
        Command::ShowConfig => return Ok(cfg.to_toml()),
        Command::SynthCorpus => pipeline::cmd_synth_corpus(&cfg)?,
        Command::Preprocess => pipeline::cmd_preprocess(&cfg)?,
        Command::TrainVocab => pipeline::cmd_train_vocab(&cfg)?,
        Command::Train => pipeline::cmd_train(&cfg)?,
        Command::Generate => pipeline::cmd_generate(&cfg)?,
        Command::Infill => pipeline::cmd_infill(&cfg)?,
        Command::Evaluate => pipeline::cmd_evaluate(&cfg)?,
        Command::Consistency => pipeline::cmd_consistency(&cfg)?,
    };
    Ok(serde_json::to_string_pretty(&value).expect("summary serializes"))
}

fn main() -> ExitCode {
    let keys = keys_help();
    let mut cmd = Cli::command().after_long_help(keys.clone());
    for name in ["synth-corpus", "preprocess", "train-vocab", "train", "generate", "infill", "evaluate", "consistency", "show-config"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(keys.clone()));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(out) => {
            // A closed pipe (`| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout(), "{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
