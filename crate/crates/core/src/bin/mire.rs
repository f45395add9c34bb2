use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mire::commands::{
    cmd_build_dataset, cmd_build_index, cmd_embed, cmd_eval, cmd_search, cmd_synth, cmd_train_align, BuildDatasetArgs,
    BuildIndexArgs, EmbedArgs, EvalArgs, SearchArgs, SynthArgs, TrainAlignArgs,
};

#[derive(Parser)]
#[command(name = "mire", version, about = "Late-interaction retrieval for image + question queries")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MIRE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Turn a constructed dataset into embedding files with a hashed stand-in encoder.
    Embed(EmbedArgs),
    /// Build a compressed late-interaction index over passage embeddings.
    BuildIndex(BuildIndexArgs),
    /// Train the query pooling network with in-batch negatives.
    TrainAlign(TrainAlignArgs),
    /// Rank passages for each query.
    Search(SearchArgs),
    /// Construct retrieval pairs from dialogue turns and a knowledge base.
    BuildDataset(BuildDatasetArgs),
    /// Score a ranking against gold passages or answers.
    Eval(EvalArgs),
}

fn run(cli: Cli) -> mire::Result<()> {
    match cli.command {
        Command::Synth(a) => println!("{}", cmd_synth(&a)?),
        Command::Embed(a) => println!("{}", cmd_embed(&a)?),
        Command::BuildIndex(a) => println!("{}", cmd_build_index(&a)?),
        Command::TrainAlign(a) => println!("{}", serde_json::to_string(&cmd_train_align(&a)?)?),
        Command::Search(a) => println!("{} queries ranked", cmd_search(&a)?),
        Command::BuildDataset(a) => println!("{}", serde_json::to_string(&cmd_build_dataset(&a)?)?),
        Command::Eval(a) => print!("{}", cmd_eval(&a)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
