use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disco::harness::{
    cmd_ablate, cmd_evaluate, cmd_predict, cmd_train, exit_code, AblationMode, AnnotatorConfig, PredictOptions,
    Scenario, Task, TrainOptions,
};
use disco::scoring::ConnectiveMatch;

#[derive(Parser)]
#[command(name = "disco", version, about = "Discourse segmentation, connective detection and relation classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the task in the config.
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    runs: Option<usize>,
    /// First seed; runs use consecutive seeds from here.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Write the training split's feature table as TSV.
    #[arg(long)]
    dump_features: bool,
    /// Train without hand-crafted features.
    #[arg(long)]
    no_features: bool,
}

impl TrainArgs {
    fn options(&self) -> TrainOptions {
        TrainOptions {
            task: self.task,
            runs: self.runs,
            seed: self.seed,
            scenario: self.scenario,
            dump_features: self.dump_features,
            no_features: self.no_features,
            output_dir: self.output_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and score the test split.
    Train(TrainArgs),
    /// Label a file with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: Option<Task>,
        /// Corpus id; taken from the input file name by default.
        #[arg(long)]
        corpus: Option<String>,
        /// Documents backing a `.rels` input.
        #[arg(long)]
        docs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "gold")]
        scenario: Scenario,
        /// Sentence splitter and parser for the plain scenario.
        #[arg(long)]
        annotator: Option<PathBuf>,
        #[arg(long)]
        dump_features: bool,
    },
    /// Score predictions against gold.
    Evaluate {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Score connectives by exact span instead of by token.
        #[arg(long)]
        span: bool,
    },
    /// Compare a baseline with one ablated condition.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblationMode,
        #[command(flatten)]
        train: TrainArgs,
    },
}

fn run(cli: Cli) -> disco::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let summary = cmd_train(&args.config, &args.options())?;
            println!("{}", summary.aggregate_line());
        }
        Command::Predict {
            checkpoint,
            input,
            output,
            task,
            corpus,
            docs,
            scenario,
            annotator,
            dump_features,
        } => {
            let opts = PredictOptions {
                task,
                scenario,
                corpus,
                docs,
                annotator: annotator.map(|program| AnnotatorConfig { program, args: Vec::new() }),
                output,
                dump_features,
            };
            let out = cmd_predict(&checkpoint, &input, &opts)?;
            println!("{}", out.display());
        }
        Command::Evaluate { task, gold, pred, span } => {
            let matching = if span { ConnectiveMatch::Span } else { ConnectiveMatch::Token };
            let report = cmd_evaluate(&gold, &pred, task, matching)?;
            print!("{}", report.to_text());
        }
        Command::Ablate { mode, train } => {
            let report = cmd_ablate(&train.config, mode, &train.options())?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
