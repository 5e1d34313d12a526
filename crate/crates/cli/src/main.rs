mod args;
mod commands;
mod summary;

use args::*;
use clap::Parser;
use commands::Failure;
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_INTERNAL: u8 = 3;

fn dispatch(cli: &Cli) -> commands::Outcome {
    match &cli.command {
        Command::Corpus(CorpusCommand::Build(a)) => commands::corpus_build(cli, a),
        Command::Fuzz(FuzzCommand::Run(a)) => commands::fuzz_run(cli, a),
        Command::Sem(SemCommand::Train(a)) => commands::sem_train(cli, a),
        Command::Sem(SemCommand::Eval(a)) => commands::sem_eval(cli, a),
        Command::Replay(a) => commands::replay(cli, a),
        Command::Analyze(AnalyzeCommand::Cluster(a)) => commands::analyze_cluster(cli, a),
        Command::Report(a) => commands::report(cli, a),
        Command::ServeAgent { agent } => commands::serve_agent(agent),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level.filter())
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal { module, message }) => {
            eprintln!("{}", serde_json::json!({ "level": "error", "module": module, "message": message }));
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
