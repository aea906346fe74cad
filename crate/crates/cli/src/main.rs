mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;
use error::{CliResult, EXIT_USAGE};

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = config::load(cli.global.config.as_deref())?;
    let ctx = Ctx {
        global: cli.global,
        config,
    };
    match &cli.command {
        Command::Chunk(a) => commands::chunk(a),
        Command::Retrieve(a) => commands::retrieve(&ctx, a),
        Command::Rerank(a) => commands::rerank_cmd(&ctx, a),
        Command::EvalRerankers(a) => commands::eval(&ctx, a),
        Command::Run(a) => commands::run(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Features(c) => commands::features(&ctx, c),
        Command::ConvertBenchmark(a) => commands::convert(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
