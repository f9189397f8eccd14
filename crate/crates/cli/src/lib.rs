//! Command-line pipeline over `advsal-core`: train a checkpoint, attack
//! images, render attention maps and write comparison reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod run;

use std::ffi::OsString;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};

/// Exit status when some images hit pipeline errors.
pub const EXIT_PARTIAL: i32 = 3;

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(argv: I) -> i32 {
    let argv = match config::expand_args(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(&argv));
            }
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Attack(a) => commands::cmd_attack(a),
        Command::Explain(a) => commands::cmd_explain(a),
        Command::Compare(a) => commands::cmd_compare(a),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: some images failed; see the manifest");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Usage line of the subcommand named in `argv`, or of the whole tool.
fn usage_for(argv: &[OsString]) -> clap::builder::StyledStr {
    let mut cmd = Cli::command();
    cmd.build();
    let name = argv.get(1).and_then(|a| a.to_str()).unwrap_or_default().to_string();
    match cmd.find_subcommand_mut(&name) {
        Some(sub) => sub.render_usage(),
        None => cmd.render_usage(),
    }
}
