//! `hawk`: one binary for workflows, the agent registry, DNF models, story
//! runs and version-store inspection.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error, 3 environment
//! error (unreadable files, unreachable backends, missing secrets).

mod agents;
mod dnf;
mod error;
mod story;
mod versions;
mod workflow;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use error::CliError;

#[derive(Parser)]
#[command(name = "hawk", version, about = "Layered multi-agent workflows with a DNF decision layer")]
struct Cli {
    /// Print one JSON document instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a workflow spec.
    Run(workflow::RunArgs),
    /// Print the stage decomposition of a workflow spec.
    Plan(SpecArg),
    /// Check a workflow spec for structural problems.
    Validate(SpecArg),
    /// Administer the agent registry.
    Agents(agents::AgentsArgs),
    /// Train, evaluate and inspect DNF models.
    Dnf {
        #[command(subcommand)]
        command: dnf::DnfCommand,
    },
    /// Story generation.
    Creagentive {
        #[command(subcommand)]
        command: story::StoryCommand,
    },
    /// Print the version chain of a stored document.
    Versions(versions::VersionsArgs),
}

#[derive(Args)]
struct SpecArg {
    #[arg(long)]
    spec: PathBuf,
}

/// What a command prints. `code` is the exit code for a command that ran
/// but reports a domain failure, such as failed nodes.
pub struct Report {
    pub json: Value,
    pub text: String,
    pub code: u8,
}

impl Report {
    pub fn ok(json: Value, text: impl Into<String>) -> Self {
        Self {
            json,
            text: text.into(),
            code: 0,
        }
    }

    pub fn with_code(mut self, code: u8) -> Self {
        self.code = code;
        self
    }
}

fn dispatch(command: Command) -> Result<Report, CliError> {
    match command {
        Command::Run(args) => workflow::run(args),
        Command::Plan(a) => workflow::plan(&a.spec),
        Command::Validate(a) => workflow::validate(&a.spec),
        Command::Agents(args) => agents::main(args),
        Command::Dnf { command } => dnf::main(command),
        Command::Creagentive { command } => story::main(command),
        Command::Versions(args) => versions::main(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // one-line diagnostic instead of clap's multi-line usage block
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("hawk: {}", first.trim_start_matches("error: "));
            return ExitCode::from(error::USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.command) {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report.json).expect("json value serializes"));
            } else if !report.text.is_empty() {
                println!("{}", report.text.trim_end());
            }
            ExitCode::from(report.code)
        }
        Err(e) => {
            eprintln!("hawk: {e}");
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json value serializes"));
            }
            ExitCode::from(e.code)
        }
    }
}
