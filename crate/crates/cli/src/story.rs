use std::path::PathBuf;

use clap::Subcommand;
use hawk_core::creagentive::{run, RunConfig};
use hawk_core::resources::ResourceCatalog;

use crate::error::CliError;
use crate::Report;

#[derive(Subcommand)]
pub enum StoryCommand {
    /// Generate chapters until the outline's ending holds or the cap is hit.
    Run {
        #[arg(long)]
        project: PathBuf,
        #[arg(long, default_value_t = 3)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_chapters: usize,
        /// Resource id of the model backend.
        #[arg(long, default_value = "mock-llm")]
        backend: String,
        /// Also write every losing trajectory to `losers/`.
        #[arg(long)]
        keep_losers: bool,
        /// Output directory, `<project>/out` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Catalog used instead of the project's `resources.json`.
        #[arg(long, env = "HAWK_RESOURCES")]
        resources: Option<PathBuf>,
    },
}

pub fn main(command: StoryCommand) -> Result<Report, CliError> {
    let StoryCommand::Run {
        project,
        candidates,
        seed,
        max_chapters,
        backend,
        keep_losers,
        out,
        resources,
    } = command;
    let out = out.unwrap_or_else(|| project.join("out"));
    let mut config = RunConfig::new(&project, &out);
    config.n_candidates = candidates;
    config.seed = seed;
    config.max_chapters = max_chapters;
    config.backend = backend;
    config.keep_losers = keep_losers;
    if let Some(path) = resources {
        config.catalog = Some(ResourceCatalog::load(&path)?);
    }
    let result = run(&config)?;
    let mut text = vec![format!("{}: {} chapter(s)", result.title, result.chapters.len())];
    for c in &result.chapters {
        text.push(format!("  chapter {} from {} ({} words)", c.chapter_index, c.trajectory_ref, c.word_count));
    }
    if result.truncated {
        text.push(format!("stopped at the {max_chapters}-chapter cap before the ending held"));
    }
    text.push(format!("novel written to {}", out.join("novel.md").display()));
    let json = serde_json::to_value(&result).expect("result serializes");
    Ok(Report::ok(json, text.join("\n")))
}
