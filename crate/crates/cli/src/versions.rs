use std::path::PathBuf;

use clap::Args;
use hawk_core::operators::{DocumentStore, FsStore};
use serde_json::json;

use crate::error::{CliError, ENVIRONMENT};
use crate::Report;

#[derive(Args)]
pub struct VersionsArgs {
    /// Document key, e.g. `world` or `char/alice`.
    key: String,
    #[arg(long, env = "HAWK_STORE")]
    root: PathBuf,
}

pub fn main(args: VersionsArgs) -> Result<Report, CliError> {
    if !args.root.is_dir() {
        return Err(CliError::new(ENVIRONMENT, "io", format!("no version store at {}", args.root.display())));
    }
    let store = FsStore::open(&args.root)?;
    let chain = store.history(&args.key)?;
    let mut text = vec!["version\tparent\tcommitted_us\tsha256".to_string()];
    text.extend(chain
        .iter()
        .map(|e| {
            let parent = e.parent.map_or("-".to_string(), |p| p.to_string());
            format!("{}\t{}\t{}\t{}", e.version, parent, e.ts, e.sha256)
        }));
    Ok(Report::ok(json!({"key": args.key, "versions": chain}), text.join("\n")))
}
