use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use hawk_core::engine::{self, events_to_ndjson, monitor_snapshot, ExecuteOptions, StrategyParams, SystemClock, WorkflowInstance};
use hawk_core::operators::{FsStore, StandardDispatcher};
use hawk_core::resources::{ResourceCatalog, Resolver};
use hawk_core::workflow::{validate_workflow, WorkflowSpec};
use serde_json::json;

use crate::error::{CliError, DOMAIN};
use crate::Report;

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the spec's concurrency cap.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Resource catalog made available to reasoning and tool nodes.
    #[arg(long, env = "HAWK_RESOURCES")]
    resources: Option<PathBuf>,
    /// Version-store root for environment nodes; in-memory when unset.
    #[arg(long, env = "HAWK_STORE")]
    store: Option<PathBuf>,
    /// Directory that receives `run.events.ndjson`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<WorkflowSpec, CliError> {
    Ok(WorkflowSpec::load(path)?)
}

fn stages_text(stages: &[Vec<String>]) -> String {
    let inner: Vec<String> = stages.iter().map(|s| format!("[{}]", s.join(","))).collect();
    format!("[{}]", inner.join(","))
}

pub fn plan(spec: &Path) -> Result<Report, CliError> {
    let out = engine::plan(&load(spec)?)?;
    Ok(Report::ok(json!({"stages": out.stages, "order_index": out.order_index}), stages_text(&out.stages)))
}

pub fn validate(spec: &Path) -> Result<Report, CliError> {
    let report = validate_workflow(&load(spec)?);
    if report.is_valid() {
        return Ok(Report::ok(json!({"valid": true, "violations": []}), "valid"));
    }
    let text: Vec<String> = report.violations.iter().map(|v| format!("invalid: {v}")).collect();
    Ok(Report::ok(json!({"valid": false, "violations": report.violations}), text.join("\n")).with_code(DOMAIN))
}

/// Resolves every descriptor of a catalog; mock fixtures are read from the
/// catalog file's `fixtures/` sibling directory.
fn dispatcher(resources: Option<&Path>, store: Option<&Path>) -> Result<StandardDispatcher, CliError> {
    let mut d = StandardDispatcher::new();
    if let Some(root) = store {
        d = d.with_store(Arc::new(FsStore::open(root)?));
    }
    if let Some(path) = resources {
        let catalog = ResourceCatalog::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolver = Resolver::new().with_fixture_root(base.join("fixtures"));
        for desc in catalog.iter() {
            d = d.with_resource(resolver.resolve(desc)?);
        }
    }
    Ok(d)
}

pub fn run(args: RunArgs) -> Result<Report, CliError> {
    let spec = load(&args.spec)?;
    let strategy = StrategyParams {
        parallelism: args.parallelism.unwrap_or(spec.concurrency_cap),
        ..StrategyParams::default()
    };
    let dispatcher = dispatcher(args.resources.as_deref(), args.store.as_deref())?;
    let instance = WorkflowInstance::new(spec.spec_id.clone(), spec, strategy)?;
    let result = engine::execute(instance, &dispatcher, &SystemClock::new(), &ExecuteOptions::seeded(args.seed))?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join("run.events.ndjson");
        std::fs::write(&path, events_to_ndjson(&result.instance.event_log)).map_err(|e| CliError::io(&path, e))?;
    }
    let metrics = monitor_snapshot(&result.instance);
    let mut text = Vec::new();
    let mut nodes = serde_json::Map::new();
    for (id, state) in &result.instance.node_states {
        let mut line = format!("{id}: {} after {} attempt(s)", state.status.as_str(), state.attempts);
        if let Some(err) = result.failures.get(id) {
            line.push_str(&format!(" ({err})"));
        }
        text.push(line);
        nodes.insert(
            id.clone(),
            json!({
                "status": state.status,
                "attempts": state.attempts,
                "output": result.outputs.get(id),
                "error": result.failures.get(id),
            }),
        );
    }
    let ok = result.all_succeeded();
    text.push(format!("{} of {} nodes succeeded", metrics.counts[&engine::NodeStatus::Succeeded], nodes.len()));
    let json = json!({
        "spec_id": result.instance.spec.spec_id,
        "succeeded": ok,
        "nodes": nodes,
        "counts": metrics.counts,
    });
    Ok(Report::ok(json, text.join("\n")).with_code(if ok { 0 } else { DOMAIN }))
}
