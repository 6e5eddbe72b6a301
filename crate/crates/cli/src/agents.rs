use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Subcommand};
use hawk_core::engine::ExecutionContext;
use hawk_core::registry::{AgentDescriptor, AgentRegistry, AgentSpecification, DiscoveryQuery, FnAgent};
use serde_json::Value;

use crate::error::CliError;
use crate::Report;

#[derive(Args)]
pub struct AgentsArgs {
    /// Registry file, created on first mutation.
    #[arg(long, env = "HAWK_REGISTRY", default_value = "agents.json", global = true)]
    registry: PathBuf,
    #[command(subcommand)]
    command: AgentsCommand,
}

#[derive(Subcommand)]
enum AgentsCommand {
    /// List agents; with --capability, only registered agents offering all of them.
    List {
        #[arg(long = "capability")]
        capabilities: Vec<String>,
    },
    /// Publish an agent specification file.
    Publish { spec: PathBuf },
    /// Bind a published agent to `inproc:echo` or an http(s) endpoint.
    Register { id: String, endpoint: String },
    Retire { id: String },
}

fn descriptor_json(d: &AgentDescriptor) -> Value {
    serde_json::to_value(d).expect("descriptor serializes")
}

fn line(d: &AgentDescriptor) -> String {
    let endpoint = d.endpoint.as_ref().map_or("-".to_string(), ToString::to_string);
    let health = serde_json::to_value(d.health).expect("health serializes");
    format!(
        "{}\t{}\t{}\t{}\t{}",
        d.agent_id,
        d.status,
        health.as_str().unwrap_or("unknown"),
        endpoint,
        d.spec.capabilities.join(",")
    )
}

pub fn main(args: AgentsArgs) -> Result<Report, CliError> {
    let registry = AgentRegistry::open(&args.registry)?;
    // the only in-process callable a bare CLI process can offer
    registry.bind("echo", Arc::new(FnAgent::new(|v: &Value, _: &ExecutionContext| Ok(v.clone()))));
    let single = |d: AgentDescriptor, verb: &str| Report::ok(descriptor_json(&d), format!("{verb} {}", d.agent_id));
    match args.command {
        AgentsCommand::List { capabilities } => {
            let list = if capabilities.is_empty() {
                registry.list()
            } else {
                registry.discover(&DiscoveryQuery::capabilities(capabilities))
            };
            let text: Vec<String> = list.iter().map(line).collect();
            Ok(Report::ok(Value::Array(list.iter().map(descriptor_json).collect()), text.join("\n")))
        }
        AgentsCommand::Publish { spec } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| CliError::io(&spec, e))?;
            let parsed: AgentSpecification = serde_json::from_str(&text)
                .map_err(|e| CliError::new(crate::error::DOMAIN, "registry", format!("{}: {e}", spec.display())))?;
            Ok(single(registry.publish(&parsed)?, "published"))
        }
        AgentsCommand::Register { id, endpoint } => Ok(single(registry.register(&id, &endpoint)?, "registered")),
        AgentsCommand::Retire { id } => Ok(single(registry.retire(&id)?, "retired")),
    }
}

