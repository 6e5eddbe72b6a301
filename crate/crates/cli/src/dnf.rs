use std::path::{Path, PathBuf};

use clap::Subcommand;
use hawk_core::dnf::{accuracy, extract_rules, infer_labels, mean_loss, train, DnfModel, TrainConfig, TrainingExample};
use serde_json::json;

use crate::error::{CliError, DOMAIN};
use crate::Report;

#[derive(Subcommand)]
pub enum DnfCommand {
    /// Full-batch training on a dataset of `{"atoms": [...], "label": n}` rows.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        clauses: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        l1: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print argmax accuracy and mean cross-entropy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the rules left after thresholding every gate.
    Rules {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_data(path: &Path) -> Result<Vec<TrainingExample>, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::new(DOMAIN, "dnf", format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<DnfModel, CliError> {
    Ok(DnfModel::from_json(&read(path)?)?)
}

pub fn main(command: DnfCommand) -> Result<Report, CliError> {
    match command {
        DnfCommand::Train {
            data,
            clauses,
            lr,
            epochs,
            seed,
            l1,
            out,
        } => {
            let data = load_data(&data)?;
            let cfg = TrainConfig {
                n_clauses: clauses,
                lr,
                epochs,
                seed,
                l1_gate_penalty: l1,
            };
            let outcome = train(&data, infer_labels(&data), &cfg)?;
            std::fs::write(&out, outcome.model.to_json()).map_err(|e| CliError::io(&out, e))?;
            let acc = accuracy(&outcome.model, &data)?;
            let loss = mean_loss(&outcome.model, &data)?;
            let text = format!("trained {epochs} epochs: accuracy {acc:?}, loss {loss:.6}; model written to {}", out.display());
            Ok(Report::ok(json!({"accuracy": acc, "loss": loss, "epochs": epochs, "model": out}), text))
        }
        DnfCommand::Eval { model, data } => {
            let model = load_model(&model)?;
            let data = load_data(&data)?;
            let acc = accuracy(&model, &data)?;
            let loss = mean_loss(&model, &data)?;
            Ok(Report::ok(json!({"accuracy": acc, "loss": loss}), format!("accuracy {acc:?}\nloss {loss:.6}")))
        }
        DnfCommand::Rules { model, threshold } => {
            let rules = extract_rules(&load_model(&model)?, threshold);
            let text: Vec<String> = rules.iter().map(ToString::to_string).collect();
            let shown: Vec<_> = rules.iter().map(|r| json!({"label": r.label, "rule": r.to_string(), "clauses": r.clauses})).collect();
            Ok(Report::ok(json!({"threshold": threshold, "rules": shown}), text.join("\n")))
        }
    }
}
