use std::collections::BTreeMap;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{TaskRequest, TaskSpec, TemplateCatalog, WorkflowError};

/// Option key that names the template explicitly.
pub const KIND_OPTION: &str = "kind";

/// Turns a free-form request into a normalized task.
///
/// The kind comes from the `kind` option when present, otherwise from the
/// template whose keywords occur most often in the text (ties broken by kind
/// name). Parameters are filled from options, then from the template's
/// inference rules, then from defaults.
pub fn parse_task_request(req: &TaskRequest, catalog: &TemplateCatalog) -> Result<TaskSpec, WorkflowError> {
    let text = req.raw_text.trim();
    if text.is_empty() {
        return Err(WorkflowError::UnrecognizedTaskKind);
    }
    let template = match req.options.get(KIND_OPTION) {
        Some(kind) => catalog.get(kind).ok_or(WorkflowError::UnrecognizedTaskKind)?,
        None => best_keyword_match(text, catalog).ok_or(WorkflowError::UnrecognizedTaskKind)?,
    };
    let mut options = req.options.clone();
    options.remove(KIND_OPTION);
    if let Some(unknown) = options.keys().find(|k| !template.parameters.contains_key(*k)) {
        return Err(WorkflowError::MalformedOption {
            name: unknown.clone(),
            reason: format!("not a parameter of template `{}`", template.kind),
        });
    }
    let parameters = template.resolve_parameters(text, &options)?;
    Ok(TaskSpec {
        task_id: task_id(text, &req.options),
        kind: template.kind.clone(),
        parameters,
        constraints: template.constraints.clone(),
    })
}

fn best_keyword_match<'a>(
    text: &str,
    catalog: &'a TemplateCatalog,
) -> Option<&'a super::WorkflowTemplate> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut best = None;
    let mut best_hits = 0;
    // iteration is in kind order, so the first maximum wins ties
    for template in catalog.iter() {
        let hits = template
            .keywords
            .iter()
            .filter(|k| words.iter().any(|w| w == *k))
            .count();
        if hits > best_hits {
            best_hits = hits;
            best = Some(template);
        }
    }
    best
}

fn task_id(text: &str, options: &BTreeMap<String, String>) -> String {
    let canonical = json!({ "raw_text": text, "options": options }).to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    format!("task-{}", &hex::encode(digest)[..12])
}
