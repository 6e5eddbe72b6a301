use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_workflow, TaskSpec, WorkflowError, WorkflowSpec};

const BUILTIN_TEMPLATES: [&str; 2] = [
    include_str!("../../../../templates/novel-generation.json"),
    include_str!("../../../../templates/generic-dag.json"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Json,
}

impl ParamType {
    /// Parses a raw option string into a typed value.
    pub fn parse(&self, raw: &str) -> Result<Value, String> {
        match self {
            ParamType::String => Ok(Value::String(raw.to_string())),
            ParamType::Integer => raw
                .trim()
                .parse::<i64>()
                .map(Value::from)
                .map_err(|_| format!("expected an integer, got `{raw}`")),
            ParamType::Number => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::from)
                .ok_or_else(|| format!("expected a number, got `{raw}`")),
            ParamType::Boolean => match raw.trim() {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("expected true or false, got `{raw}`")),
            },
            ParamType::Json => serde_json::from_str(raw).map_err(|e| format!("invalid JSON: {e}")),
        }
    }

    pub fn accepts(&self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Json => true,
        }
    }
}

/// How a parameter may be picked out of the free-form request text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InferRule {
    /// First whitespace-separated token ending in `.json`.
    JsonPath,
    /// An integer immediately preceding `word`, e.g. "3 chapters".
    NumberBefore { word: String },
}

impl InferRule {
    fn apply(&self, text: &str) -> Option<Value> {
        let tokens: Vec<&str> = text
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| matches!(c, ',' | ';' | '"' | '\'' | '(' | ')')))
            .collect();
        match self {
            InferRule::JsonPath => tokens
                .iter()
                .map(|t| t.trim_end_matches(['.', '!', '?']))
                .find(|t| t.len() > 5 && t.ends_with(".json"))
                .map(|t| Value::String(t.to_string())),
            InferRule::NumberBefore { word } => tokens.windows(2).find_map(|w| {
                let next = w[1].trim_end_matches(['.', '!', '?']).to_lowercase();
                (next == *word).then(|| w[0].parse::<i64>().ok().map(Value::from)).flatten()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub default: Option<Value>,
    #[serde(default)]
    pub infer: Option<InferRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowTemplate {
    pub kind: String,
    #[serde(default)]
    pub description: String,
    /// Lower-case words that vote for this template during request parsing.
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub allow_empty: bool,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamDecl>,
    #[serde(default)]
    pub constraints: Vec<String>,
    /// A workflow spec document whose strings may hold `{{param}}` placeholders.
    pub spec: Value,
}

impl WorkflowTemplate {
    /// Values for every declared parameter: option, then inference, then default.
    pub(crate) fn resolve_parameters(
        &self,
        raw_text: &str,
        options: &BTreeMap<String, String>,
    ) -> Result<BTreeMap<String, Value>, WorkflowError> {
        let mut out = BTreeMap::new();
        for (name, decl) in &self.parameters {
            let value = if let Some(raw) = options.get(name) {
                Some(decl.ty.parse(raw).map_err(|reason| WorkflowError::MalformedOption {
                    name: name.clone(),
                    reason,
                })?)
            } else {
                decl.infer
                    .as_ref()
                    .and_then(|rule| rule.apply(raw_text))
                    .or_else(|| decl.default.clone())
            };
            if let Some(v) = value {
                out.insert(name.clone(), v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateCatalog {
    templates: BTreeMap<String, WorkflowTemplate>,
}

impl TemplateCatalog {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let mut catalog = Self::default();
        for text in BUILTIN_TEMPLATES {
            let t: WorkflowTemplate = serde_json::from_str(text).expect("builtin template parses");
            catalog.insert(t);
        }
        catalog
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, WorkflowError> {
        let io_err = |source| WorkflowError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut catalog = Self::default();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|source| WorkflowError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let t: WorkflowTemplate =
                serde_json::from_str(&text).map_err(|source| WorkflowError::Parse {
                    path: path.display().to_string(),
                    source,
                })?;
            catalog.insert(t);
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, template: WorkflowTemplate) {
        self.templates.insert(template.kind.clone(), template);
    }

    pub fn get(&self, kind: &str) -> Option<&WorkflowTemplate> {
        self.templates.get(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorkflowTemplate> {
        self.templates.values()
    }
}

/// Substitutes the task's parameters into its template and validates the
/// resulting DAG.
pub fn instantiate_workflow(
    task: &TaskSpec,
    catalog: &TemplateCatalog,
) -> Result<WorkflowSpec, WorkflowError> {
    let template = catalog
        .get(&task.kind)
        .ok_or_else(|| WorkflowError::TemplateNotFound(task.kind.clone()))?;
    let mut missing = BTreeSet::new();
    let doc = substitute(&template.spec, &task.parameters, &mut missing);
    if !missing.is_empty() {
        return Err(WorkflowError::UnresolvedPlaceholder(missing.into_iter().collect()));
    }
    let spec: WorkflowSpec = serde_json::from_value(doc).map_err(|source| WorkflowError::Parse {
        path: format!("template:{}", template.kind),
        source,
    })?;
    if spec.nodes.is_empty() && !template.allow_empty {
        return Err(WorkflowError::UnresolvedPlaceholder(vec!["nodes".into()]));
    }
    let report = validate_workflow(&spec);
    if !report.is_valid() {
        return Err(WorkflowError::InvalidWorkflow(report));
    }
    Ok(spec)
}

fn placeholder_name(s: &str) -> Option<&str> {
    s.strip_prefix("{{")?.strip_suffix("}}").map(str::trim)
}

fn substitute(value: &Value, params: &BTreeMap<String, Value>, missing: &mut BTreeSet<String>) -> Value {
    match value {
        Value::String(s) => {
            if let Some(name) = placeholder_name(s) {
                return match params.get(name) {
                    Some(v) => v.clone(),
                    None => {
                        missing.insert(name.to_string());
                        value.clone()
                    }
                };
            }
            Value::String(interpolate(s, params, missing))
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, params, missing)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), substitute(v, params, missing)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn interpolate(s: &str, params: &BTreeMap<String, Value>, missing: &mut BTreeSet<String>) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start..].find("}}") else { break };
        out.push_str(&rest[..start]);
        let name = rest[start + 2..start + len].trim();
        match params.get(name) {
            Some(Value::String(v)) => out.push_str(v),
            Some(v) => out.push_str(&v.to_string()),
            None => {
                missing.insert(name.to_string());
                out.push_str(&rest[start..start + len + 2]);
            }
        }
        rest = &rest[start + len + 2..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn interpolation_and_typed_substitution() {
        let params = BTreeMap::from([
            ("n".to_string(), json!(3)),
            ("name".to_string(), json!("tower")),
        ]);
        let mut missing = BTreeSet::new();
        let out = substitute(
            &json!({"a": "{{n}}", "b": "to the {{name}} x{{n}}", "c": ["{{ name }}"], "d": "{{zzz}}"}),
            &params,
            &mut missing,
        );
        assert_eq!(out, json!({"a": 3, "b": "to the tower x3", "c": ["tower"], "d": "{{zzz}}"}));
        assert_eq!(missing.into_iter().collect::<Vec<_>>(), vec!["zzz"]);
    }

    #[test]
    fn param_types() {
        assert_eq!(ParamType::Integer.parse("12").unwrap(), json!(12));
        assert!(ParamType::Integer.parse("twelve").is_err());
        assert!(ParamType::Boolean.parse("yes").is_err());
        assert_eq!(ParamType::Json.parse("[1,2]").unwrap(), json!([1, 2]));
        assert!(ParamType::Number.parse("NaN").is_err());
    }

    #[test]
    fn inference_rules() {
        assert_eq!(InferRule::JsonPath.apply("from outline.json."), Some(json!("outline.json")));
        assert_eq!(InferRule::JsonPath.apply("no file here"), None);
        let r = InferRule::NumberBefore { word: "chapters".into() };
        assert_eq!(r.apply("write 4 chapters please"), Some(json!(4)));
        assert_eq!(r.apply("write some chapters"), None);
    }

    #[test]
    fn builtin_catalog_loads() {
        let c = TemplateCatalog::builtin();
        assert_eq!(c.kinds().collect::<Vec<_>>(), vec!["generic-dag", "novel-generation"]);
    }
}
