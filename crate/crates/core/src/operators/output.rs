use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsonType {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
}

impl JsonType {
    fn accepts(&self, v: &Value) -> bool {
        match self {
            JsonType::String => v.is_string(),
            JsonType::Number => v.is_number(),
            JsonType::Integer => v.is_i64() || v.is_u64(),
            JsonType::Boolean => v.is_boolean(),
            JsonType::Array => v.is_array(),
            JsonType::Object => v.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRule {
    #[serde(rename = "type")]
    pub ty: JsonType,
    #[serde(default = "yes")]
    pub required: bool,
    /// Rejects empty strings and arrays.
    #[serde(default)]
    pub non_empty: bool,
    #[serde(default, rename = "enum")]
    pub enum_values: Option<Vec<Value>>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

fn yes() -> bool {
    true
}

impl FieldRule {
    pub fn new(ty: JsonType) -> Self {
        Self {
            ty,
            required: true,
            non_empty: false,
            enum_values: None,
            min: None,
            max: None,
        }
    }

    pub fn non_empty(mut self) -> Self {
        self.non_empty = true;
        self
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }

    pub fn one_of(mut self, values: Vec<Value>) -> Self {
        self.enum_values = Some(values);
        self
    }

    pub fn range(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }
}

/// Structural schema over the top-level fields of a JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub name: String,
    pub fields: BTreeMap<String, FieldRule>,
}

impl OutputSchema {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn field(mut self, name: &str, rule: FieldRule) -> Self {
        self.fields.insert(name.to_string(), rule);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputViolation {
    pub code: String,
    pub field: Option<String>,
    pub message: String,
}

impl OutputViolation {
    pub fn new(code: &str, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            field: field.map(String::from),
            message: message.into(),
        }
    }
}

impl fmt::Display for OutputViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{} ({field}): {}", self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

type RuleFn = dyn Fn(&Value, &Value) -> Vec<OutputViolation> + Send + Sync;

/// A named predicate over `(payload, environment)`.
#[derive(Clone)]
pub struct SemanticRule {
    pub name: String,
    check: Arc<RuleFn>,
}

impl fmt::Debug for SemanticRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemanticRule").field("name", &self.name).finish()
    }
}

impl SemanticRule {
    pub fn new(
        name: impl Into<String>,
        check: impl Fn(&Value, &Value) -> Vec<OutputViolation> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            check: Arc::new(check),
        }
    }

    pub fn check(&self, payload: &Value, env: &Value) -> Vec<OutputViolation> {
        (self.check)(payload, env)
    }

    /// Every string in the payload array `field` must be a `name_key` of
    /// some object in the environment array at `env_pointer`. Violations
    /// carry `code`.
    pub fn name_set_membership(code: &str, field: &str, env_pointer: &str, name_key: &str) -> Self {
        let (code, field, env_pointer, name_key) =
            (code.to_string(), field.to_string(), env_pointer.to_string(), name_key.to_string());
        Self::new(code.clone(), move |payload, env| {
            let known: BTreeSet<&str> = env
                .pointer(&env_pointer)
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|e| e[&name_key].as_str()).collect())
                .unwrap_or_default();
            payload[&field]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(Value::as_str)
                .filter(|n| !known.contains(n))
                .map(|n| OutputViolation::new(&code, Some(&field), format!("`{n}` is not in the environment")))
                .collect()
        })
    }

    /// The numeric payload field must lie in `[min, max]`; absent fields pass.
    pub fn numeric_range(field: &str, min: f64, max: f64) -> Self {
        let field = field.to_string();
        Self::new(format!("range:{field}"), move |payload, _| match payload[&field].as_f64() {
            Some(x) if !(min..=max).contains(&x) => vec![OutputViolation::new(
                "out_of_range",
                Some(&field),
                format!("{x} not in [{min}, {max}]"),
            )],
            _ => Vec::new(),
        })
    }
}

/// All structural violations followed by all semantic ones; empty means ok.
pub fn validate_output(schema: &OutputSchema, rules: &[SemanticRule], payload: &Value, env: &Value) -> Vec<OutputViolation> {
    let mut out = Vec::new();
    let Some(obj) = payload.as_object() else {
        out.push(OutputViolation::new("not_an_object", None, "payload must be a JSON object"));
        return out;
    };
    for (name, rule) in &schema.fields {
        let f = Some(name.as_str());
        let Some(v) = obj.get(name) else {
            if rule.required {
                out.push(OutputViolation::new("missing_field", f, "required field is absent"));
            }
            continue;
        };
        if !rule.ty.accepts(v) {
            out.push(OutputViolation::new("wrong_type", f, format!("expected {:?}", rule.ty)));
            continue;
        }
        let empty = v.as_str().is_some_and(|s| s.trim().is_empty()) || v.as_array().is_some_and(Vec::is_empty);
        if rule.non_empty && empty {
            out.push(OutputViolation::new("empty", f, "must not be empty"));
        }
        if let Some(allowed) = &rule.enum_values {
            if !allowed.contains(v) {
                out.push(OutputViolation::new("not_in_enum", f, format!("{v} is not an allowed value")));
            }
        }
        if let Some(x) = v.as_f64() {
            if rule.min.is_some_and(|m| x < m) || rule.max.is_some_and(|m| x > m) {
                out.push(OutputViolation::new("out_of_range", f, format!("{x} out of range")));
            }
        }
    }
    for rule in rules {
        out.extend(rule.check(payload, env));
    }
    out
}
