use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ResourceError, ToolProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Number,
    Boolean,
    Object,
    Array,
}

impl FieldType {
    fn accepts(&self, v: &Value) -> bool {
        match self {
            FieldType::String => v.is_string(),
            FieldType::Number => v.is_number(),
            FieldType::Boolean => v.is_boolean(),
            FieldType::Object => v.is_object(),
            FieldType::Array => v.is_array(),
        }
    }
}

/// Required top-level fields of a tool's argument document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub required: BTreeMap<String, FieldType>,
}

impl ToolSchema {
    pub fn require(mut self, field: &str, ty: FieldType) -> Self {
        self.required.insert(field.to_string(), ty);
        self
    }

    pub fn check(&self, args: &Value) -> Result<(), ResourceError> {
        let obj = args
            .as_object()
            .ok_or_else(|| ResourceError::SchemaMismatch("arguments must be an object".into()))?;
        for (field, ty) in &self.required {
            match obj.get(field) {
                None => return Err(ResourceError::SchemaMismatch(format!("missing field `{field}`"))),
                Some(v) if !ty.accepts(v) => {
                    return Err(ResourceError::SchemaMismatch(format!("field `{field}` is not {ty:?}")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

struct WordCount(ToolSchema);

impl ToolProvider for WordCount {
    fn schema(&self) -> &ToolSchema {
        &self.0
    }

    fn call(&self, args: &Value) -> Result<Value, ResourceError> {
        let text = args["text"].as_str().unwrap_or_default();
        Ok(json!({ "count": text.split_whitespace().count() }))
    }
}

/// Always fails, echoing its arguments as the error payload.
struct Fail(ToolSchema);

impl ToolProvider for Fail {
    fn schema(&self) -> &ToolSchema {
        &self.0
    }

    fn call(&self, args: &Value) -> Result<Value, ResourceError> {
        Err(ResourceError::ToolError(json!({ "error": "tool failed", "args": args })))
    }
}

pub fn builtin_tool(name: &str) -> Option<Arc<dyn ToolProvider>> {
    match name {
        "word-count" => Some(Arc::new(WordCount(ToolSchema::default().require("text", FieldType::String)))),
        "fail" => Some(Arc::new(Fail(ToolSchema::default()))),
        _ => None,
    }
}
