//! JSON extraction from free-form model replies plus a small shape checker.

use serde_json::{Map, Value};

/// Expected structure of a model reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Any,
    String,
    Number,
    Integer,
    /// A string or an integer (model-chosen id encodings).
    Id,
    Array(Box<Shape>),
    Object(Vec<Field>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: &'static str,
    pub shape: Shape,
    pub required: bool,
}

impl Field {
    pub fn required(name: &'static str, shape: Shape) -> Self {
        Self { name, shape, required: true }
    }

    pub fn optional(name: &'static str, shape: Shape) -> Self {
        Self { name, shape, required: false }
    }
}

impl Shape {
    pub fn object(fields: impl IntoIterator<Item = Field>) -> Self {
        Shape::Object(fields.into_iter().collect())
    }

    pub fn array(item: Shape) -> Self {
        Shape::Array(Box::new(item))
    }

    pub fn validate(&self, value: &Value) -> Result<(), String> {
        validate_at(self, value, "$")
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn validate_at(shape: &Shape, value: &Value, path: &str) -> Result<(), String> {
    let mismatch = |expected: &str| Err(format!("{path}: expected {expected}, found {}", type_name(value)));
    match shape {
        Shape::Any => Ok(()),
        Shape::String => match value {
            Value::String(_) => Ok(()),
            _ => mismatch("string"),
        },
        Shape::Number => match value {
            Value::Number(_) => Ok(()),
            _ => mismatch("number"),
        },
        Shape::Integer => match value {
            Value::Number(n) if n.is_i64() || n.is_u64() => Ok(()),
            Value::Number(n) if n.as_f64().is_some_and(|f| f.fract() == 0.0) => Ok(()),
            _ => mismatch("integer"),
        },
        Shape::Id => match value {
            Value::String(s) if !s.trim().is_empty() => Ok(()),
            Value::Number(n) if n.is_i64() || n.is_u64() => Ok(()),
            _ => mismatch("id (non-empty string or integer)"),
        },
        Shape::Array(item) => match value {
            Value::Array(items) => {
                items.iter().enumerate().try_for_each(|(i, v)| validate_at(item, v, &format!("{path}[{i}]")))
            }
            _ => mismatch("array"),
        },
        Shape::Object(fields) => match value {
            Value::Object(map) => fields.iter().try_for_each(|f| match map.get(f.name) {
                Some(v) => validate_at(&f.shape, v, &format!("{path}.{}", f.name)),
                None if f.required => Err(format!("{path}: missing required field \"{}\"", f.name)),
                None => Ok(()),
            }),
            _ => mismatch("object"),
        },
    }
}

/// Byte range of the balanced `{...}` starting at `start`, honoring JSON
/// string escapes.
fn balanced_object_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First well-formed JSON object embedded in `text`, skipping code fences and
/// surrounding prose.
pub fn extract_json_object(text: &str) -> Result<Map<String, Value>, String> {
    let mut last_error = None;
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_object_end(text, start) else {
            last_error.get_or_insert_with(|| "unbalanced braces".to_string());
            continue;
        };
        match serde_json::from_str::<Value>(&text[start..end]) {
            Ok(Value::Object(map)) => return Ok(map),
            Ok(_) => {}
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    Err(match last_error {
        Some(e) => format!("no parseable JSON object in reply ({e})"),
        None => "no JSON object in reply".to_string(),
    })
}

pub fn parse_and_validate(raw: &str, shape: &Shape) -> Result<Value, String> {
    let value = Value::Object(extract_json_object(raw)?);
    shape.validate(&value)?;
    Ok(value)
}

pub(crate) fn repair_prompt(original: &str, raw: &str, error: &str) -> String {
    format!(
        "{original}\n\nYour previous reply could not be used: {error}\nPrevious reply:\n{raw}\n\n\
         Respond again with only the corrected JSON object in the expected output format."
    )
}
