use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DataModel, PropertySchema, ScalarKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MissingRequired,
    WrongType,
    NotInEnum,
    PatternMismatch,
    OutOfRange,
    UnknownProperty,
    UnknownNode,
    BadLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationError {
    pub record_index: usize,
    pub path: String,
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn from_errors(errors: Vec<ValidationError>) -> Self {
        ValidationReport {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn with_index(mut self, index: usize) -> Self {
        for e in &mut self.errors {
            e.record_index = index;
        }
        self
    }
}

struct Collector {
    errors: Vec<ValidationError>,
}

impl Collector {
    fn push(&mut self, path: impl Into<String>, code: ErrorCode, message: impl Into<String>) {
        self.errors.push(ValidationError {
            record_index: 0,
            path: path.into(),
            code,
            message: message.into(),
        });
    }
}

/// Check one record against a node schema, collecting every violation.
///
/// `type` and `submitter_id` are accepted as system keys; link fields are
/// checked for shape only (target resolution happens at submission). A
/// `null` value counts as absent.
pub fn validate_record(model: &DataModel, node_id: &str, record: &Value) -> ValidationReport {
    let mut out = Collector { errors: Vec::new() };
    let Some(node) = model.node(node_id) else {
        out.push("type", ErrorCode::UnknownNode, format!("unknown node {node_id:?}"));
        return ValidationReport::from_errors(out.errors);
    };
    let Some(fields) = record.as_object() else {
        out.push(node_id, ErrorCode::WrongType, "a record must be a key/value document");
        return ValidationReport::from_errors(out.errors);
    };

    for (key, value) in fields {
        if value.is_null() {
            continue;
        }
        match key.as_str() {
            "type" => {
                if value.as_str() != Some(node_id) {
                    out.push("type", ErrorCode::WrongType, format!("type must be {node_id:?}"));
                }
            }
            "submitter_id" => {
                if !value.as_str().is_some_and(|s| !s.is_empty()) {
                    out.push(
                        "submitter_id",
                        ErrorCode::WrongType,
                        "submitter_id must be a non-empty string",
                    );
                }
            }
            _ => {
                if let Some(prop) = node.property(key) {
                    check_value(model, node_id, prop, value, &mut out);
                } else if let Some(link) = node.link(key) {
                    if let Err(msg) = link_targets(value, link.multiplicity.allows_many_targets()) {
                        out.push(key.as_str(), ErrorCode::BadLink, msg);
                    }
                } else {
                    out.push(
                        key.as_str(),
                        ErrorCode::UnknownProperty,
                        format!("{key:?} is not defined on node {node_id:?}"),
                    );
                }
            }
        }
    }
    for req in &node.required {
        if fields.get(req).is_none_or(Value::is_null) {
            out.push(
                req.as_str(),
                ErrorCode::MissingRequired,
                format!("required field {req:?} is missing"),
            );
        }
    }
    ValidationReport::from_errors(out.errors)
}

/// Extract the submitter ids named by a link value: either
/// `{submitter_id: X}` or a list of such maps.
pub(crate) fn link_targets(value: &Value, many: bool) -> Result<Vec<String>, String> {
    fn one(v: &Value) -> Result<String, String> {
        v.as_object()
            .and_then(|m| m.get("submitter_id"))
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| "link targets are written as {\"submitter_id\": ...}".to_owned())
    }
    let targets = match value {
        Value::Array(items) => items.iter().map(one).collect::<Result<Vec<_>, _>>()?,
        v => vec![one(v)?],
    };
    if !many && targets.len() > 1 {
        return Err(format!("link accepts one target, got {}", targets.len()));
    }
    Ok(targets)
}

fn check_value(model: &DataModel, node_id: &str, prop: &PropertySchema, value: &Value, out: &mut Collector) {
    if prop.kind.is_array() {
        let Some(items) = value.as_array() else {
            out.push(
                prop.name.as_str(),
                ErrorCode::WrongType,
                format!("{} expects an array", prop.name),
            );
            return;
        };
        for (i, item) in items.iter().enumerate() {
            check_scalar(model, node_id, prop, item, &format!("{}[{i}]", prop.name), out);
        }
    } else {
        check_scalar(model, node_id, prop, value, &prop.name, out);
    }
}

fn check_scalar(
    model: &DataModel,
    node_id: &str,
    prop: &PropertySchema,
    value: &Value,
    path: &str,
    out: &mut Collector,
) {
    let kind = prop.kind.element();
    let type_ok = match kind {
        ScalarKind::String | ScalarKind::Enum => value.is_string(),
        ScalarKind::Boolean => value.is_boolean(),
        ScalarKind::Number => value.is_number(),
        ScalarKind::Integer => value.is_i64(),
    };
    if !type_ok {
        out.push(
            path,
            ErrorCode::WrongType,
            format!("expected {}, got {}", kind.type_name(), describe(value)),
        );
        return;
    }
    match kind {
        ScalarKind::Enum => {
            let s = value.as_str().unwrap_or_default();
            let allowed = prop.enum_values.as_deref().unwrap_or_default();
            if !allowed.iter().any(|v| v == s) {
                out.push(path, ErrorCode::NotInEnum, format!("{s:?} is not one of {allowed:?}"));
            }
        }
        ScalarKind::String => {
            if let Some(re) = model.pattern(node_id, &prop.name) {
                let s = value.as_str().unwrap_or_default();
                if !re.is_match(s) {
                    out.push(
                        path,
                        ErrorCode::PatternMismatch,
                        format!("{s:?} does not match {:?}", re.as_str()),
                    );
                }
            }
        }
        ScalarKind::Number | ScalarKind::Integer => {
            let x = value.as_f64().unwrap_or(f64::NAN);
            let below = prop.minimum.is_some_and(|lo| x < lo);
            let above = prop.maximum.is_some_and(|hi| x > hi);
            if below || above {
                out.push(
                    path,
                    ErrorCode::OutOfRange,
                    format!("{value} is outside [{}, {}]", bound(prop.minimum), bound(prop.maximum)),
                );
            }
        }
        ScalarKind::Boolean => {}
    }
}

fn bound(b: Option<f64>) -> String {
    b.map_or_else(|| "unbounded".to_owned(), |v| v.to_string())
}

fn describe(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
