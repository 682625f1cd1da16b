use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeOp {
    Gte,
    Gt,
    Lte,
    Lt,
}

impl RangeOp {
    fn wire(self) -> &'static str {
        match self {
            RangeOp::Gte => "GTE",
            RangeOp::Gt => "GT",
            RangeOp::Lte => "LTE",
            RangeOp::Lt => "LT",
        }
    }

    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            RangeOp::Gte => value >= bound,
            RangeOp::Gt => value > bound,
            RangeOp::Lte => value <= bound,
            RangeOp::Lt => value < bound,
        }
    }
}

/// Boolean filter over flat documents.
///
/// Wire form: `{"AND": [..]}`, `{"OR": [..]}`, `{"IN": {field: [values]}}`,
/// `{"GTE"|"GT"|"LTE"|"LT": {field: number}}`. An empty object means
/// "match everything".
#[derive(Debug, Clone, PartialEq)]
pub enum FilterExpr {
    All,
    And(Vec<FilterExpr>),
    Or(Vec<FilterExpr>),
    In { field: String, values: Vec<Value> },
    Range { op: RangeOp, field: String, bound: f64 },
}

/// Term bucket for documents lacking a value; also accepted in `IN` lists
/// to select those documents.
pub const NO_DATA: &str = "no data";

fn single_entry<'a>(m: &'a Map<String, Value>, op: &str) -> Result<(&'a String, &'a Value)> {
    let mut it = m.iter();
    match (it.next(), it.next()) {
        (Some(kv), None) => Ok(kv),
        _ => Err(Error::BadRequest(format!("{op} takes exactly one field"))),
    }
}

impl FilterExpr {
    pub fn from_value(v: &Value) -> Result<FilterExpr> {
        let obj = match v {
            Value::Null => return Ok(FilterExpr::All),
            Value::Object(o) => o,
            _ => return Err(Error::BadRequest("filter must be an object".into())),
        };
        if obj.is_empty() {
            return Ok(FilterExpr::All);
        }
        let (op, arg) = single_entry(obj, "filter")?;
        match op.as_str() {
            "AND" | "OR" => {
                let items = arg
                    .as_array()
                    .ok_or_else(|| Error::BadRequest(format!("{op} takes a list")))?;
                let children = items.iter().map(FilterExpr::from_value).collect::<Result<Vec<_>>>()?;
                Ok(if op == "AND" {
                    FilterExpr::And(children)
                } else {
                    FilterExpr::Or(children)
                })
            }
            "IN" => {
                let m = arg
                    .as_object()
                    .ok_or_else(|| Error::BadRequest("IN takes {field: [values]}".into()))?;
                let (field, values) = single_entry(m, "IN")?;
                let values = values
                    .as_array()
                    .filter(|a| !a.is_empty())
                    .ok_or_else(|| Error::BadRequest(format!("IN {field}: values must be a non-empty list")))?;
                if !values.iter().all(crate::canon::is_scalar) {
                    return Err(Error::BadRequest(format!("IN {field}: values must be scalars")));
                }
                Ok(FilterExpr::In {
                    field: field.clone(),
                    values: values.clone(),
                })
            }
            "GTE" | "GT" | "LTE" | "LT" => {
                let m = arg
                    .as_object()
                    .ok_or_else(|| Error::BadRequest(format!("{op} takes {{field: number}}")))?;
                let (field, bound) = single_entry(m, op)?;
                let bound = bound
                    .as_f64()
                    .ok_or_else(|| Error::BadRequest(format!("{op} {field}: bound must be a number")))?;
                let op = match op.as_str() {
                    "GTE" => RangeOp::Gte,
                    "GT" => RangeOp::Gt,
                    "LTE" => RangeOp::Lte,
                    _ => RangeOp::Lt,
                };
                Ok(FilterExpr::Range {
                    op,
                    field: field.clone(),
                    bound,
                })
            }
            other => Err(Error::BadRequest(format!("unknown filter operator {other:?}"))),
        }
    }

    pub fn to_value(&self) -> Value {
        fn one(k: &str, v: Value) -> Value {
            let mut m = Map::new();
            m.insert(k.to_owned(), v);
            Value::Object(m)
        }
        match self {
            FilterExpr::All => Value::Object(Map::new()),
            FilterExpr::And(c) => one("AND", Value::Array(c.iter().map(Self::to_value).collect())),
            FilterExpr::Or(c) => one("OR", Value::Array(c.iter().map(Self::to_value).collect())),
            FilterExpr::In { field, values } => one("IN", one(field, Value::Array(values.clone()))),
            FilterExpr::Range { op, field, bound } => one(op.wire(), one(field, Value::from(*bound))),
        }
    }

    /// Fields referenced anywhere in the tree.
    pub fn fields(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a FilterExpr, out: &mut Vec<&'a str>) {
            match e {
                FilterExpr::All => {}
                FilterExpr::And(c) | FilterExpr::Or(c) => c.iter().for_each(|x| walk(x, out)),
                FilterExpr::In { field, .. } | FilterExpr::Range { field, .. } => out.push(field),
            }
        }
        walk(self, &mut out);
        out
    }
}
