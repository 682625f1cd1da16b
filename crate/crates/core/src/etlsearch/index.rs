use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::filter::{FilterExpr, NO_DATA};
use crate::canon;
use crate::error::{Error, Result};

pub const MAX_PAGE: usize = 1024;
pub const DEFAULT_PAGE: usize = 10;

/// One denormalized row.
pub type FlatDoc = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Term,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    #[serde(default)]
    pub filter: Value,
    #[serde(default)]
    pub fields: Option<Vec<String>>,
    #[serde(default)]
    pub first: Option<usize>,
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub sort: Vec<BTreeMap<String, SortOrder>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub total: usize,
    pub hits: Vec<FlatDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggRequest {
    #[serde(default)]
    pub filter: Value,
    pub facets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FacetAgg {
    Term {
        buckets: BTreeMap<String, usize>,
    },
    Range {
        min: Option<Value>,
        max: Option<Value>,
        count: usize,
    },
}

/// Immutable inverted index over a set of flat documents.
///
/// Documents are kept sorted by `id`; a document's position is its id
/// order, so unsorted result sets come out id-ascending for free.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    name: String,
    fields: BTreeMap<String, FieldKind>,
    docs: Vec<FlatDoc>,
    terms: HashMap<String, HashMap<String, FixedBitSet>>,
    numbers: HashMap<String, Vec<(f64, usize)>>,
    present: HashMap<String, FixedBitSet>,
}

#[derive(Serialize, Deserialize)]
struct IndexSnapshot {
    name: String,
    fields: BTreeMap<String, FieldKind>,
    docs: Vec<FlatDoc>,
}

fn term_key(v: &Value) -> String {
    canon::value_to_string(v)
}

fn bucket_label(key: &str) -> String {
    match serde_json::from_str::<Value>(key) {
        Ok(Value::String(s)) => s,
        _ => key.to_owned(),
    }
}

fn doc_id(d: &FlatDoc) -> &str {
    d.get("id").and_then(Value::as_str).unwrap_or_default()
}

impl FlatIndex {
    pub fn build(name: impl Into<String>, fields: BTreeMap<String, FieldKind>, mut docs: Vec<FlatDoc>) -> FlatIndex {
        docs.sort_by(|a, b| doc_id(a).cmp(doc_id(b)));
        let n = docs.len();
        let mut terms: HashMap<String, HashMap<String, FixedBitSet>> = HashMap::new();
        let mut numbers: HashMap<String, Vec<(f64, usize)>> = HashMap::new();
        let mut present: HashMap<String, FixedBitSet> = HashMap::new();
        for (field, kind) in &fields {
            let mut seen = FixedBitSet::with_capacity(n);
            match kind {
                FieldKind::Term => {
                    let postings = terms.entry(field.clone()).or_default();
                    for (i, d) in docs.iter().enumerate() {
                        if let Some(v) = d.get(field).filter(|v| !v.is_null()) {
                            seen.insert(i);
                            postings
                                .entry(term_key(v))
                                .or_insert_with(|| FixedBitSet::with_capacity(n))
                                .insert(i);
                        }
                    }
                }
                FieldKind::Numeric => {
                    let mut col: Vec<(f64, usize)> = Vec::new();
                    for (i, d) in docs.iter().enumerate() {
                        if let Some(x) = d.get(field).and_then(Value::as_f64) {
                            seen.insert(i);
                            col.push((x, i));
                        }
                    }
                    col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    numbers.insert(field.clone(), col);
                }
            }
            present.insert(field.clone(), seen);
        }
        FlatIndex {
            name: name.into(),
            fields,
            docs,
            terms,
            numbers,
            present,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &BTreeMap<String, FieldKind> {
        &self.fields
    }

    pub fn docs(&self) -> &[FlatDoc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Canonical serialized form, used for persistence and comparisons.
    pub fn to_canonical(&self) -> String {
        canon::to_string(&IndexSnapshot {
            name: self.name.clone(),
            fields: self.fields.clone(),
            docs: self.docs.clone(),
        })
    }

    pub fn from_canonical(text: &str) -> Result<FlatIndex> {
        let snap: IndexSnapshot =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("index snapshot: {e}")))?;
        Ok(FlatIndex::build(snap.name, snap.fields, snap.docs))
    }

    fn kind(&self, field: &str) -> Result<FieldKind> {
        self.fields
            .get(field)
            .copied()
            .ok_or_else(|| Error::BadRequest(format!("unknown field {field:?} in index {}", self.name)))
    }

    fn missing(&self, field: &str) -> FixedBitSet {
        let mut m = self.present[field].clone();
        m.toggle_range(..);
        m
    }

    fn numeric_span(&self, field: &str, lo: std::ops::Bound<f64>, hi: std::ops::Bound<f64>) -> FixedBitSet {
        use std::ops::Bound::*;
        let col = &self.numbers[field];
        let start = match lo {
            Included(b) => col.partition_point(|(x, _)| *x < b),
            Excluded(b) => col.partition_point(|(x, _)| *x <= b),
            Unbounded => 0,
        };
        let end = match hi {
            Included(b) => col.partition_point(|(x, _)| *x <= b),
            Excluded(b) => col.partition_point(|(x, _)| *x < b),
            Unbounded => col.len(),
        };
        let mut out = FixedBitSet::with_capacity(self.docs.len());
        for (_, i) in col.get(start..end.max(start)).unwrap_or_default() {
            out.insert(*i);
        }
        out
    }

    /// Check field references and types without evaluating.
    pub fn check_filter(&self, filter: &FilterExpr) -> Result<()> {
        match filter {
            FilterExpr::All => Ok(()),
            FilterExpr::And(c) | FilterExpr::Or(c) => c.iter().try_for_each(|f| self.check_filter(f)),
            FilterExpr::In { field, values } => {
                if self.kind(field)? == FieldKind::Numeric
                    && !values.iter().all(|v| v.is_number() || v.as_str() == Some(NO_DATA))
                {
                    return Err(Error::BadRequest(format!(
                        "IN on numeric field {field:?} takes numbers"
                    )));
                }
                Ok(())
            }
            FilterExpr::Range { field, .. } => match self.kind(field)? {
                FieldKind::Numeric => Ok(()),
                FieldKind::Term => Err(Error::BadRequest(format!("range filter on term field {field:?}"))),
            },
        }
    }

    /// Documents matching `filter` as a bitset over document positions.
    pub fn eval(&self, filter: &FilterExpr) -> Result<FixedBitSet> {
        self.check_filter(filter)?;
        Ok(self.eval_checked(filter))
    }

    fn eval_checked(&self, filter: &FilterExpr) -> FixedBitSet {
        use std::ops::Bound::*;
        let n = self.docs.len();
        match filter {
            FilterExpr::All => {
                let mut all = FixedBitSet::with_capacity(n);
                all.insert_range(..);
                all
            }
            FilterExpr::And(children) => {
                let mut acc = self.eval_checked(&FilterExpr::All);
                for c in children {
                    acc.intersect_with(&self.eval_checked(c));
                }
                acc
            }
            FilterExpr::Or(children) => {
                let mut acc = FixedBitSet::with_capacity(n);
                for c in children {
                    acc.union_with(&self.eval_checked(c));
                }
                acc
            }
            FilterExpr::In { field, values } => {
                let mut acc = FixedBitSet::with_capacity(n);
                let wants_missing = values.iter().any(|v| v.as_str() == Some(NO_DATA));
                match self.fields[field] {
                    FieldKind::Term => {
                        let postings = &self.terms[field];
                        for v in values {
                            if let Some(p) = postings.get(&term_key(v)) {
                                acc.union_with(p);
                            }
                        }
                    }
                    FieldKind::Numeric => {
                        for x in values.iter().filter_map(Value::as_f64) {
                            acc.union_with(&self.numeric_span(field, Included(x), Included(x)));
                        }
                    }
                }
                if wants_missing {
                    acc.union_with(&self.missing(field));
                }
                acc
            }
            FilterExpr::Range { op, field, bound } => {
                use super::filter::RangeOp::*;
                let b = *bound;
                let (lo, hi) = match op {
                    Gte => (Included(b), Unbounded),
                    Gt => (Excluded(b), Unbounded),
                    Lte => (Unbounded, Included(b)),
                    Lt => (Unbounded, Excluded(b)),
                };
                self.numeric_span(field, lo, hi)
            }
        }
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResult> {
        let filter = FilterExpr::from_value(&req.filter)?;
        self.search_with(&filter, req)
    }

    /// Search with an already-parsed filter; `req.filter` is ignored.
    pub fn search_with(&self, filter: &FilterExpr, req: &SearchRequest) -> Result<SearchResult> {
        let first = req.first.unwrap_or(DEFAULT_PAGE);
        if first > MAX_PAGE {
            return Err(Error::BadRequest(format!("first {first} exceeds {MAX_PAGE}")));
        }
        if let Some(fields) = &req.fields {
            for f in fields {
                self.kind(f)?;
            }
        }
        let mut sort_keys = Vec::new();
        for key in &req.sort {
            for (field, order) in key {
                self.kind(field)?;
                sort_keys.push((field.as_str(), *order));
            }
        }
        let matched = self.eval(filter)?;
        let mut ids: Vec<usize> = matched.ones().collect();
        let total = ids.len();
        if !sort_keys.is_empty() {
            ids.sort_by(|&a, &b| {
                for (field, order) in &sort_keys {
                    let ord = compare_values(self.docs[a].get(*field), self.docs[b].get(*field), *order);
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                a.cmp(&b)
            });
        }
        let hits = ids
            .into_iter()
            .skip(req.offset)
            .take(first)
            .map(|i| project(&self.docs[i], req.fields.as_deref()))
            .collect();
        Ok(SearchResult { total, hits })
    }

    pub fn aggregate(&self, req: &AggRequest) -> Result<BTreeMap<String, FacetAgg>> {
        let filter = FilterExpr::from_value(&req.filter)?;
        self.aggregate_with(&filter, &req.facets)
    }

    pub fn aggregate_with(&self, filter: &FilterExpr, facets: &[String]) -> Result<BTreeMap<String, FacetAgg>> {
        for f in facets {
            self.kind(f)?;
        }
        let matched = self.eval(filter)?;
        let mut out = BTreeMap::new();
        for field in facets {
            let agg = match self.fields[field] {
                FieldKind::Term => {
                    let mut buckets = BTreeMap::new();
                    for (key, postings) in &self.terms[field] {
                        let c = postings.intersection(&matched).count();
                        if c > 0 {
                            *buckets.entry(bucket_label(key)).or_insert(0) += c;
                        }
                    }
                    let missing = self.missing(field).intersection(&matched).count();
                    if missing > 0 {
                        *buckets.entry(NO_DATA.to_owned()).or_insert(0) += missing;
                    }
                    FacetAgg::Term { buckets }
                }
                FieldKind::Numeric => {
                    let mut min: Option<&Value> = None;
                    let mut max: Option<&Value> = None;
                    let mut count = 0;
                    for i in matched.ones() {
                        let Some(v) = self.docs[i].get(field).filter(|v| v.is_number()) else {
                            continue;
                        };
                        let x = v.as_f64().unwrap_or_default();
                        count += 1;
                        if min.is_none_or(|m| x < m.as_f64().unwrap_or_default()) {
                            min = Some(v);
                        }
                        if max.is_none_or(|m| x > m.as_f64().unwrap_or_default()) {
                            max = Some(v);
                        }
                    }
                    FacetAgg::Range {
                        min: min.cloned(),
                        max: max.cloned(),
                        count,
                    }
                }
            };
            out.insert(field.clone(), agg);
        }
        Ok(out)
    }
}

fn project(doc: &FlatDoc, fields: Option<&[String]>) -> FlatDoc {
    match fields {
        None => doc.clone(),
        Some(fields) => fields
            .iter()
            .filter_map(|f| doc.get(f).map(|v| (f.clone(), v.clone())))
            .collect(),
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Bool(_) => 0,
        Value::Number(_) => 1,
        Value::String(_) => 2,
        _ => 3,
    }
}

/// Missing values sort last in either direction.
pub(crate) fn compare_values(a: Option<&Value>, b: Option<&Value>, order: SortOrder) -> Ordering {
    let a = a.filter(|v| !v.is_null());
    let b = b.filter(|v| !v.is_null());
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Greater,
        (Some(_), None) => Ordering::Less,
        (Some(x), Some(y)) => {
            let ord = match (x, y) {
                (Value::Number(p), Value::Number(q)) => p
                    .as_f64()
                    .unwrap_or_default()
                    .total_cmp(&q.as_f64().unwrap_or_default()),
                (Value::String(p), Value::String(q)) => p.cmp(q),
                (Value::Bool(p), Value::Bool(q)) => p.cmp(q),
                _ => type_rank(x).cmp(&type_rank(y)),
            };
            match order {
                SortOrder::Asc => ord,
                SortOrder::Desc => ord.reverse(),
            }
        }
    }
}
