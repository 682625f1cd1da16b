//! Read-only graph queries in a small subset of the GraphQL grammar.
//!
//! Every node id is a root field; every link and backref is a nested
//! field. Arguments are `first`/`offset` plus equality on the implicit
//! fields and scalar properties, mirroring the generated query schema.

mod parser;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::canon::scalar_eq;
use crate::dictionary::{DataModel, NodeSchema, PropertyKind, ScalarKind, IMPLICIT_FIELDS};
use crate::error::Error;
use crate::graphstore::{Entity, GraphView};

pub use parser::{parse_query, print_query, Literal, QueryAst, Selection, MAX_DEPTH};

/// Page size for root fields when `first` is not given.
pub const DEFAULT_FIRST: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryError {
    pub message: String,
    #[serde(default)]
    pub path: Vec<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locations: Vec<Location>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<QueryError>,
}

#[derive(Debug)]
enum Via {
    Root,
    Link(String),
    Backref { source_node: String, link: String },
}

#[derive(Debug)]
enum Plan<'a> {
    Invalid,
    Implicit(&'a str),
    Property(&'a str),
    Entities(EntityPlan<'a>),
}

#[derive(Debug)]
struct EntityPlan<'a> {
    via: Via,
    equals: Vec<(&'a str, Value)>,
    first: Option<usize>,
    offset: usize,
    fields: Vec<(&'a str, Plan<'a>)>,
}

struct Planner<'m> {
    model: &'m DataModel,
    errors: Vec<QueryError>,
}

fn path_of(path: &[&str]) -> Vec<Value> {
    path.iter().map(|s| Value::from(*s)).collect()
}

fn literal_fits(kind: ScalarKind, lit: &Literal) -> bool {
    matches!(
        (kind, lit),
        (ScalarKind::String | ScalarKind::Enum, Literal::String(_))
            | (ScalarKind::Integer, Literal::Int(_))
            | (ScalarKind::Number, Literal::Int(_) | Literal::Float(_))
            | (ScalarKind::Boolean, Literal::Boolean(_))
    )
}

impl<'m> Planner<'m> {
    fn error(&mut self, path: &[&str], message: String) {
        self.errors.push(QueryError {
            message,
            path: path_of(path),
            locations: Vec::new(),
        });
    }

    fn entities<'a>(&mut self, target: &'m NodeSchema, sel: &'a Selection, via: Via, path: &[&'a str]) -> Plan<'a>
    where
        'm: 'a,
    {
        let root = matches!(via, Via::Root);
        let mut first = root.then_some(DEFAULT_FIRST);
        let mut offset = 0;
        let mut equals = Vec::new();
        let mut ok = true;
        for (arg, lit) in &sel.args {
            let fits = match arg.as_str() {
                "first" | "offset" => match lit {
                    Literal::Int(n) if *n >= 0 => {
                        let n = usize::try_from(*n).unwrap_or(usize::MAX);
                        if arg == "first" {
                            first = (n > 0).then_some(n);
                        } else {
                            offset = n;
                        }
                        true
                    }
                    _ => false,
                },
                f if IMPLICIT_FIELDS.contains(&f) => matches!(lit, Literal::String(_)),
                p => match target.property(p).map(|p| p.kind) {
                    Some(PropertyKind::Scalar(k)) => literal_fits(k, lit),
                    _ => {
                        self.error(path, format!("unknown argument {arg:?} on field {:?}", sel.name));
                        ok = false;
                        continue;
                    }
                },
            };
            if !fits {
                self.error(path, format!("argument {arg:?} has the wrong type"));
                ok = false;
            } else if arg != "first" && arg != "offset" {
                equals.push((arg.as_str(), lit.to_json()));
            }
        }
        if sel.children.is_empty() {
            self.error(
                path,
                format!(
                    "field {:?} returns {} records and needs a selection set",
                    sel.name, target.id
                ),
            );
            return Plan::Invalid;
        }
        let fields = self.selections(target, &sel.children, path);
        if !ok {
            return Plan::Invalid;
        }
        Plan::Entities(EntityPlan {
            via,
            equals,
            first,
            offset,
            fields,
        })
    }

    fn field<'a>(&mut self, node: &'m NodeSchema, sel: &'a Selection, path: &[&'a str]) -> Plan<'a>
    where
        'm: 'a,
    {
        let name = sel.name.as_str();
        if let Some(link) = node.link(name) {
            let target = self
                .model
                .node(&link.target_type)
                .expect("compiled model resolves links");
            return self.entities(target, sel, Via::Link(link.name.clone()), path);
        }
        if let Some(b) = self.model.backref(&node.id, name) {
            let target = self
                .model
                .node(&b.source_node)
                .expect("compiled model resolves backrefs");
            let via = Via::Backref {
                source_node: b.source_node.clone(),
                link: b.link_name.clone(),
            };
            return self.entities(target, sel, via, path);
        }
        let scalar = if IMPLICIT_FIELDS.contains(&name) {
            Plan::Implicit(name)
        } else if node.property(name).is_some() {
            Plan::Property(name)
        } else {
            self.error(path, format!("unknown field {name:?} on {}", node.id));
            return Plan::Invalid;
        };
        if !sel.args.is_empty() || !sel.children.is_empty() {
            self.error(path, format!("scalar field {name:?} takes no arguments or selections"));
            return Plan::Invalid;
        }
        scalar
    }

    fn selections<'a>(
        &mut self,
        node: &'m NodeSchema,
        sels: &'a [Selection],
        path: &[&'a str],
    ) -> Vec<(&'a str, Plan<'a>)>
    where
        'm: 'a,
    {
        let mut out: Vec<(&'a str, Plan<'a>)> = Vec::new();
        for (i, sel) in sels.iter().enumerate() {
            let mut p = path.to_vec();
            p.push(&sel.name);
            if let Some(prev) = sels[..i].iter().find(|s| s.name == sel.name) {
                if prev != sel {
                    self.error(
                        &p,
                        format!("field {:?} is selected twice with different arguments", sel.name),
                    );
                    if let Some(slot) = out.iter_mut().find(|(n, _)| *n == sel.name) {
                        slot.1 = Plan::Invalid;
                    }
                }
                continue;
            }
            let plan = self.field(node, sel, &p);
            out.push((&sel.name, plan));
        }
        out
    }
}

struct Executor<'v, 'r> {
    view: &'v GraphView,
    readable: &'r dyn Fn(&str) -> bool,
}

fn implicit_value(e: &Entity, field: &str) -> Value {
    match field {
        "id" => Value::String(e.guid.clone()),
        "submitter_id" => Value::String(e.submitter_id.clone()),
        _ => Value::String(e.project.clone()),
    }
}

fn matches(e: &Entity, equals: &[(&str, Value)]) -> bool {
    equals.iter().all(|(field, want)| {
        if IMPLICIT_FIELDS.contains(field) {
            implicit_value(e, field) == *want
        } else {
            e.properties.get(*field).is_some_and(|v| scalar_eq(v, want))
        }
    })
}

impl<'v, 'r> Executor<'v, 'r> {
    fn list(&self, mut rows: Vec<&'v Entity>, plan: &EntityPlan<'_>) -> Value {
        rows.retain(|e| (self.readable)(&e.project) && matches(e, &plan.equals));
        rows.sort_by(|a, b| (&a.submitter_id, &a.project, &a.guid).cmp(&(&b.submitter_id, &b.project, &b.guid)));
        rows.dedup_by(|a, b| a.guid == b.guid);
        let page = rows
            .into_iter()
            .skip(plan.offset)
            .take(plan.first.unwrap_or(usize::MAX));
        Value::Array(page.map(|e| self.object(e, &plan.fields)).collect())
    }

    fn object(&self, e: &'v Entity, fields: &[(&str, Plan<'_>)]) -> Value {
        let mut out = Map::new();
        for (name, plan) in fields {
            let v = match plan {
                Plan::Invalid => Value::Null,
                Plan::Implicit(f) => implicit_value(e, f),
                Plan::Property(p) => e.properties.get(*p).cloned().unwrap_or(Value::Null),
                Plan::Entities(ep) => {
                    let rows = match &ep.via {
                        Via::Root => Vec::new(),
                        Via::Link(l) => e
                            .links
                            .get(l)
                            .into_iter()
                            .flatten()
                            .filter_map(|g| self.view.entity(g))
                            .collect(),
                        Via::Backref { source_node, link } => self.view.inbound(&e.guid, source_node, link),
                    };
                    self.list(rows, ep)
                }
            };
            out.insert((*name).to_owned(), v);
        }
        Value::Object(out)
    }
}

/// Run a parsed query. `readable` decides per project id ("program/project")
/// whether the caller may see its rows; unreadable rows are dropped silently.
pub fn execute(ast: &QueryAst, model: &DataModel, view: &GraphView, readable: &dyn Fn(&str) -> bool) -> QueryResult {
    let mut planner = Planner {
        model,
        errors: Vec::new(),
    };
    let mut roots: Vec<(&str, Plan<'_>)> = Vec::new();
    for (i, sel) in ast.selections.iter().enumerate() {
        let path = [sel.name.as_str()];
        if let Some(prev) = ast.selections[..i].iter().find(|s| s.name == sel.name) {
            if prev != sel {
                planner.error(
                    &path,
                    format!("field {:?} is selected twice with different arguments", sel.name),
                );
                if let Some(slot) = roots.iter_mut().find(|(n, _)| *n == sel.name) {
                    slot.1 = Plan::Invalid;
                }
            }
            continue;
        }
        let plan = match model.node(&sel.name) {
            Some(node) => planner.entities(node, sel, Via::Root, &path),
            None => {
                planner.error(&path, format!("unknown node {:?}", sel.name));
                Plan::Invalid
            }
        };
        roots.push((&sel.name, plan));
    }
    let exec = Executor { view, readable };
    let mut data = Map::new();
    for (name, plan) in &roots {
        let v = match plan {
            Plan::Entities(ep) => exec.list(view.all_of(name).collect(), ep),
            _ => Value::Null,
        };
        data.insert((*name).to_owned(), v);
    }
    QueryResult {
        data: Some(Value::Object(data)),
        errors: planner.errors,
    }
}

/// Parse and execute; a syntax error yields a result with no data.
pub fn run_query(text: &str, model: &DataModel, view: &GraphView, readable: &dyn Fn(&str) -> bool) -> QueryResult {
    match parse_query(text) {
        Ok(ast) => execute(&ast, model, view, readable),
        Err(Error::Syntax { line, column, message }) => QueryResult {
            data: None,
            errors: vec![QueryError {
                message,
                path: Vec::new(),
                locations: vec![Location { line, column }],
            }],
        },
        Err(e) => QueryResult {
            data: None,
            errors: vec![QueryError {
                message: e.to_string(),
                path: Vec::new(),
                locations: Vec::new(),
            }],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::generate_query_schema;
    use crate::dictionary::tests::fixture_model;
    use crate::graphstore::{GraphStore, ProjectKey};
    use serde_json::json;
    use std::sync::Arc;

    fn store() -> GraphStore {
        let g = GraphStore::in_memory(Arc::new(fixture_model()), None);
        let p: ProjectKey = "p1/A".parse().unwrap();
        assert!(g
            .submit(
                &p,
                &[
                    json!({"type": "subject", "submitter_id": "S1", "species": "Homo sapiens"}),
                    json!({"type": "demographic", "submitter_id": "D1", "gender": "female", "age_at_index": 40, "subjects": {"submitter_id": "S1"}}),
                ],
                true,
            )
            .unwrap()
            .ok);
        g
    }

    fn all(_: &str) -> bool {
        true
    }

    fn run(g: &GraphStore, q: &str) -> QueryResult {
        run_query(q, g.model(), &g.view(), &all)
    }

    #[test]
    fn written_then_read() {
        let g = store();
        let r = run(&g, "{ demographic { gender } }");
        assert_eq!(r.errors, vec![]);
        assert_eq!(r.data.unwrap(), json!({"demographic": [{"gender": "female"}]}));
        let r = run(&g, r#"{ demographic(gender: "male") { id } }"#);
        assert_eq!(r.data.unwrap(), json!({"demographic": []}));
    }

    #[test]
    fn nested_links_backrefs_and_implicit_fields() {
        let g = store();
        let r = run(
            &g,
            "{ subject { submitter_id project_id demographics { age_at_index race subjects { species } } } }",
        );
        assert_eq!(r.errors, vec![]);
        assert_eq!(
            r.data.unwrap(),
            json!({"subject": [{"submitter_id": "S1", "project_id": "p1/A", "demographics": [
                {"age_at_index": 40, "race": null, "subjects": [{"species": "Homo sapiens"}]}
            ]}]})
        );
    }

    #[test]
    fn unknown_fields_give_path_errors_and_partial_data() {
        let g = store();
        let r = run(
            &g,
            "{ demographic { gender bogus } nope { id } subject(colour: \"x\") { id } }",
        );
        let data = r.data.unwrap();
        assert_eq!(data["demographic"], json!([{"gender": "female", "bogus": null}]));
        assert_eq!(data["nope"], Value::Null);
        assert_eq!(data["subject"], Value::Null);
        let paths: Vec<Value> = r.errors.iter().map(|e| json!(e.path)).collect();
        assert_eq!(
            paths,
            vec![json!(["demographic", "bogus"]), json!(["nope"]), json!(["subject"])]
        );
    }

    #[test]
    fn argument_types_are_checked() {
        let g = store();
        for q in [
            "{ demographic(age_at_index: \"40\") { id } }",
            "{ demographic(first: -1) { id } }",
            "{ demographic(gender: 1) { id } }",
            "{ demographic(id: 3) { id } }",
            "{ demographic { gender(x: 1) } }",
            "{ demographic { subjects } }",
            "{ demographic { gender { x } } }",
            "{ demographic { id } demographic(first: 1) { id } }",
        ] {
            assert!(!run(&g, q).errors.is_empty(), "{q}");
        }
        let r = run(&g, "{ demographic(weight: 70) { id } demographic(weight: 70) { id } }");
        assert!(r.errors.is_empty());
        let r = run(&g, "{ demographic(age_at_index: 40.0) { gender } }");
        assert!(!r.errors.is_empty(), "integer properties take Int literals");
    }

    #[test]
    fn syntax_errors_have_no_data() {
        let g = store();
        let r = run(&g, "{}");
        assert!(r.data.is_none());
        assert_eq!(r.errors[0].message, "empty selection set");
        assert_eq!(r.errors[0].locations, vec![Location { line: 1, column: 2 }]);
        let text = serde_json::to_value(&r).unwrap();
        assert!(text.get("data").is_none());
    }

    #[test]
    fn authorization_filters_silently() {
        let g = store();
        let r = run_query("{ subject { id } }", g.model(), &g.view(), &|p| p != "p1/A");
        assert_eq!(r.data.unwrap(), json!({"subject": []}));
        assert!(r.errors.is_empty());
    }

    #[test]
    fn root_paging_defaults_and_first_zero() {
        let g = GraphStore::in_memory(Arc::new(fixture_model()), None);
        let p: ProjectKey = "p1/A".parse().unwrap();
        let recs: Vec<Value> = (0..25)
            .map(|i| json!({"type": "subject", "submitter_id": format!("S{i:02}")}))
            .collect();
        assert!(g.submit(&p, &recs, true).unwrap().ok);
        let count = |q: &str| run(&g, q).data.unwrap()["subject"].as_array().unwrap().len();
        assert_eq!(count("{ subject { id } }"), DEFAULT_FIRST);
        assert_eq!(count("{ subject(first: 0) { id } }"), 25);
        assert_eq!(count("{ subject(first: 10, offset: 20) { id } }"), 5);
        let sids = run(&g, "{ subject(first: 3, offset: 1) { submitter_id } }")
            .data
            .unwrap();
        assert_eq!(
            sids,
            json!({"subject": [{"submitter_id": "S01"}, {"submitter_id": "S02"}, {"submitter_id": "S03"}]})
        );
    }

    /// Field and argument names per type, read back from the generated SDL.
    fn schema_fields(sdl: &str) -> Vec<(String, String, Vec<String>)> {
        let mut out = Vec::new();
        let mut current = String::new();
        for line in sdl.lines() {
            if let Some(rest) = line.strip_prefix("type ") {
                current = rest.trim_end_matches(" {").to_owned();
            } else if let Some(body) = line.strip_prefix("  ") {
                let (name, args) = match body.find('(') {
                    Some(i) => {
                        let close = body.find(')').unwrap();
                        let args = body[i + 1..close]
                            .split(", ")
                            .map(|a| a.split(':').next().unwrap().to_owned())
                            .collect();
                        (body[..i].to_owned(), args)
                    }
                    None => (body.split(':').next().unwrap().to_owned(), Vec::new()),
                };
                out.push((current.clone(), name, args));
            }
        }
        out
    }

    fn sample_literal(model: &DataModel, node: &str, arg: &str) -> String {
        match arg {
            "first" | "offset" => "1".into(),
            "id" | "submitter_id" | "project_id" => "\"x\"".into(),
            p => match model.node(node).unwrap().property(p).unwrap().kind {
                PropertyKind::Scalar(ScalarKind::Integer | ScalarKind::Number) => "1".into(),
                PropertyKind::Scalar(ScalarKind::Boolean) => "true".into(),
                _ => "\"x\"".into(),
            },
        }
    }

    #[test]
    fn executor_agrees_with_generated_schema() {
        let g = store();
        let model = g.model();
        let fields = schema_fields(&generate_query_schema(model));
        assert!(!fields.is_empty());
        for (ty, field, args) in &fields {
            let q = if ty == "Query" {
                let a: Vec<String> = args
                    .iter()
                    .map(|a| format!("{a}: {}", sample_literal(model, field, a)))
                    .collect();
                format!("{{ {field}({}) {{ id }} }}", a.join(", "))
            } else {
                let target = model
                    .node(ty)
                    .unwrap()
                    .link(field)
                    .map(|l| l.target_type.clone())
                    .or_else(|| model.backref(ty, field).map(|b| b.source_node.clone()));
                match target {
                    Some(t) => {
                        let a: Vec<String> = args
                            .iter()
                            .map(|a| format!("{a}: {}", sample_literal(model, &t, a)))
                            .collect();
                        format!("{{ {ty} {{ {field}({}) {{ id }} }} }}", a.join(", "))
                    }
                    None => format!("{{ {ty} {{ {field} }} }}"),
                }
            };
            let r = run(&g, &q);
            assert!(r.errors.is_empty(), "{q}: {:?}", r.errors);
        }
        // And the reverse: names absent from the schema are rejected.
        for node in model.nodes() {
            let listed: Vec<&str> = fields
                .iter()
                .filter(|(t, _, _)| *t == node.id)
                .map(|(_, f, _)| f.as_str())
                .collect();
            for candidate in node.properties.keys().chain(["not_a_field".to_owned()].iter()) {
                let r = run(&g, &format!("{{ {} {{ {candidate} }} }}", node.id));
                assert_eq!(
                    r.errors.is_empty(),
                    listed.contains(&candidate.as_str()),
                    "{}.{candidate}",
                    node.id
                );
            }
            let r = run(&g, &format!("{{ {}(not_an_arg: 1) {{ id }} }}", node.id));
            assert!(!r.errors.is_empty());
        }
    }
}
