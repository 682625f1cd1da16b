//! Graph data model: YAML node files compiled into an immutable [`DataModel`].
//!
//! The compiled model drives everything downstream. Record validation,
//! the query schema, ETL mapping resolution and export ordering are all
//! derived from it, so regenerating after a model change regenerates the
//! APIs.

mod query_schema;
pub(crate) mod record;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canon;

pub use query_schema::{generate_query_schema, IMPLICIT_FIELDS};
pub use record::{validate_record, ErrorCode, ValidationError, ValidationReport};

/// Field names every entity carries implicitly; no property, link or
/// backref may reuse them.
pub const RESERVED_FIELDS: [&str; 4] = ["id", "submitter_id", "project_id", "type"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    String,
    Boolean,
    Number,
    Integer,
    Enum,
}

impl ScalarKind {
    fn type_name(self) -> &'static str {
        match self {
            ScalarKind::String => "string",
            ScalarKind::Boolean => "boolean",
            ScalarKind::Number => "number",
            ScalarKind::Integer => "integer",
            ScalarKind::Enum => "enum",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarKind::Number | ScalarKind::Integer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropertyKind {
    Scalar(ScalarKind),
    Array(ScalarKind),
}

impl PropertyKind {
    pub fn element(self) -> ScalarKind {
        match self {
            PropertyKind::Scalar(k) | PropertyKind::Array(k) => k,
        }
    }

    pub fn is_array(self) -> bool {
        matches!(self, PropertyKind::Array(_))
    }
}

/// A typed, optionally constrained property. For arrays the constraints
/// apply to every element.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySchema {
    pub name: String,
    pub kind: PropertyKind,
    pub enum_values: Option<Vec<String>>,
    pub pattern: Option<String>,
    pub minimum: Option<f64>,
    pub maximum: Option<f64>,
    pub description: Option<String>,
}

impl PropertySchema {
    pub fn new(name: impl Into<String>, kind: PropertyKind) -> Self {
        PropertySchema {
            name: name.into(),
            kind,
            enum_values: None,
            pattern: None,
            minimum: None,
            maximum: None,
            description: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    ManyToOne,
    OneToMany,
    ManyToMany,
    OneToOne,
}

impl Multiplicity {
    /// Whether a source entity may point at more than one target.
    pub fn allows_many_targets(self) -> bool {
        matches!(self, Multiplicity::OneToMany | Multiplicity::ManyToMany)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSchema {
    pub name: String,
    pub backref: String,
    #[serde(default)]
    pub label: String,
    pub target_type: String,
    pub multiplicity: Multiplicity,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSchema {
    pub id: String,
    pub title: String,
    pub category: String,
    pub description: String,
    pub links: Vec<LinkSchema>,
    pub required: Vec<String>,
    pub properties: BTreeMap<String, PropertySchema>,
}

impl NodeSchema {
    pub fn new(id: impl Into<String>) -> Self {
        NodeSchema {
            id: id.into(),
            title: String::new(),
            category: String::new(),
            description: String::new(),
            links: Vec::new(),
            required: Vec::new(),
            properties: BTreeMap::new(),
        }
    }

    pub fn link(&self, name: &str) -> Option<&LinkSchema> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn property(&self, name: &str) -> Option<&PropertySchema> {
        self.properties.get(name)
    }

    /// Links that constrain ordering: required and many-to-one.
    pub fn ordering_links(&self) -> impl Iterator<Item = &LinkSchema> {
        self.links
            .iter()
            .filter(|l| l.required && l.multiplicity == Multiplicity::ManyToOne)
    }
}

/// Reverse view of a link, as seen from its target node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backref {
    pub name: String,
    pub source_node: String,
    pub link_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    Parse {
        file: String,
        line: Option<usize>,
        message: String,
    },
    NoNodes,
    DuplicateNode {
        id: String,
    },
    BadIdentifier {
        node: String,
        name: String,
    },
    UnresolvedTarget {
        node: String,
        link: String,
        target: String,
    },
    Cycle(Vec<String>),
    EmptyEnum {
        node: String,
        property: String,
    },
    PatternOnNonString {
        node: String,
        property: String,
    },
    BadPattern {
        node: String,
        property: String,
        message: String,
    },
    BoundsOnNonNumeric {
        node: String,
        property: String,
    },
    BoundsInverted {
        node: String,
        property: String,
    },
    EnumValuesOnNonEnum {
        node: String,
        property: String,
    },
    UnknownRequired {
        node: String,
        name: String,
    },
    DuplicateLinkName {
        node: String,
        name: String,
    },
    NameCollision {
        node: String,
        name: String,
    },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Parse {
                file,
                line: Some(line),
                message,
            } => write!(f, "{file}:{line}: {message}"),
            ModelError::Parse {
                file,
                line: None,
                message,
            } => write!(f, "{file}: {message}"),
            ModelError::NoNodes => f.write_str("no nodes defined"),
            ModelError::DuplicateNode { id } => write!(f, "duplicate node id {id:?}"),
            ModelError::BadIdentifier { node, name } => {
                write!(f, "{node}: {name:?} is not a valid identifier")
            }
            ModelError::UnresolvedTarget { node, link, target } => {
                write!(f, "unresolved target: {node}.{link} points at unknown node {target:?}")
            }
            ModelError::Cycle(path) => write!(f, "cycle: {}", path.join("→")),
            ModelError::EmptyEnum { node, property } => {
                write!(f, "empty enum: {node}.{property} has no enum values")
            }
            ModelError::PatternOnNonString { node, property } => {
                write!(f, "{node}.{property}: pattern is only allowed on strings")
            }
            ModelError::BadPattern {
                node,
                property,
                message,
            } => write!(f, "{node}.{property}: bad pattern: {message}"),
            ModelError::BoundsOnNonNumeric { node, property } => {
                write!(f, "{node}.{property}: minimum/maximum need a numeric type")
            }
            ModelError::BoundsInverted { node, property } => {
                write!(f, "{node}.{property}: minimum is greater than maximum")
            }
            ModelError::EnumValuesOnNonEnum { node, property } => {
                write!(f, "{node}.{property}: enum values on a non-enum property")
            }
            ModelError::UnknownRequired { node, name } => {
                write!(f, "{node}: required entry {name:?} is neither a property nor a link")
            }
            ModelError::DuplicateLinkName { node, name } => {
                write!(f, "{node}: link name or backref {name:?} used twice")
            }
            ModelError::NameCollision { node, name } => {
                write!(f, "{node}: field name {name:?} is reserved or already in use")
            }
        }
    }
}

impl Serialize for ModelError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The compiled graph schema. Immutable; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct DataModel {
    nodes: BTreeMap<String, NodeSchema>,
    backrefs: BTreeMap<String, Vec<Backref>>,
    root_candidates: BTreeSet<String>,
    patterns: HashMap<(String, String), Regex>,
    checksum: String,
}

impl DataModel {
    /// Assemble a model without validating it. Use [`DataModel::compile`]
    /// unless the point is to inspect an invalid model.
    pub fn from_nodes(nodes: impl IntoIterator<Item = NodeSchema>) -> DataModel {
        let nodes: BTreeMap<String, NodeSchema> = nodes.into_iter().map(|n| (n.id.clone(), n)).collect();
        let mut backrefs: BTreeMap<String, Vec<Backref>> = BTreeMap::new();
        for node in nodes.values() {
            for link in &node.links {
                backrefs.entry(link.target_type.clone()).or_default().push(Backref {
                    name: link.backref.clone(),
                    source_node: node.id.clone(),
                    link_name: link.name.clone(),
                });
            }
        }
        for list in backrefs.values_mut() {
            list.sort_by(|a, b| a.name.cmp(&b.name));
        }
        let root_candidates = nodes
            .values()
            .filter(|n| !n.links.iter().any(|l| l.required))
            .map(|n| n.id.clone())
            .collect();
        let mut patterns = HashMap::new();
        for node in nodes.values() {
            for prop in node.properties.values() {
                if let Some(p) = &prop.pattern {
                    if let Ok(re) = Regex::new(p) {
                        patterns.insert((node.id.clone(), prop.name.clone()), re);
                    }
                }
            }
        }
        let mut model = DataModel {
            nodes,
            backrefs,
            root_candidates,
            patterns,
            checksum: String::new(),
        };
        model.checksum = canon::md5_hex(model.canonical_string().as_bytes());
        model
    }

    /// Assemble and validate.
    pub fn compile(nodes: impl IntoIterator<Item = NodeSchema>) -> Result<DataModel, Vec<ModelError>> {
        let model = DataModel::from_nodes(nodes);
        let errors = validate_model(&model);
        if errors.is_empty() {
            Ok(model)
        } else {
            Err(errors)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSchema> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSchema> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Backrefs pointing at `node`, sorted by name.
    pub fn backrefs(&self, node: &str) -> &[Backref] {
        self.backrefs.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn backref(&self, node: &str, name: &str) -> Option<&Backref> {
        self.backrefs(node).iter().find(|b| b.name == name)
    }

    pub fn root_candidates(&self) -> &BTreeSet<String> {
        &self.root_candidates
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub(crate) fn pattern(&self, node: &str, prop: &str) -> Option<&Regex> {
        self.patterns.get(&(node.to_owned(), prop.to_owned()))
    }

    /// The model as a document: node id → node definition in the same
    /// shape as the YAML input.
    pub fn to_document(&self) -> Value {
        let map = self
            .nodes
            .values()
            .map(|n| {
                let raw = RawNode::from(n);
                (n.id.clone(), serde_json::to_value(raw).expect("node serializes"))
            })
            .collect();
        Value::Object(map)
    }

    pub fn canonical_string(&self) -> String {
        canon::value_to_string(&self.to_document())
    }

    /// Inverse of [`DataModel::to_document`]; validates.
    pub fn from_document(doc: &Value) -> Result<DataModel, Vec<ModelError>> {
        let obj = doc.as_object().ok_or_else(|| {
            vec![ModelError::Parse {
                file: "<dictionary>".into(),
                line: None,
                message: "dictionary document must be a map of node id to node".into(),
            }]
        })?;
        let mut nodes = Vec::new();
        let mut errors = Vec::new();
        for (key, value) in obj {
            let source = format!("<dictionary>/{key}");
            match serde_json::from_value::<RawNode>(value.clone()) {
                Ok(raw) => match raw.into_schema(&source) {
                    Ok(n) => nodes.push(n),
                    Err(e) => errors.push(e),
                },
                Err(e) => errors.push(ModelError::Parse {
                    file: source,
                    line: None,
                    message: e.to_string(),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        DataModel::compile(nodes)
    }

    /// Write one YAML file per node into `dir`.
    pub fn write_yaml_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for node in self.nodes.values() {
            let text = serde_yaml::to_string(&RawNode::from(node))
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            canon::write_atomic(&dir.join(format!("{}.yaml", node.id)), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Read every `*.yaml` / `*.yml` file in `dir` and compile the model.
pub fn load_model(dir: &Path) -> Result<DataModel, Vec<ModelError>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        vec![ModelError::Parse {
            file: dir.display().to_string(),
            line: None,
            message: e.to_string(),
        }]
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("yaml") | Some("yml")))
        .collect();
    files.sort();

    let mut nodes = Vec::new();
    let mut errors = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for path in &files {
        let file = path.display().to_string();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                errors.push(ModelError::Parse {
                    file,
                    line: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match serde_yaml::from_str::<RawNode>(&text) {
            Ok(raw) => match raw.into_schema(&file) {
                Ok(node) => {
                    if !seen.insert(node.id.clone()) {
                        errors.push(ModelError::DuplicateNode { id: node.id });
                    } else {
                        nodes.push(node);
                    }
                }
                Err(e) => errors.push(e),
            },
            Err(e) => errors.push(ModelError::Parse {
                file,
                line: e.location().map(|l| l.line()),
                message: e.to_string(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    DataModel::compile(nodes)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Check every structural invariant. Empty result means the model is valid.
pub fn validate_model(model: &DataModel) -> Vec<ModelError> {
    let mut errors = Vec::new();
    if model.is_empty() {
        errors.push(ModelError::NoNodes);
        return errors;
    }
    for node in model.nodes() {
        let nid = &node.id;
        if !is_identifier(nid) {
            errors.push(ModelError::BadIdentifier {
                node: nid.clone(),
                name: nid.clone(),
            });
        }
        // Every field name visible on this node: properties, links, backrefs.
        let mut field_names: BTreeSet<&str> = BTreeSet::new();
        for prop in node.properties.values() {
            check_property(nid, prop, &mut errors);
            if RESERVED_FIELDS.contains(&prop.name.as_str()) || !field_names.insert(&prop.name) {
                errors.push(ModelError::NameCollision {
                    node: nid.clone(),
                    name: prop.name.clone(),
                });
            }
        }
        let mut link_names: BTreeSet<&str> = BTreeSet::new();
        for link in &node.links {
            for name in [&link.name, &link.backref] {
                if !is_identifier(name) {
                    errors.push(ModelError::BadIdentifier {
                        node: nid.clone(),
                        name: name.clone(),
                    });
                }
            }
            if !link_names.insert(&link.name) {
                errors.push(ModelError::DuplicateLinkName {
                    node: nid.clone(),
                    name: link.name.clone(),
                });
            }
            if RESERVED_FIELDS.contains(&link.name.as_str()) || !field_names.insert(&link.name) {
                errors.push(ModelError::NameCollision {
                    node: nid.clone(),
                    name: link.name.clone(),
                });
            }
            if model.node(&link.target_type).is_none() {
                errors.push(ModelError::UnresolvedTarget {
                    node: nid.clone(),
                    link: link.name.clone(),
                    target: link.target_type.clone(),
                });
            }
        }
        let mut backref_names: BTreeSet<&str> = BTreeSet::new();
        for link in &node.links {
            if !backref_names.insert(&link.backref) {
                errors.push(ModelError::DuplicateLinkName {
                    node: nid.clone(),
                    name: link.backref.clone(),
                });
            }
        }
        for backref in model.backrefs(nid) {
            if RESERVED_FIELDS.contains(&backref.name.as_str()) || !field_names.insert(&backref.name) {
                errors.push(ModelError::NameCollision {
                    node: nid.clone(),
                    name: backref.name.clone(),
                });
            }
        }
        for req in &node.required {
            if node.property(req).is_none() && node.link(req).is_none() {
                errors.push(ModelError::UnknownRequired {
                    node: nid.clone(),
                    name: req.clone(),
                });
            }
        }
    }
    if let Some(cycle) = find_cycle(model) {
        errors.push(ModelError::Cycle(cycle));
    }
    errors
}

fn check_property(node: &str, prop: &PropertySchema, errors: &mut Vec<ModelError>) {
    let err_ctx = || (node.to_owned(), prop.name.clone());
    if !is_identifier(&prop.name) {
        errors.push(ModelError::BadIdentifier {
            node: node.to_owned(),
            name: prop.name.clone(),
        });
    }
    let elem = prop.kind.element();
    match (&prop.enum_values, elem) {
        (None, ScalarKind::Enum) => {
            let (node, property) = err_ctx();
            errors.push(ModelError::EmptyEnum { node, property });
        }
        (Some(values), ScalarKind::Enum) if values.is_empty() => {
            let (node, property) = err_ctx();
            errors.push(ModelError::EmptyEnum { node, property });
        }
        (Some(_), k) if k != ScalarKind::Enum => {
            let (node, property) = err_ctx();
            errors.push(ModelError::EnumValuesOnNonEnum { node, property });
        }
        _ => {}
    }
    if let Some(pattern) = &prop.pattern {
        if elem != ScalarKind::String {
            let (node, property) = err_ctx();
            errors.push(ModelError::PatternOnNonString { node, property });
        } else if let Err(e) = Regex::new(pattern) {
            let (node, property) = err_ctx();
            errors.push(ModelError::BadPattern {
                node,
                property,
                message: e.to_string(),
            });
        }
    }
    if (prop.minimum.is_some() || prop.maximum.is_some()) && !elem.is_numeric() {
        let (node, property) = err_ctx();
        errors.push(ModelError::BoundsOnNonNumeric { node, property });
    }
    if let (Some(lo), Some(hi)) = (prop.minimum, prop.maximum) {
        if lo > hi {
            let (node, property) = err_ctx();
            errors.push(ModelError::BoundsInverted { node, property });
        }
    }
}

/// Depth-first search over required many-to-one links. Returns the first
/// cycle found as a closed path, e.g. `[a, b, a]`.
fn find_cycle(model: &DataModel) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    fn visit<'a>(
        model: &'a DataModel,
        id: &'a str,
        marks: &mut HashMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(id, Mark::Grey);
        stack.push(id);
        let node = model.node(id)?;
        let mut targets: Vec<&str> = node
            .ordering_links()
            .map(|l| l.target_type.as_str())
            .filter(|t| model.node(t).is_some())
            .collect();
        targets.sort_unstable();
        for t in targets {
            match marks.get(t).copied().unwrap_or(Mark::White) {
                Mark::Grey => {
                    let start = stack.iter().position(|s| *s == t).unwrap_or(0);
                    let mut cycle: Vec<String> = stack[start..].iter().map(|s| (*s).to_owned()).collect();
                    cycle.push(t.to_owned());
                    return Some(cycle);
                }
                Mark::White => {
                    if let Some(c) = visit(model, t, marks, stack) {
                        return Some(c);
                    }
                }
                Mark::Black => {}
            }
        }
        stack.pop();
        marks.insert(id, Mark::Black);
        None
    }

    let mut marks: HashMap<&str, Mark> = HashMap::new();
    for id in model.node_ids() {
        if marks.get(id).copied().unwrap_or(Mark::White) == Mark::White {
            let mut stack = Vec::new();
            if let Some(c) = visit(model, id, &mut marks, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Node ids ordered so that every node follows the nodes it holds a
/// required many-to-one link to. Ties break lexicographically. Nodes on a
/// cycle (invalid model) are appended at the end in id order.
pub fn topological_order(model: &DataModel) -> Vec<String> {
    let mut pending: BTreeMap<&str, BTreeSet<&str>> = model
        .nodes()
        .map(|n| {
            let deps = n
                .ordering_links()
                .map(|l| l.target_type.as_str())
                .filter(|t| *t != n.id && model.node(t).is_some())
                .collect();
            (n.id.as_str(), deps)
        })
        .collect();
    let mut order = Vec::with_capacity(pending.len());
    loop {
        let ready = pending.iter().find(|(_, deps)| deps.is_empty()).map(|(id, _)| *id);
        let Some(id) = ready else { break };
        pending.remove(id);
        for deps in pending.values_mut() {
            deps.remove(id);
        }
        order.push(id.to_owned());
    }
    order.extend(pending.keys().map(|k| (*k).to_owned()));
    order
}

// ---------------------------------------------------------------------------
// YAML / document representation

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProperty {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    ty: Option<String>,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    enum_values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    maximum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    items: Option<Box<RawProperty>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    category: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    links: Vec<LinkSchema>,
    #[serde(default)]
    required: Vec<String>,
    #[serde(default)]
    properties: BTreeMap<String, RawProperty>,
}

fn scalar_kind(raw: &RawProperty) -> Result<ScalarKind, String> {
    match (raw.ty.as_deref(), &raw.enum_values) {
        (None, Some(_)) | (Some("enum"), _) => Ok(ScalarKind::Enum),
        (Some("string"), _) => Ok(ScalarKind::String),
        (Some("boolean"), _) => Ok(ScalarKind::Boolean),
        (Some("number"), _) => Ok(ScalarKind::Number),
        (Some("integer"), _) => Ok(ScalarKind::Integer),
        (Some("array"), _) => Err("array element kind cannot be an array".into()),
        (Some(other), _) => Err(format!("unknown type {other:?}")),
        (None, None) => Err("property needs a type or an enum".into()),
    }
}

impl RawNode {
    fn into_schema(self, file: &str) -> Result<NodeSchema, ModelError> {
        let mut properties = BTreeMap::new();
        for (name, raw) in self.properties {
            let bad = |message: String| ModelError::Parse {
                file: file.to_owned(),
                line: None,
                message: format!("{}.{name}: {message}", self.id),
            };
            let (kind, constraints) = if raw.ty.as_deref() == Some("array") {
                let items = raw
                    .items
                    .as_deref()
                    .ok_or_else(|| bad("array property needs items".into()))?;
                (PropertyKind::Array(scalar_kind(items).map_err(bad)?), items)
            } else {
                if raw.items.is_some() {
                    return Err(bad("items is only valid on arrays".into()));
                }
                (PropertyKind::Scalar(scalar_kind(&raw).map_err(bad)?), &raw)
            };
            let prop = PropertySchema {
                name: name.clone(),
                kind,
                enum_values: constraints.enum_values.clone(),
                pattern: constraints.pattern.clone(),
                minimum: constraints.minimum,
                maximum: constraints.maximum,
                description: raw.description.clone(),
            };
            properties.insert(name, prop);
        }
        Ok(NodeSchema {
            id: self.id,
            title: self.title,
            category: self.category,
            description: self.description,
            links: self.links,
            required: self.required,
            properties,
        })
    }
}

impl From<&NodeSchema> for RawNode {
    fn from(n: &NodeSchema) -> Self {
        let properties = n
            .properties
            .values()
            .map(|p| {
                let element = RawProperty {
                    ty: match p.kind.element() {
                        ScalarKind::Enum => None,
                        k => Some(k.type_name().to_owned()),
                    },
                    enum_values: p.enum_values.clone(),
                    pattern: p.pattern.clone(),
                    minimum: p.minimum,
                    maximum: p.maximum,
                    description: None,
                    items: None,
                };
                let raw = match p.kind {
                    PropertyKind::Scalar(_) => RawProperty {
                        description: p.description.clone(),
                        ..element
                    },
                    PropertyKind::Array(_) => RawProperty {
                        ty: Some("array".into()),
                        description: p.description.clone(),
                        items: Some(Box::new(element)),
                        ..RawProperty::default()
                    },
                };
                (p.name.clone(), raw)
            })
            .collect();
        RawNode {
            id: n.id.clone(),
            title: n.title.clone(),
            category: n.category.clone(),
            description: n.description.clone(),
            links: n.links.clone(),
            required: n.required.clone(),
            properties,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const SUBJECT_YAML: &str = r#"
id: subject
title: Subject
category: administrative
description: A study participant.
links: []
required: []
properties:
  species:
    type: string
    pattern: "^[A-Z][a-z]+ [a-z]+$"
"#;

    pub(crate) const DEMOGRAPHIC_YAML: &str = r#"
id: demographic
title: Demographic
category: clinical
description: Data for the characterization of the patient by means of segmenting the population.
links:
  - name: subjects
    backref: demographics
    label: describes
    target_type: subject
    multiplicity: many_to_one
    required: true
required:
  - gender
properties:
  gender:
    enum: [male, female, unspecified]
  age_at_index:
    type: integer
    minimum: 0
    maximum: 120
  race:
    type: string
  weight:
    type: number
  ever_smoked:
    type: boolean
  ethnicity_labels:
    type: array
    items:
      type: string
"#;

    pub(crate) fn write_fixture(dir: &Path) {
        fs::write(dir.join("subject.yaml"), SUBJECT_YAML).unwrap();
        fs::write(dir.join("demographic.yaml"), DEMOGRAPHIC_YAML).unwrap();
    }

    pub(crate) fn fixture_model() -> DataModel {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        load_model(dir.path()).unwrap()
    }

    fn linked(id: &str, target: &str) -> NodeSchema {
        let mut n = NodeSchema::new(id);
        n.links.push(LinkSchema {
            name: format!("{target}s"),
            backref: format!("{id}s"),
            label: String::new(),
            target_type: target.into(),
            multiplicity: Multiplicity::ManyToOne,
            required: true,
        });
        n
    }

    #[test]
    fn loads_two_node_fixture() {
        let model = fixture_model();
        assert_eq!(model.len(), 2);
        let demo = model.node("demographic").unwrap();
        assert_eq!(demo.links[0].target_type, "subject");
        assert_eq!(model.checksum().len(), 32);
        assert_eq!(model.root_candidates().iter().collect::<Vec<_>>(), vec!["subject"]);
        assert_eq!(model.backref("subject", "demographics").unwrap().link_name, "subjects");
    }

    #[test]
    fn empty_directory_has_no_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let errs = load_model(dir.path()).unwrap_err();
        assert_eq!(errs, vec![ModelError::NoNodes]);
        assert_eq!(errs[0].to_string(), "no nodes defined");
    }

    #[test]
    fn mutual_required_links_form_a_cycle() {
        let errs = DataModel::compile([linked("a", "b"), linked("b", "a")]).unwrap_err();
        assert!(errs.iter().any(|e| e.to_string() == "cycle: a→b→a"), "{errs:?}");
    }

    #[test]
    fn parse_error_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.yaml"), "id: x\nproperties:\n  a: [unclosed\n").unwrap();
        let errs = load_model(dir.path()).unwrap_err();
        match &errs[0] {
            ModelError::Parse { file, line, .. } => {
                assert!(file.ends_with("bad.yaml"));
                assert!(line.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_node_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("subject_again.yaml"), SUBJECT_YAML).unwrap();
        let errs = load_model(dir.path()).unwrap_err();
        assert_eq!(errs, vec![ModelError::DuplicateNode { id: "subject".into() }]);
    }

    #[test]
    fn validate_model_cases() {
        assert!(validate_model(&fixture_model()).is_empty());

        let mut n = linked("a", "nonexistent");
        n.links[0].target_type = "nonexistent".into();
        let errs = validate_model(&DataModel::from_nodes([n]));
        assert!(matches!(errs.as_slice(), [ModelError::UnresolvedTarget { target, .. }] if target == "nonexistent"));

        let mut n = NodeSchema::new("a");
        let mut p = PropertySchema::new("colour", PropertyKind::Scalar(ScalarKind::Enum));
        p.enum_values = Some(vec![]);
        n.properties.insert("colour".into(), p);
        let errs = validate_model(&DataModel::from_nodes([n]));
        assert!(matches!(errs.as_slice(), [ModelError::EmptyEnum { .. }]));
    }

    #[test]
    fn property_invariants() {
        let mut n = NodeSchema::new("a");
        let mut p = PropertySchema::new("n", PropertyKind::Scalar(ScalarKind::Integer));
        p.minimum = Some(5.0);
        p.maximum = Some(1.0);
        p.pattern = Some("x".into());
        n.properties.insert("n".into(), p);
        n.required.push("missing".into());
        let errs = validate_model(&DataModel::from_nodes([n]));
        assert!(errs.contains(&ModelError::BoundsInverted {
            node: "a".into(),
            property: "n".into()
        }));
        assert!(errs.contains(&ModelError::PatternOnNonString {
            node: "a".into(),
            property: "n".into()
        }));
        assert!(errs.contains(&ModelError::UnknownRequired {
            node: "a".into(),
            name: "missing".into()
        }));
    }

    #[test]
    fn backref_may_not_shadow_target_fields() {
        let mut target = NodeSchema::new("t");
        target.properties.insert(
            "ss".into(),
            PropertySchema::new("ss", PropertyKind::Scalar(ScalarKind::String)),
        );
        let mut s = linked("s", "t");
        s.links[0].backref = "ss".into();
        let errs = validate_model(&DataModel::from_nodes([target, s]));
        assert_eq!(
            errs,
            vec![ModelError::NameCollision {
                node: "t".into(),
                name: "ss".into()
            }]
        );
    }

    #[test]
    fn topological_order_examples() {
        assert_eq!(topological_order(&fixture_model()), vec!["subject", "demographic"]);
        assert_eq!(
            topological_order(&DataModel::from_nodes([NodeSchema::new("solo")])),
            vec!["solo"]
        );
        let chain = DataModel::compile([linked("a", "b"), linked("b", "c"), NodeSchema::new("c")]).unwrap();
        assert_eq!(topological_order(&chain), vec!["c", "b", "a"]);
    }

    #[test]
    fn document_round_trip_is_a_fixed_point() {
        let model = fixture_model();
        let again = DataModel::from_document(&model.to_document()).unwrap();
        assert_eq!(again.checksum(), model.checksum());
        assert_eq!(again.canonical_string(), model.canonical_string());

        let dir = tempfile::tempdir().unwrap();
        model.write_yaml_dir(dir.path()).unwrap();
        let reloaded = load_model(dir.path()).unwrap();
        assert_eq!(reloaded.checksum(), model.checksum());
    }

    #[test]
    fn checksum_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let a = load_model(dir.path()).unwrap();
        let b = load_model(dir.path()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let mut nodes: Vec<NodeSchema> = a.nodes().cloned().collect();
        nodes[0].description.push('!');
        let c = DataModel::compile(nodes).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }
}
