//! Graph → flat document ETL and the embedded faceted search index.
//!
//! A mapping names a root node and the fields each root entity's document
//! gets: its own scalar properties, properties copied down from ancestors
//! along many-to-one link chains, and counts of descendants reached along
//! backref chains. Rebuilds are full and swap the active index atomically.

mod filter;
mod index;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canon;
use crate::dictionary::{DataModel, Multiplicity, PropertyKind};
use crate::error::{Error, Result};
use crate::graphstore::{Entity, GraphStore, GraphView};

pub use filter::{FilterExpr, RangeOp, NO_DATA};
pub use index::{
    AggRequest, FacetAgg, FieldKind, FlatDoc, FlatIndex, SearchRequest, SearchResult, SortOrder, DEFAULT_PAGE, MAX_PAGE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentProps {
    /// Dotted chain of link names walked from the root toward ancestors.
    pub path: String,
    pub props: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountProp {
    pub name: String,
    /// Dotted chain of backref names walked from the root toward descendants.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtlMapping {
    pub name: String,
    pub root: String,
    #[serde(default)]
    pub props: Vec<String>,
    #[serde(default)]
    pub parent_props: Vec<ParentProps>,
    #[serde(default)]
    pub count_props: Vec<CountProp>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtlConfig {
    pub mappings: Vec<EtlMapping>,
}

impl EtlConfig {
    pub fn from_yaml(text: &str) -> Result<EtlConfig> {
        serde_yaml::from_str(text).map_err(|e| Error::Mapping(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<EtlConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Mapping(format!("{}: {e}", path.display())))?;
        EtlConfig::from_yaml(&text)
    }
}

/// A mapping resolved against a model.
#[derive(Debug, Clone)]
pub struct CompiledMapping {
    pub name: String,
    root: String,
    props: Vec<String>,
    parents: Vec<(Vec<String>, Vec<String>)>,
    counts: Vec<(String, Vec<(String, String)>)>,
    fields: BTreeMap<String, FieldKind>,
}

fn split_chain(path: &str) -> Result<Vec<&str>> {
    let steps: Vec<&str> = path.split('.').collect();
    if path.is_empty() || steps.iter().any(|s| s.is_empty()) {
        return Err(Error::Mapping(format!("malformed path {path:?}")));
    }
    Ok(steps)
}

fn scalar_field(model: &DataModel, node: &str, prop: &str, ctx: &str) -> Result<FieldKind> {
    if prop == "submitter_id" {
        return Ok(FieldKind::Term);
    }
    let p = model
        .node(node)
        .and_then(|n| n.property(prop))
        .ok_or_else(|| Error::Mapping(format!("{ctx}: {node} has no property {prop:?}")))?;
    match p.kind {
        PropertyKind::Array(_) => Err(Error::Mapping(format!(
            "{ctx}: array property {node}.{prop} cannot be flattened"
        ))),
        PropertyKind::Scalar(k) if k.is_numeric() => Ok(FieldKind::Numeric),
        PropertyKind::Scalar(_) => Ok(FieldKind::Term),
    }
}

impl CompiledMapping {
    pub fn compile(model: &DataModel, m: &EtlMapping) -> Result<CompiledMapping> {
        let ctx = format!("mapping {:?}", m.name);
        if model.node(&m.root).is_none() {
            return Err(Error::Mapping(format!("{ctx}: unknown root node {:?}", m.root)));
        }
        let mut fields = BTreeMap::new();
        fields.insert("id".to_owned(), FieldKind::Term);
        fields.insert("project_id".to_owned(), FieldKind::Term);
        let mut add = |name: &str, kind: FieldKind| -> Result<()> {
            if fields.insert(name.to_owned(), kind).is_some() {
                return Err(Error::Mapping(format!("{ctx}: field {name:?} defined twice")));
            }
            Ok(())
        };
        for p in &m.props {
            add(p, scalar_field(model, &m.root, p, &ctx)?)?;
        }
        let mut parents = Vec::new();
        for pp in &m.parent_props {
            let mut node = m.root.as_str();
            let mut steps = Vec::new();
            for step in split_chain(&pp.path)? {
                let link = model
                    .node(node)
                    .and_then(|n| n.link(step))
                    .ok_or_else(|| Error::Mapping(format!("{ctx}: {node} has no link {step:?}")))?;
                if !matches!(link.multiplicity, Multiplicity::ManyToOne | Multiplicity::OneToOne) {
                    return Err(Error::Mapping(format!(
                        "{ctx}: link {node}.{step} is {:?}; parent props follow many_to_one links only",
                        link.multiplicity
                    )));
                }
                steps.push(step.to_owned());
                node = &link.target_type;
            }
            for p in &pp.props {
                add(p, scalar_field(model, node, p, &ctx)?)?;
            }
            parents.push((steps, pp.props.clone()));
        }
        let mut counts = Vec::new();
        for cp in &m.count_props {
            let mut node = m.root.clone();
            let mut steps = Vec::new();
            for step in split_chain(&cp.path)? {
                let b = model
                    .backref(&node, step)
                    .ok_or_else(|| Error::Mapping(format!("{ctx}: {node} has no backref {step:?}")))?;
                steps.push((b.source_node.clone(), b.link_name.clone()));
                node = b.source_node.clone();
            }
            add(&cp.name, FieldKind::Numeric)?;
            counts.push((cp.name.clone(), steps));
        }
        Ok(CompiledMapping {
            name: m.name.clone(),
            root: m.root.clone(),
            props: m.props.clone(),
            parents,
            counts,
            fields,
        })
    }

    pub fn fields(&self) -> &BTreeMap<String, FieldKind> {
        &self.fields
    }
}

fn copy_prop(doc: &mut FlatDoc, e: &Entity, prop: &str) {
    let v = if prop == "submitter_id" {
        Some(Value::String(e.submitter_id.clone()))
    } else {
        e.properties.get(prop).cloned()
    };
    if let Some(v) = v.filter(|v| !v.is_null()) {
        doc.insert(prop.to_owned(), v);
    }
}

/// Flatten one root entity.
fn flatten(view: &GraphView, mapping: &CompiledMapping, root: &Entity) -> FlatDoc {
    let mut doc = FlatDoc::new();
    doc.insert("id".into(), Value::String(root.guid.clone()));
    doc.insert("project_id".into(), Value::String(root.project.clone()));
    for p in &mapping.props {
        copy_prop(&mut doc, root, p);
    }
    for (steps, props) in &mapping.parents {
        let mut cur = Some(root);
        for step in steps {
            cur = cur
                .and_then(|e| e.links.get(step))
                .and_then(|targets| targets.first())
                .and_then(|g| view.entity(g));
        }
        if let Some(ancestor) = cur {
            for p in props {
                copy_prop(&mut doc, ancestor, p);
            }
        }
    }
    for (name, steps) in &mapping.counts {
        let mut frontier: BTreeSet<&str> = BTreeSet::from([root.guid.as_str()]);
        for (source_node, link) in steps {
            frontier = frontier
                .iter()
                .flat_map(|g| view.inbound(g, source_node, link))
                .map(|e| e.guid.as_str())
                .collect();
        }
        doc.insert(name.clone(), Value::from(frontier.len()));
    }
    doc
}

/// Full rebuild of one index from the committed graph.
pub fn run_etl(view: &GraphView, mapping: &CompiledMapping) -> FlatIndex {
    let docs = view.all_of(&mapping.root).map(|e| flatten(view, mapping, e)).collect();
    FlatIndex::build(mapping.name.clone(), mapping.fields.clone(), docs)
}

type IndexSet = BTreeMap<String, Arc<FlatIndex>>;

/// Owns the mapping configuration and the active set of indices.
pub struct EtlService {
    mapping_path: Option<PathBuf>,
    config: RwLock<EtlConfig>,
    active: RwLock<Arc<IndexSet>>,
    rebuild: Mutex<()>,
    dir: Option<PathBuf>,
}

impl EtlService {
    pub fn new(config: EtlConfig) -> EtlService {
        EtlService {
            mapping_path: None,
            config: RwLock::new(config),
            active: RwLock::new(Arc::new(IndexSet::new())),
            rebuild: Mutex::new(()),
            dir: None,
        }
    }

    /// Service whose mappings are re-read from `mapping_path` on every
    /// rebuild, with index snapshots persisted under `dir`.
    pub fn open(mapping_path: Option<PathBuf>, dir: Option<PathBuf>) -> Result<EtlService> {
        let config = match &mapping_path {
            Some(p) => EtlConfig::load(p)?,
            None => EtlConfig::default(),
        };
        let mut indices = IndexSet::new();
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            for entry in fs::read_dir(d)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("json") {
                    let idx = FlatIndex::from_canonical(&fs::read_to_string(&path)?)?;
                    indices.insert(idx.name().to_owned(), Arc::new(idx));
                }
            }
        }
        Ok(EtlService {
            mapping_path,
            config: RwLock::new(config),
            active: RwLock::new(Arc::new(indices)),
            rebuild: Mutex::new(()),
            dir,
        })
    }

    pub fn has_snapshot(&self) -> bool {
        !self.active.read().is_empty()
    }

    pub fn config(&self) -> EtlConfig {
        self.config.read().clone()
    }

    /// Rebuild every index and swap them in together. On any mapping error
    /// the previous indices stay active.
    pub fn rebuild(&self, model: &DataModel, graph: &GraphStore) -> Result<BTreeMap<String, usize>> {
        let _guard = self.rebuild.lock();
        let config = match &self.mapping_path {
            Some(p) => EtlConfig::load(p)?,
            None => self.config.read().clone(),
        };
        let compiled = config
            .mappings
            .iter()
            .map(|m| CompiledMapping::compile(model, m))
            .collect::<Result<Vec<_>>>()?;
        let mut names = BTreeSet::new();
        for c in &compiled {
            if !names.insert(c.name.clone()) {
                return Err(Error::Mapping(format!("index name {:?} used twice", c.name)));
            }
        }
        let view = graph.view();
        let built: IndexSet = compiled
            .iter()
            .map(|c| (c.name.clone(), Arc::new(run_etl(&view, c))))
            .collect();
        drop(view);
        if let Some(d) = &self.dir {
            for idx in built.values() {
                let file = d.join(format!("{}.json", hex::encode(idx.name().as_bytes())));
                canon::write_atomic(&file, idx.to_canonical().as_bytes())?;
            }
            for entry in fs::read_dir(d)? {
                let path = entry?.path();
                let stale = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| hex::decode(s).ok())
                    .and_then(|b| String::from_utf8(b).ok())
                    .is_some_and(|name| !built.contains_key(&name));
                if stale {
                    fs::remove_file(path)?;
                }
            }
        }
        let counts = built.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        *self.config.write() = config;
        *self.active.write() = Arc::new(built);
        Ok(counts)
    }

    pub fn index(&self, name: &str) -> Result<Arc<FlatIndex>> {
        self.active
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("index {name}")))
    }

    pub fn index_names(&self) -> Vec<String> {
        self.active.read().keys().cloned().collect()
    }
}
