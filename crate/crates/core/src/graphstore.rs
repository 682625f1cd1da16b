//! Structured records stored as a graph of entities, grouped by project.
//!
//! Submissions are validated against the data model and applied as one
//! batch: either every record commits or none does. Links are written by
//! `submitter_id` and stored as GUIDs. Each project is persisted as a
//! single canonical snapshot, rewritten atomically after every commit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::lock_api::ArcRwLockReadGuard;
use parking_lot::{Mutex, RawRwLock, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::canon;
use crate::dictionary::{
    self, topological_order, validate_record, DataModel, ErrorCode, ValidationError, ValidationReport,
};
use crate::error::{Error, Result};
use crate::objectindex::mint_guid;

pub const EXPORT_FORMAT: &str = "mini-pfb/1";

/// A `program/project` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProjectKey {
    pub program: String,
    pub project: String,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl ProjectKey {
    pub fn new(program: &str, project: &str) -> Result<ProjectKey> {
        if !valid_name(program) || !valid_name(project) {
            return Err(Error::BadRequest(format!(
                "invalid project {program:?}/{project:?}: names use [A-Za-z0-9_.-]"
            )));
        }
        Ok(ProjectKey {
            program: program.to_owned(),
            project: project.to_owned(),
        })
    }

    pub fn resource(&self) -> crate::authz::ResourcePath {
        crate::authz::ResourcePath::project(&self.program, &self.project)
    }
}

impl fmt::Display for ProjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.program, self.project)
    }
}

impl FromStr for ProjectKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (program, project) = s
            .split_once('/')
            .ok_or_else(|| Error::BadRequest(format!("project {s:?} is not program/project")))?;
        ProjectKey::new(program, project)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub guid: String,
    pub node_id: String,
    pub project: String,
    pub submitter_id: String,
    pub properties: Map<String, Value>,
    pub links: BTreeMap<String, Vec<String>>,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
}

/// An entity together with the entities that link to it, grouped by backref.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    #[serde(flatten)]
    pub entity: Entity,
    pub backrefs: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Created,
    Updated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub submitter_id: Option<String>,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionResult {
    pub ok: bool,
    pub outcomes: Vec<RecordOutcome>,
}

impl SubmissionResult {
    pub fn count(&self, action: Action) -> usize {
        self.outcomes.iter().filter(|o| o.action == action).count()
    }

    /// Every validation error across the batch.
    pub fn errors(&self) -> impl Iterator<Item = &ValidationError> {
        self.outcomes
            .iter()
            .filter_map(|o| o.report.as_ref())
            .flat_map(|r| r.errors.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub node: String,
    pub guid: String,
    pub submitter_id: String,
    pub properties: Map<String, Value>,
    pub links: BTreeMap<String, Vec<String>>,
}

/// Self-describing project bundle: the full data model plus every record,
/// in an order where link targets precede their sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportContainer {
    pub format: String,
    pub created: DateTime<Utc>,
    pub dictionary: Value,
    pub dictionary_checksum: String,
    pub nodes_order: Vec<String>,
    pub records: Vec<ExportRecord>,
}

impl ExportContainer {
    /// Wire form: top-level keys in declaration order, nested maps sorted.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("container serializes")
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct ProjectGraph {
    created: Option<DateTime<Utc>>,
    last_modified: Option<DateTime<Utc>>,
    entities: HashMap<String, Entity>,
    #[serde(skip)]
    by_key: BTreeMap<(String, String), String>,
    /// target guid → (source guid, link name)
    #[serde(skip)]
    inbound: HashMap<String, BTreeSet<(String, String)>>,
}

impl ProjectGraph {
    fn reindex(&mut self) {
        self.by_key.clear();
        self.inbound.clear();
        let entities: Vec<Entity> = self.entities.values().cloned().collect();
        for e in &entities {
            self.index(e);
        }
    }

    fn index(&mut self, e: &Entity) {
        self.by_key
            .insert((e.node_id.clone(), e.submitter_id.clone()), e.guid.clone());
        for (link, targets) in &e.links {
            for t in targets {
                self.inbound
                    .entry(t.clone())
                    .or_default()
                    .insert((e.guid.clone(), link.clone()));
            }
        }
    }

    fn unindex_links(&mut self, e: &Entity) {
        for (link, targets) in &e.links {
            for t in targets {
                if let Some(set) = self.inbound.get_mut(t) {
                    set.remove(&(e.guid.clone(), link.clone()));
                    if set.is_empty() {
                        self.inbound.remove(t);
                    }
                }
            }
        }
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    program: &'a str,
    project: &'a str,
    created: Option<DateTime<Utc>>,
    last_modified: Option<DateTime<Utc>>,
    entities: Vec<&'a Entity>,
}

#[derive(Deserialize)]
struct Snapshot {
    program: String,
    project: String,
    created: Option<DateTime<Utc>>,
    last_modified: Option<DateTime<Utc>>,
    entities: Vec<Entity>,
}

struct ProjectSlot {
    writer: Mutex<()>,
    graph: Arc<RwLock<ProjectGraph>>,
}

/// Read-only view over every project, holding read locks for its lifetime
/// so that all lookups see the same committed state.
pub struct GraphView {
    projects: Vec<(ProjectKey, ArcRwLockReadGuard<RawRwLock, ProjectGraph>)>,
}

impl GraphView {
    pub fn projects(&self) -> impl Iterator<Item = &ProjectKey> {
        self.projects.iter().map(|(k, _)| k)
    }

    pub fn entity(&self, guid: &str) -> Option<&Entity> {
        self.projects.iter().find_map(|(_, g)| g.entities.get(guid))
    }

    /// Entities of `node` in `project`, ordered by submitter_id.
    pub fn entities_of<'s>(&'s self, project: &'s ProjectKey, node: &'s str) -> impl Iterator<Item = &'s Entity> + 's {
        self.projects
            .iter()
            .filter(move |(k, _)| k == project)
            .flat_map(move |(_, g)| {
                g.by_key
                    .range((node.to_owned(), String::new())..)
                    .take_while(move |((n, _), _)| n == node)
                    .filter_map(move |(_, guid)| g.entities.get(guid))
            })
    }

    /// Entities of `node` across all projects.
    pub fn all_of<'s>(&'s self, node: &'s str) -> impl Iterator<Item = &'s Entity> + 's {
        self.projects.iter().flat_map(move |(k, _)| self.entities_of(k, node))
    }

    /// Sources linking to `guid` through `link` on nodes of type `source_node`.
    pub fn inbound(&self, guid: &str, source_node: &str, link: &str) -> Vec<&Entity> {
        let mut out = Vec::new();
        for (_, g) in &self.projects {
            if let Some(set) = g.inbound.get(guid) {
                for (src, l) in set {
                    if l == link {
                        if let Some(e) = g.entities.get(src) {
                            if e.node_id == source_node {
                                out.push(e);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.projects.iter().map(|(_, g)| g.entities.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct GraphStore {
    model: Arc<DataModel>,
    guid_prefix: Option<String>,
    projects: RwLock<BTreeMap<ProjectKey, Arc<ProjectSlot>>>,
    guid_index: RwLock<HashMap<String, ProjectKey>>,
    dir: Option<PathBuf>,
}

/// One record after validation, ready to be applied.
struct Planned {
    node: String,
    submitter_id: String,
    properties: Map<String, Value>,
    /// link name → target (node, submitter_id)
    links: BTreeMap<String, Vec<(String, String)>>,
    guid_hint: Option<String>,
}

impl GraphStore {
    pub fn in_memory(model: Arc<DataModel>, guid_prefix: Option<String>) -> GraphStore {
        GraphStore {
            model,
            guid_prefix,
            projects: RwLock::new(BTreeMap::new()),
            guid_index: RwLock::new(HashMap::new()),
            dir: None,
        }
    }

    pub fn open(model: Arc<DataModel>, guid_prefix: Option<String>, dir: PathBuf) -> Result<GraphStore> {
        fs::create_dir_all(&dir)?;
        let mut projects = BTreeMap::new();
        let mut guid_index = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let snap: Snapshot = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let key = ProjectKey::new(&snap.program, &snap.project)?;
            let mut graph = ProjectGraph {
                created: snap.created,
                last_modified: snap.last_modified,
                entities: snap.entities.into_iter().map(|e| (e.guid.clone(), e)).collect(),
                ..ProjectGraph::default()
            };
            graph.reindex();
            for guid in graph.entities.keys() {
                guid_index.insert(guid.clone(), key.clone());
            }
            projects.insert(
                key,
                Arc::new(ProjectSlot {
                    writer: Mutex::new(()),
                    graph: Arc::new(RwLock::new(graph)),
                }),
            );
        }
        Ok(GraphStore {
            model,
            guid_prefix,
            projects: RwLock::new(projects),
            guid_index: RwLock::new(guid_index),
            dir: Some(dir),
        })
    }

    pub fn model(&self) -> &Arc<DataModel> {
        &self.model
    }

    fn slot(&self, key: &ProjectKey) -> Option<Arc<ProjectSlot>> {
        self.projects.read().get(key).cloned()
    }

    fn slot_or_create(&self, key: &ProjectKey) -> Arc<ProjectSlot> {
        if let Some(s) = self.slot(key) {
            return s;
        }
        self.projects
            .write()
            .entry(key.clone())
            .or_insert_with(|| {
                Arc::new(ProjectSlot {
                    writer: Mutex::new(()),
                    graph: Arc::new(RwLock::new(ProjectGraph::default())),
                })
            })
            .clone()
    }

    pub fn project_keys(&self) -> Vec<ProjectKey> {
        self.projects.read().keys().cloned().collect()
    }

    pub fn has_project(&self, key: &ProjectKey) -> bool {
        self.projects.read().contains_key(key)
    }

    /// Project holding `guid`, if any.
    pub fn project_of(&self, guid: &str) -> Option<ProjectKey> {
        self.guid_index.read().get(guid).cloned()
    }

    /// Lock every project for reading.
    pub fn view(&self) -> GraphView {
        let projects = self
            .projects
            .read()
            .iter()
            .map(|(k, s)| (k.clone(), s.graph.read_arc()))
            .collect();
        GraphView { projects }
    }

    pub fn len(&self) -> usize {
        self.guid_index.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validate and apply a batch of records in one transaction.
    ///
    /// Returns `Err(Forbidden)` without touching state when the batch would
    /// update an existing record and `allow_update` is false.
    pub fn submit(&self, project: &ProjectKey, records: &[Value], allow_update: bool) -> Result<SubmissionResult> {
        self.submit_with_hints(project, records, None, allow_update)
    }

    fn submit_with_hints(
        &self,
        project: &ProjectKey,
        records: &[Value],
        guid_hints: Option<&[String]>,
        allow_update: bool,
    ) -> Result<SubmissionResult> {
        let slot = self.slot_or_create(project);
        let _writer = slot.writer.lock();

        let mut reports: Vec<Vec<ValidationError>> = vec![Vec::new(); records.len()];
        let mut planned: Vec<Option<Planned>> = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let p = self.plan_record(rec, &mut reports[i]);
            planned.push(p.map(|mut p| {
                p.guid_hint = guid_hints.and_then(|h| h.get(i)).cloned();
                p
            }));
        }

        let graph = slot.graph.read();
        let batch_keys: BTreeSet<(String, String)> = planned
            .iter()
            .flatten()
            .map(|p| (p.node.clone(), p.submitter_id.clone()))
            .collect();
        let mut any_update = false;
        for (i, p) in planned.iter().enumerate() {
            let Some(p) = p else { continue };
            if graph.by_key.contains_key(&(p.node.clone(), p.submitter_id.clone())) {
                any_update = true;
            }
            for (link, targets) in &p.links {
                for key in targets {
                    if !batch_keys.contains(key) && !graph.by_key.contains_key(key) {
                        reports[i].push(ValidationError {
                            record_index: i,
                            path: link.clone(),
                            code: ErrorCode::BadLink,
                            message: format!("no {} with submitter_id {:?} in project {project}", key.0, key.1),
                        });
                    }
                }
            }
        }
        let failed = reports.iter().any(|r| !r.is_empty());
        if failed {
            let outcomes = records
                .iter()
                .zip(reports)
                .enumerate()
                .map(|(i, (rec, errs))| RecordOutcome {
                    submitter_id: rec.get("submitter_id").and_then(Value::as_str).map(str::to_owned),
                    action: Action::Failed,
                    guid: None,
                    report: (!errs.is_empty()).then(|| ValidationReport::from_errors(errs).with_index(i)),
                })
                .collect();
            return Ok(SubmissionResult { ok: false, outcomes });
        }
        if any_update && !allow_update {
            return Err(Error::Forbidden(format!("batch updates existing records in {project}")));
        }
        drop(graph);

        let planned: Vec<Planned> = planned.into_iter().map(|p| p.expect("validated")).collect();
        let now = Utc::now();
        let mut graph = slot.graph.write();
        let mut guid_index = self.guid_index.write();
        // Assign GUIDs first so links inside the batch resolve.
        let mut batch_guids: HashMap<(String, String), String> = HashMap::new();
        let mut actions = Vec::with_capacity(planned.len());
        for p in &planned {
            let key = (p.node.clone(), p.submitter_id.clone());
            if let Some(g) = graph.by_key.get(&key).or_else(|| batch_guids.get(&key)) {
                let g = g.clone();
                batch_guids.insert(key, g);
                actions.push(Action::Updated);
                continue;
            }
            let guid = match &p.guid_hint {
                Some(h) if !guid_index.contains_key(h) && !batch_guids.values().any(|g| g == h) => h.clone(),
                _ => loop {
                    let g = mint_guid(self.guid_prefix.as_deref());
                    if !guid_index.contains_key(&g) {
                        break g;
                    }
                },
            };
            batch_guids.insert(key, guid);
            actions.push(Action::Created);
        }
        let mut outcomes = Vec::with_capacity(planned.len());
        for (p, action) in planned.into_iter().zip(actions) {
            let key = (p.node.clone(), p.submitter_id.clone());
            let guid = batch_guids[&key].clone();
            let links: BTreeMap<String, Vec<String>> = p
                .links
                .iter()
                .map(|(name, targets)| {
                    let mut gs: Vec<String> = Vec::new();
                    for t in targets {
                        let g = batch_guids
                            .get(t)
                            .or_else(|| graph.by_key.get(t))
                            .expect("resolved")
                            .clone();
                        if !gs.contains(&g) {
                            gs.push(g);
                        }
                    }
                    (name.clone(), gs)
                })
                .collect();
            let created = match graph.entities.get(&guid) {
                Some(old) => {
                    let old = old.clone();
                    graph.unindex_links(&old);
                    old.created
                }
                None => now,
            };
            let entity = Entity {
                guid: guid.clone(),
                node_id: p.node,
                project: project.to_string(),
                submitter_id: p.submitter_id.clone(),
                properties: p.properties,
                links,
                created,
                updated: now,
            };
            graph.index(&entity);
            graph.entities.insert(guid.clone(), entity);
            guid_index.insert(guid.clone(), project.clone());
            outcomes.push(RecordOutcome {
                submitter_id: Some(p.submitter_id),
                action,
                guid: Some(guid),
                report: None,
            });
        }
        graph.created.get_or_insert(now);
        graph.last_modified = Some(now.max(graph.last_modified.unwrap_or(now)));
        drop(guid_index);
        self.persist(project, &graph)?;
        Ok(SubmissionResult { ok: true, outcomes })
    }

    fn plan_record(&self, rec: &Value, errs: &mut Vec<ValidationError>) -> Option<Planned> {
        let node_id = match rec.get("type").and_then(Value::as_str) {
            Some(t) => t,
            None => {
                errs.push(ValidationError {
                    record_index: 0,
                    path: "type".into(),
                    code: ErrorCode::MissingRequired,
                    message: "every record needs a \"type\" naming its node".into(),
                });
                return None;
            }
        };
        errs.extend(validate_record(&self.model, node_id, rec).errors);
        let node = self.model.node(node_id)?;
        let submitter_id = rec.get("submitter_id").and_then(Value::as_str);
        match rec.get("submitter_id") {
            None | Some(Value::Null) => errs.push(ValidationError {
                record_index: 0,
                path: "submitter_id".into(),
                code: ErrorCode::MissingRequired,
                message: "submitter_id is required".into(),
            }),
            // Wrong shapes are already reported by validate_record.
            Some(_) => {}
        }
        let mut links = BTreeMap::new();
        for link in &node.links {
            match rec.get(&link.name).filter(|v| !v.is_null()) {
                None if link.required => errs.push(ValidationError {
                    record_index: 0,
                    path: link.name.clone(),
                    code: ErrorCode::MissingRequired,
                    message: format!("link {:?} to {} is required", link.name, link.target_type),
                }),
                None => {}
                Some(v) => {
                    if let Ok(sids) = dictionary::record::link_targets(v, link.multiplicity.allows_many_targets()) {
                        let targets: Vec<(String, String)> =
                            sids.into_iter().map(|s| (link.target_type.clone(), s)).collect();
                        if link.required && targets.is_empty() {
                            errs.push(ValidationError {
                                record_index: 0,
                                path: link.name.clone(),
                                code: ErrorCode::MissingRequired,
                                message: format!("link {:?} needs at least one target", link.name),
                            });
                        }
                        links.insert(link.name.clone(), targets);
                    }
                }
            }
        }
        if !errs.is_empty() {
            return None;
        }
        let properties = rec
            .as_object()?
            .iter()
            .filter(|(k, v)| !v.is_null() && node.property(k).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Some(Planned {
            node: node_id.to_owned(),
            submitter_id: submitter_id?.to_owned(),
            properties,
            links,
            guid_hint: None,
        })
    }

    fn persist(&self, key: &ProjectKey, graph: &ProjectGraph) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut entities: Vec<&Entity> = graph.entities.values().collect();
        entities.sort_by(|a, b| a.guid.cmp(&b.guid));
        let snap = SnapshotRef {
            program: &key.program,
            project: &key.project,
            created: graph.created,
            last_modified: graph.last_modified,
            entities,
        };
        let body = serde_json::to_vec(&snap).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let file = dir.join(format!("{}.json", hex::encode(key.to_string().as_bytes())));
        canon::write_atomic(&file, &body)?;
        Ok(())
    }

    pub fn get_entity(&self, guid: &str) -> Result<EntityView> {
        let key = self
            .project_of(guid)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        let slot = self
            .slot(&key)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        let graph = slot.graph.read();
        let entity = graph
            .entities
            .get(guid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        let mut backrefs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for b in self.model.backrefs(&entity.node_id) {
            let mut sources: Vec<&Entity> = graph
                .inbound
                .get(guid)
                .into_iter()
                .flatten()
                .filter(|(_, l)| *l == b.link_name)
                .filter_map(|(src, _)| graph.entities.get(src))
                .filter(|e| e.node_id == b.source_node)
                .collect();
            sources.sort_by(|a, b| a.submitter_id.cmp(&b.submitter_id));
            backrefs.insert(b.name.clone(), sources.into_iter().map(|e| e.guid.clone()).collect());
        }
        Ok(EntityView { entity, backrefs })
    }

    /// Remove an entity that nothing links to.
    pub fn delete_entity(&self, guid: &str) -> Result<()> {
        let key = self
            .project_of(guid)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        let slot = self
            .slot(&key)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        let _writer = slot.writer.lock();
        let mut graph = slot.graph.write();
        let entity = graph
            .entities
            .get(guid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        if let Some(inbound) = graph.inbound.get(guid) {
            return Err(Error::Conflict(format!(
                "{} entities link to {guid}; delete them first",
                inbound.len()
            )));
        }
        graph.unindex_links(&entity);
        graph
            .by_key
            .remove(&(entity.node_id.clone(), entity.submitter_id.clone()));
        graph.entities.remove(guid);
        let now = Utc::now();
        graph.last_modified = Some(now.max(graph.last_modified.unwrap_or(now)));
        self.guid_index.write().remove(guid);
        self.persist(&key, &graph)
    }

    pub fn export_project(&self, key: &ProjectKey) -> Result<ExportContainer> {
        let slot = self
            .slot(key)
            .ok_or_else(|| Error::NotFound(format!("unknown project {key}")))?;
        let graph = slot.graph.read();
        let order = topological_order(&self.model);
        let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut entities: Vec<&Entity> = graph.entities.values().collect();
        entities.sort_by(|a, b| {
            let ra = rank.get(a.node_id.as_str()).copied().unwrap_or(usize::MAX);
            let rb = rank.get(b.node_id.as_str()).copied().unwrap_or(usize::MAX);
            (ra, &a.node_id, &a.submitter_id).cmp(&(rb, &b.node_id, &b.submitter_id))
        });
        let records = entities
            .into_iter()
            .map(|e| ExportRecord {
                node: e.node_id.clone(),
                guid: e.guid.clone(),
                submitter_id: e.submitter_id.clone(),
                properties: e.properties.clone(),
                links: e
                    .links
                    .iter()
                    .map(|(name, targets)| {
                        let sids = targets
                            .iter()
                            .filter_map(|g| graph.entities.get(g))
                            .map(|t| t.submitter_id.clone())
                            .collect();
                        (name.clone(), sids)
                    })
                    .collect(),
            })
            .collect();
        Ok(ExportContainer {
            format: EXPORT_FORMAT.into(),
            created: graph
                .last_modified
                .or(graph.created)
                .unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
            dictionary: self.model.to_document(),
            dictionary_checksum: self.model.checksum().to_owned(),
            nodes_order: order,
            records,
        })
    }

    /// Load a container into `project`. The embedded dictionary must hash to
    /// the declared checksum; records are then validated against the live
    /// model and applied atomically. Container GUIDs are kept when free.
    pub fn import_container(
        &self,
        container: &ExportContainer,
        project: &ProjectKey,
        allow_update: bool,
    ) -> Result<SubmissionResult> {
        if container.format != EXPORT_FORMAT {
            return Err(Error::BadRequest(format!(
                "unsupported container format {:?}",
                container.format
            )));
        }
        let actual = canon::md5_hex(canon::value_to_string(&container.dictionary).as_bytes());
        if actual != container.dictionary_checksum {
            return Err(Error::ChecksumMismatch {
                declared: container.dictionary_checksum.clone(),
                actual,
            });
        }
        DataModel::from_document(&container.dictionary).map_err(Error::Model)?;
        let records: Vec<Value> = container.records.iter().map(record_to_submission).collect();
        let hints: Vec<String> = container.records.iter().map(|r| r.guid.clone()).collect();
        self.submit_with_hints(project, &records, Some(&hints), allow_update)
    }

    /// Every link target resolves and has the link's target type. Returns
    /// a description of each violation.
    pub fn integrity_violations(&self) -> Vec<String> {
        let view = self.view();
        let mut out = Vec::new();
        for (key, g) in &view.projects {
            for e in g.entities.values() {
                let Some(node) = self.model.node(&e.node_id) else {
                    out.push(format!("{key}: {} has unknown node {}", e.guid, e.node_id));
                    continue;
                };
                for (name, targets) in &e.links {
                    let Some(link) = node.link(name) else {
                        out.push(format!("{key}: {} has unknown link {name}", e.guid));
                        continue;
                    };
                    for t in targets {
                        match g.entities.get(t) {
                            Some(te) if te.node_id == link.target_type => {}
                            Some(te) => out.push(format!("{key}: {}.{name} → {t} has type {}", e.guid, te.node_id)),
                            None => out.push(format!("{key}: {}.{name} → {t} is dangling", e.guid)),
                        }
                    }
                }
            }
        }
        out
    }
}

fn record_to_submission(r: &ExportRecord) -> Value {
    let mut doc = r.properties.clone();
    doc.insert("type".into(), Value::String(r.node.clone()));
    doc.insert("submitter_id".into(), Value::String(r.submitter_id.clone()));
    for (name, sids) in &r.links {
        let targets = sids.iter().map(|s| serde_json::json!({ "submitter_id": s })).collect();
        doc.insert(name.clone(), Value::Array(targets));
    }
    Value::Object(doc)
}
