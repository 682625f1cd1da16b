//! All services wired together behind one authorization-checking facade.
//! The HTTP gateway and the C ABI are thin adapters over [`Commons`].

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::authz::{authorize, require, Decision, Permission, PolicyEngine, Principal, ResourcePath};
use crate::dictionary::{generate_query_schema, load_model, DataModel};
use crate::error::{Error, Result};
use crate::etlsearch::{AggRequest, EtlConfig, EtlService, FacetAgg, FilterExpr, SearchRequest, SearchResult};
use crate::graphstore::{EntityView, ExportContainer, GraphStore, ProjectKey, SubmissionResult};
use crate::metastore::{MetaFilter, MetaQueryResult, MetaStore, MetadataEntry, PutMode};
use crate::objectindex::{DrsObject, IndexRecord, NewObject, ObjectIndex};
use crate::queryengine::{run_query, QueryResult};

pub const INDEX_SERVICE: &str = "index";
pub const METADATA_SERVICE: &str = "metadata";
pub const ETL_SERVICE: &str = "etl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonsConfig {
    /// Host name used in `drs://` self URIs.
    pub host: String,
    /// Root of all persisted state. Absent means in-memory only.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub guid_prefix: Option<String>,
    pub dictionary_dir: PathBuf,
    pub policy_path: PathBuf,
    #[serde(default)]
    pub etl_mapping_path: Option<PathBuf>,
    #[serde(default)]
    pub portal_config_path: Option<PathBuf>,
    #[serde(default)]
    pub portal_dir: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: String,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl CommonsConfig {
    /// Read a YAML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<CommonsConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: CommonsConfig =
            serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dictionary_dir);
        fix(&mut cfg.policy_path);
        for p in [
            &mut cfg.data_dir,
            &mut cfg.etl_mapping_path,
            &mut cfg.portal_config_path,
            &mut cfg.portal_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        self.listen
            .parse()
            .map_err(|e| Error::Config(format!("listen address {:?}: {e}", self.listen)))
    }

    fn check_paths(&self) -> Result<()> {
        let mut required: Vec<(&str, &Path)> = vec![
            ("dictionary_dir", &self.dictionary_dir),
            ("policy_path", &self.policy_path),
        ];
        if let Some(p) = &self.etl_mapping_path {
            required.push(("etl_mapping_path", p));
        }
        if let Some(p) = &self.portal_config_path {
            required.push(("portal_config_path", p));
        }
        if let Some(p) = &self.portal_dir {
            required.push(("portal_dir", p));
        }
        for (key, p) in required {
            if !p.exists() {
                return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

pub struct Commons {
    config: CommonsConfig,
    model: Arc<DataModel>,
    policies: PolicyEngine,
    graph: GraphStore,
    objects: ObjectIndex,
    metadata: MetaStore,
    etl: EtlService,
    portal_config: Option<Value>,
}

fn service(name: &str) -> ResourcePath {
    ResourcePath::service(name)
}

impl Commons {
    /// Load the model and policies, open every store under `data_dir`, and
    /// build the search indices when no snapshot exists yet.
    pub fn open(config: CommonsConfig) -> Result<Commons> {
        config.check_paths()?;
        config.listen_addr()?;
        let model = Arc::new(load_model(&config.dictionary_dir).map_err(Error::Model)?);
        let policies = PolicyEngine::load(&config.policy_path)?;
        let prefix = config.guid_prefix.clone();
        let (graph, objects, metadata, etl) = match &config.data_dir {
            Some(d) => (
                GraphStore::open(model.clone(), prefix.clone(), d.join("graph"))?,
                ObjectIndex::open(d.join("objects"), prefix)?,
                MetaStore::open(d.join("metadata"))?,
                EtlService::open(config.etl_mapping_path.clone(), Some(d.join("etl")))?,
            ),
            None => (
                GraphStore::in_memory(model.clone(), prefix.clone()),
                ObjectIndex::in_memory(prefix),
                MetaStore::in_memory(),
                EtlService::open(config.etl_mapping_path.clone(), None)?,
            ),
        };
        let portal_config = match &config.portal_config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let v: Value =
                    serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Some(v)
            }
            None => None,
        };
        let commons = Commons {
            config,
            model,
            policies,
            graph,
            objects,
            metadata,
            etl,
            portal_config,
        };
        if !commons.etl.has_snapshot() && !commons.etl.config().mappings.is_empty() {
            commons.etl.rebuild(&commons.model, &commons.graph)?;
        }
        Ok(commons)
    }

    /// In-memory commons for embedding and tests.
    pub fn in_memory(model: DataModel, policies: PolicyEngine, etl: EtlConfig, host: &str) -> Commons {
        let model = Arc::new(model);
        Commons {
            config: CommonsConfig {
                host: host.to_owned(),
                data_dir: None,
                guid_prefix: None,
                dictionary_dir: PathBuf::new(),
                policy_path: PathBuf::new(),
                etl_mapping_path: None,
                portal_config_path: None,
                portal_dir: None,
                listen: default_listen(),
            },
            graph: GraphStore::in_memory(model.clone(), None),
            model,
            policies,
            objects: ObjectIndex::in_memory(None),
            metadata: MetaStore::in_memory(),
            etl: EtlService::new(etl),
            portal_config: None,
        }
    }

    pub fn config(&self) -> &CommonsConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<DataModel> {
        &self.model
    }

    pub fn graph(&self) -> &GraphStore {
        &self.graph
    }

    pub fn objects(&self) -> &ObjectIndex {
        &self.objects
    }

    pub fn metadata(&self) -> &MetaStore {
        &self.metadata
    }

    pub fn etl(&self) -> &EtlService {
        &self.etl
    }

    pub fn authenticate(&self, token: Option<&str>) -> Result<Principal> {
        self.policies.authenticate(token)
    }

    pub fn status(&self) -> Value {
        json!({"status": "ok", "model_checksum": self.model.checksum()})
    }

    pub fn query_schema(&self) -> String {
        generate_query_schema(&self.model)
    }

    pub fn dictionary(&self) -> Value {
        self.model.to_document()
    }

    pub fn portal_config(&self) -> Result<Value> {
        self.portal_config
            .clone()
            .ok_or_else(|| Error::NotFound("no portal config is configured".into()))
    }

    fn require_authenticated(principal: &Principal) -> Result<()> {
        if principal.is_anonymous() {
            Err(Error::Unauthenticated)
        } else {
            Ok(())
        }
    }

    fn can(principal: &Principal, permission: Permission, resource: &ResourcePath) -> bool {
        authorize(principal, permission, resource) == Decision::Allow
    }

    // -- graph -----------------------------------------------------------

    /// Needs create on the project; records that would update existing
    /// entities additionally need update.
    pub fn submit(&self, principal: &Principal, project: &ProjectKey, records: &[Value]) -> Result<SubmissionResult> {
        require(principal, Permission::Create, &project.resource())?;
        let allow_update = Self::can(principal, Permission::Update, &project.resource());
        self.graph.submit(project, records, allow_update)
    }

    pub fn get_entity(&self, principal: &Principal, guid: &str) -> Result<EntityView> {
        let project = self
            .graph
            .project_of(guid)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        require(principal, Permission::Read, &project.resource())?;
        self.graph.get_entity(guid)
    }

    pub fn delete_entity(&self, principal: &Principal, guid: &str) -> Result<()> {
        let project = self
            .graph
            .project_of(guid)
            .ok_or_else(|| Error::NotFound(format!("entity {guid}")))?;
        require(principal, Permission::Delete, &project.resource())?;
        self.graph.delete_entity(guid)
    }

    pub fn export_project(&self, principal: &Principal, project: &ProjectKey) -> Result<ExportContainer> {
        require(principal, Permission::Read, &project.resource())?;
        self.graph.export_project(project)
    }

    pub fn import_project(
        &self,
        principal: &Principal,
        project: &ProjectKey,
        container: &ExportContainer,
    ) -> Result<SubmissionResult> {
        require(principal, Permission::Create, &project.resource())?;
        let allow_update = Self::can(principal, Permission::Update, &project.resource());
        self.graph.import_container(container, project, allow_update)
    }

    fn readable_projects(&self, principal: &Principal) -> Vec<String> {
        self.graph
            .project_keys()
            .into_iter()
            .filter(|k| Self::can(principal, Permission::Read, &k.resource()))
            .map(|k| k.to_string())
            .collect()
    }

    /// Rows in projects the caller cannot read are left out silently.
    pub fn graphql(&self, principal: &Principal, query: &str) -> Result<QueryResult> {
        Self::require_authenticated(principal)?;
        let view = self.graph.view();
        let readable = |project: &str| {
            project
                .parse::<ProjectKey>()
                .is_ok_and(|k| Self::can(principal, Permission::Read, &k.resource()))
        };
        Ok(run_query(query, &self.model, &view, &readable))
    }

    // -- search ----------------------------------------------------------

    fn scoped_filter(&self, principal: &Principal, filter: &Value) -> Result<FilterExpr> {
        let user = FilterExpr::from_value(filter)?;
        let scope = FilterExpr::In {
            field: "project_id".into(),
            values: self
                .readable_projects(principal)
                .into_iter()
                .map(Value::String)
                .collect(),
        };
        Ok(FilterExpr::And(vec![user, scope]))
    }

    pub fn search(&self, principal: &Principal, index: &str, req: &SearchRequest) -> Result<SearchResult> {
        Self::require_authenticated(principal)?;
        let idx = self.etl.index(index)?;
        // Validate the caller's filter alone so errors name their fields.
        idx.check_filter(&FilterExpr::from_value(&req.filter)?)?;
        idx.search_with(&self.scoped_filter(principal, &req.filter)?, req)
    }

    pub fn aggregate(
        &self,
        principal: &Principal,
        index: &str,
        req: &AggRequest,
    ) -> Result<BTreeMap<String, FacetAgg>> {
        Self::require_authenticated(principal)?;
        let idx = self.etl.index(index)?;
        idx.check_filter(&FilterExpr::from_value(&req.filter)?)?;
        idx.aggregate_with(&self.scoped_filter(principal, &req.filter)?, &req.facets)
    }

    pub fn reload_etl(&self, principal: &Principal) -> Result<BTreeMap<String, usize>> {
        require(principal, Permission::Update, &service(ETL_SERVICE))?;
        self.etl.rebuild(&self.model, &self.graph)
    }

    // -- objects ---------------------------------------------------------

    pub fn register_object(&self, principal: &Principal, new: NewObject) -> Result<IndexRecord> {
        require(principal, Permission::Create, &service(INDEX_SERVICE))?;
        self.objects.register(new)
    }

    /// Storage locations are only shown to callers holding read-storage.
    pub fn get_object(&self, principal: &Principal, guid: &str) -> Result<IndexRecord> {
        require(principal, Permission::Read, &service(INDEX_SERVICE))?;
        let mut rec = self.objects.get(guid)?;
        if !Self::can(principal, Permission::ReadStorage, &service(INDEX_SERVICE)) {
            rec.urls.clear();
        }
        Ok(rec)
    }

    pub fn update_object(
        &self,
        principal: &Principal,
        guid: &str,
        rev: &str,
        urls: Vec<String>,
    ) -> Result<IndexRecord> {
        require(principal, Permission::Update, &service(INDEX_SERVICE))?;
        self.objects.update_locations(guid, rev, urls)
    }

    pub fn delete_object(&self, principal: &Principal, guid: &str, rev: &str) -> Result<()> {
        require(principal, Permission::Delete, &service(INDEX_SERVICE))?;
        self.objects.delete(guid, rev)
    }

    pub fn drs_object(&self, principal: &Principal, guid: &str) -> Result<DrsObject> {
        require(principal, Permission::Read, &service(INDEX_SERVICE))?;
        let mut obj = self.objects.drs_object(guid, &self.config.host)?;
        if !Self::can(principal, Permission::ReadStorage, &service(INDEX_SERVICE)) {
            obj.access_methods.clear();
        }
        Ok(obj)
    }

    // -- metadata --------------------------------------------------------

    pub fn create_metadata(&self, principal: &Principal, guid: &str, doc: Value) -> Result<MetadataEntry> {
        require(principal, Permission::Create, &service(METADATA_SERVICE))?;
        self.metadata.put_with(guid, doc, PutMode::Create)
    }

    pub fn replace_metadata(&self, principal: &Principal, guid: &str, doc: Value) -> Result<MetadataEntry> {
        require(principal, Permission::Update, &service(METADATA_SERVICE))?;
        self.metadata.put_with(guid, doc, PutMode::Replace)
    }

    pub fn get_metadata(&self, principal: &Principal, guid: &str) -> Result<MetadataEntry> {
        require(principal, Permission::Read, &service(METADATA_SERVICE))?;
        self.metadata.get(guid)
    }

    pub fn query_metadata(
        &self,
        principal: &Principal,
        filters: &[MetaFilter],
        limit: usize,
        offset: usize,
        return_docs: bool,
    ) -> Result<MetaQueryResult> {
        require(principal, Permission::Read, &service(METADATA_SERVICE))?;
        self.metadata.query(filters, limit, offset, return_docs)
    }

    pub fn delete_metadata(&self, principal: &Principal, guid: &str) -> Result<()> {
        require(principal, Permission::Delete, &service(METADATA_SERVICE))?;
        self.metadata.delete(guid)
    }

    /// Canonical exports of every project plus the object and metadata
    /// stores: a fingerprint of all durable state.
    pub fn state_fingerprint(&self) -> Value {
        let projects: BTreeMap<String, Value> = self
            .graph
            .project_keys()
            .into_iter()
            .filter_map(|k| {
                let c = self.graph.export_project(&k).ok()?;
                Some((k.to_string(), serde_json::from_str(&c.to_json()).ok()?))
            })
            .collect();
        json!({
            "projects": projects,
            "objects": self.objects.snapshot(),
            "metadata": self.metadata.snapshot(),
            "indices": self.etl.index_names().iter().filter_map(|n| {
                let idx = self.etl.index(n).ok()?;
                Some((n.clone(), serde_json::from_str::<Value>(&idx.to_canonical()).ok()?))
            }).collect::<BTreeMap<_, _>>(),
        })
    }
}
