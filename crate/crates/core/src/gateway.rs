//! HTTP front door. Every handler authenticates the bearer token, then
//! delegates to [`Commons`], which authorizes before touching state.

use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, RawQuery, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::authz::{Permission, Principal};
use crate::canon;
use crate::commons::{Commons, CommonsConfig, ETL_SERVICE, INDEX_SERVICE, METADATA_SERVICE};
use crate::error::{Error, Result};
use crate::etlsearch::{AggRequest, SearchRequest};
use crate::graphstore::{ExportContainer, ProjectKey};
use crate::metastore::MetaFilter;
use crate::objectindex::NewObject;

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

/// Default page size for metadata queries.
pub const DEFAULT_METADATA_LIMIT: usize = 10;

/// What a route demands of the caller before any state is read or changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    Public,
    /// Any configured token; results are filtered to readable projects.
    Authenticated,
    /// Permission on `/programs/{p}/projects/{j}` of the addressed project
    /// or entity.
    Project(Permission),
    /// Permission on `/services/{name}`.
    Service(&'static str, Permission),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub guard: Guard,
}

const fn route(method: &'static str, path: &'static str, guard: Guard) -> RouteSpec {
    RouteSpec { method, path, guard }
}

/// The full route/permission map. Submission and import additionally need
/// update on the project when the batch modifies existing records. Index
/// and DRS reads hide storage urls from callers lacking read-storage.
pub const ROUTES: &[RouteSpec] = &[
    route("GET", "/_status", Guard::Public),
    route("GET", "/schema", Guard::Public),
    route("GET", "/dictionary", Guard::Public),
    route("GET", "/portal/config", Guard::Public),
    route("GET", "/portal/{path}", Guard::Public),
    route("POST", "/graphql", Guard::Authenticated),
    route(
        "POST",
        "/submission/{program}/{project}",
        Guard::Project(Permission::Create),
    ),
    route("GET", "/entities/{guid}", Guard::Project(Permission::Read)),
    route("DELETE", "/entities/{guid}", Guard::Project(Permission::Delete)),
    route("GET", "/export/{program}/{project}", Guard::Project(Permission::Read)),
    route(
        "POST",
        "/import/{program}/{project}",
        Guard::Project(Permission::Create),
    ),
    route("POST", "/index/", Guard::Service(INDEX_SERVICE, Permission::Create)),
    route("GET", "/index/{guid}", Guard::Service(INDEX_SERVICE, Permission::Read)),
    route(
        "PUT",
        "/index/{guid}",
        Guard::Service(INDEX_SERVICE, Permission::Update),
    ),
    route(
        "DELETE",
        "/index/{guid}",
        Guard::Service(INDEX_SERVICE, Permission::Delete),
    ),
    route(
        "GET",
        "/ga4gh/drs/v1/objects/{id}",
        Guard::Service(INDEX_SERVICE, Permission::Read),
    ),
    route(
        "POST",
        "/metadata/{guid}",
        Guard::Service(METADATA_SERVICE, Permission::Create),
    ),
    route(
        "PUT",
        "/metadata/{guid}",
        Guard::Service(METADATA_SERVICE, Permission::Update),
    ),
    route(
        "GET",
        "/metadata/{guid}",
        Guard::Service(METADATA_SERVICE, Permission::Read),
    ),
    route("GET", "/metadata", Guard::Service(METADATA_SERVICE, Permission::Read)),
    route(
        "DELETE",
        "/metadata/{guid}",
        Guard::Service(METADATA_SERVICE, Permission::Delete),
    ),
    route("POST", "/search/{index}", Guard::Authenticated),
    route("POST", "/search/{index}/aggs", Guard::Authenticated),
    route("POST", "/admin/etl", Guard::Service(ETL_SERVICE, Permission::Update)),
];

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Unauthenticated => StatusCode::UNAUTHORIZED,
        Error::Forbidden(_) => StatusCode::FORBIDDEN,
        Error::Conflict(_) | Error::RevConflict { .. } => StatusCode::CONFLICT,
        Error::BadRequest(_)
        | Error::Rejected(_)
        | Error::Model(_)
        | Error::ChecksumMismatch { .. }
        | Error::Mapping(_)
        | Error::Syntax { .. } => StatusCode::BAD_REQUEST,
        Error::Config(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self.0 {
            Error::Rejected(result) => canonical(StatusCode::BAD_REQUEST, &*result),
            e => {
                let body = json!({"error": {"code": e.code(), "message": e.to_string()}});
                canonical(status_for(&e), &body)
            }
        }
    }
}

type Reply = std::result::Result<Response, ApiError>;

fn with_type(status: StatusCode, content_type: &'static str, body: impl Into<Body>) -> Response {
    let mut r = Response::new(body.into());
    *r.status_mut() = status;
    r.headers_mut()
        .insert(CONTENT_TYPE, HeaderValue::from_static(content_type));
    r
}

fn canonical<T: Serialize + ?Sized>(status: StatusCode, body: &T) -> Response {
    with_type(status, "application/json", canon::to_string(body))
}

fn ok<T: Serialize + ?Sized>(body: &T) -> Reply {
    Ok(canonical(StatusCode::OK, body))
}

fn principal(c: &Commons, headers: &HeaderMap) -> Result<Principal> {
    match headers.get(AUTHORIZATION) {
        None => c.authenticate(None),
        Some(v) => {
            let token = v
                .to_str()
                .ok()
                .and_then(|s| s.strip_prefix("Bearer "))
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .ok_or(Error::Unauthenticated)?;
            c.authenticate(Some(token))
        }
    }
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::BadRequest(format!("request body: {e}")))
}

/// Run a synchronous commons call off the async workers.
async fn blocking<T, F>(c: &Arc<Commons>, f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce(&Commons) -> Result<T> + Send + 'static,
{
    let c = c.clone();
    tokio::task::spawn_blocking(move || f(&c))
        .await
        .map_err(|e| Error::Io(io::Error::other(e.to_string())))?
}

fn query_pairs(raw: &Option<String>) -> Vec<(String, String)> {
    raw.as_deref()
        .map(|q| form_urlencoded::parse(q.as_bytes()).into_owned().collect())
        .unwrap_or_default()
}

fn query_param(raw: &Option<String>, key: &str) -> Option<String> {
    query_pairs(raw).into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
}

fn required_rev(raw: &Option<String>) -> Result<String> {
    query_param(raw, "rev").ok_or_else(|| Error::BadRequest("missing ?rev= query parameter".into()))
}

type AppState = State<Arc<Commons>>;

async fn status(State(c): AppState) -> Reply {
    ok(&c.status())
}

async fn schema(State(c): AppState) -> Reply {
    Ok(with_type(StatusCode::OK, "text/plain; charset=utf-8", c.query_schema()))
}

async fn dictionary(State(c): AppState) -> Reply {
    ok(&c.dictionary())
}

fn content_type_for(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "map" | "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn portal_file(c: Arc<Commons>, rel: String) -> Reply {
    if rel == "config" {
        return ok(&c.portal_config()?);
    }
    let dir = c
        .config()
        .portal_dir
        .clone()
        .ok_or_else(|| Error::NotFound("no portal directory is configured".into()))?;
    let rel = if rel.is_empty() || rel.ends_with('/') {
        format!("{rel}index.html")
    } else {
        rel
    };
    let rel_path = FsPath::new(&rel);
    if !rel_path.components().all(|comp| matches!(comp, Component::Normal(_))) {
        return Err(Error::NotFound(format!("portal/{rel}")).into());
    }
    let path = dir.join(rel_path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(with_type(StatusCode::OK, content_type_for(&path), bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Error::NotFound(format!("portal/{rel}")).into()),
        Err(e) => Err(Error::Io(e).into()),
    }
}

async fn portal_root(State(c): AppState) -> Reply {
    portal_file(c, String::new()).await
}

async fn portal_path(State(c): AppState, Path(rel): Path<String>) -> Reply {
    portal_file(c, rel).await
}

#[derive(Deserialize)]
struct GraphqlBody {
    query: String,
}

async fn graphql(State(c): AppState, headers: HeaderMap, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let req: GraphqlBody = body(&bytes)?;
    let result = blocking(&c, move |c| c.graphql(&p, &req.query)).await?;
    ok(&result)
}

fn records_of(v: Value) -> Vec<Value> {
    match v {
        Value::Array(items) => items,
        single => vec![single],
    }
}

async fn submission(
    State(c): AppState,
    headers: HeaderMap,
    Path((program, project)): Path<(String, String)>,
    bytes: Bytes,
) -> Reply {
    let p = principal(&c, &headers)?;
    let key = ProjectKey::new(&program, &project)?;
    let records = records_of(body(&bytes)?);
    let result = blocking(&c, move |c| c.submit(&p, &key, &records)).await?;
    let status = if result.ok {
        StatusCode::OK
    } else {
        StatusCode::BAD_REQUEST
    };
    Ok(canonical(status, &result))
}

async fn get_entity(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    ok(&c.get_entity(&p, &guid)?)
}

async fn delete_entity(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    blocking(&c, move |c| c.delete_entity(&p, &guid)).await?;
    ok(&json!({"deleted": true}))
}

async fn export(State(c): AppState, headers: HeaderMap, Path((program, project)): Path<(String, String)>) -> Reply {
    let p = principal(&c, &headers)?;
    let key = ProjectKey::new(&program, &project)?;
    let container = blocking(&c, move |c| c.export_project(&p, &key)).await?;
    Ok(with_type(StatusCode::OK, "application/json", container.to_json()))
}

async fn import(
    State(c): AppState,
    headers: HeaderMap,
    Path((program, project)): Path<(String, String)>,
    bytes: Bytes,
) -> Reply {
    let p = principal(&c, &headers)?;
    let key = ProjectKey::new(&program, &project)?;
    let container: ExportContainer = body(&bytes)?;
    let result = blocking(&c, move |c| c.import_project(&p, &key, &container)).await?;
    let status = if result.ok {
        StatusCode::OK
    } else {
        StatusCode::BAD_REQUEST
    };
    Ok(canonical(status, &result))
}

async fn register_object(State(c): AppState, headers: HeaderMap, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let new: NewObject = body(&bytes)?;
    ok(&c.register_object(&p, new)?)
}

async fn get_object(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    ok(&c.get_object(&p, &guid)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UrlsBody {
    urls: Vec<String>,
}

async fn update_object(
    State(c): AppState,
    headers: HeaderMap,
    Path(guid): Path<String>,
    RawQuery(q): RawQuery,
    bytes: Bytes,
) -> Reply {
    let p = principal(&c, &headers)?;
    let rev = required_rev(&q)?;
    let UrlsBody { urls } = body(&bytes)?;
    ok(&c.update_object(&p, &guid, &rev, urls)?)
}

async fn delete_object(
    State(c): AppState,
    headers: HeaderMap,
    Path(guid): Path<String>,
    RawQuery(q): RawQuery,
) -> Reply {
    let p = principal(&c, &headers)?;
    let rev = required_rev(&q)?;
    c.delete_object(&p, &guid, &rev)?;
    ok(&json!({"deleted": true}))
}

async fn drs(State(c): AppState, headers: HeaderMap, Path(id): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    ok(&c.drs_object(&p, &id)?)
}

async fn create_metadata(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let doc: Value = body(&bytes)?;
    ok(&c.create_metadata(&p, &guid, doc)?)
}

async fn replace_metadata(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let doc: Value = body(&bytes)?;
    ok(&c.replace_metadata(&p, &guid, doc)?)
}

async fn get_metadata(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    ok(&c.get_metadata(&p, &guid)?)
}

async fn delete_metadata(State(c): AppState, headers: HeaderMap, Path(guid): Path<String>) -> Reply {
    let p = principal(&c, &headers)?;
    c.delete_metadata(&p, &guid)?;
    ok(&json!({"deleted": true}))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::BadRequest(format!("{key} must be a non-negative integer")))
}

async fn query_metadata(State(c): AppState, headers: HeaderMap, RawQuery(q): RawQuery) -> Reply {
    let p = principal(&c, &headers)?;
    let mut filters = Vec::new();
    let (mut limit, mut offset, mut data) = (DEFAULT_METADATA_LIMIT, 0, false);
    for (k, v) in query_pairs(&q) {
        match k.as_str() {
            "filter" => filters.push(MetaFilter::parse(&v)?),
            "limit" => limit = parse_usize("limit", &v)?,
            "offset" => offset = parse_usize("offset", &v)?,
            "data" => {
                data = match v.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::BadRequest("data must be true or false".into()).into()),
                }
            }
            other => return Err(Error::BadRequest(format!("unknown query parameter {other:?}")).into()),
        }
    }
    ok(&c.query_metadata(&p, &filters, limit, offset, data)?)
}

async fn search(State(c): AppState, headers: HeaderMap, Path(index): Path<String>, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let req: SearchRequest = if bytes.is_empty() {
        SearchRequest::default()
    } else {
        body(&bytes)?
    };
    let result = blocking(&c, move |c| c.search(&p, &index, &req)).await?;
    ok(&result)
}

async fn aggs(State(c): AppState, headers: HeaderMap, Path(index): Path<String>, bytes: Bytes) -> Reply {
    let p = principal(&c, &headers)?;
    let req: AggRequest = body(&bytes)?;
    let result = blocking(&c, move |c| c.aggregate(&p, &index, &req)).await?;
    ok(&result)
}

async fn admin_etl(State(c): AppState, headers: HeaderMap) -> Reply {
    let p = principal(&c, &headers)?;
    let counts = blocking(&c, move |c| c.reload_etl(&p)).await?;
    ok(&json!({"indices": counts}))
}

async fn fallback() -> Reply {
    Err(Error::NotFound("no such route".into()).into())
}

async fn log_request(req: Request, next: Next) -> Response {
    let (method, path) = (req.method().clone(), req.uri().path().to_owned());
    let resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), "request");
    resp
}

pub fn router(commons: Arc<Commons>) -> Router {
    Router::new()
        .route("/_status", get(status))
        .route("/schema", get(schema))
        .route("/dictionary", get(dictionary))
        .route("/portal", get(portal_root))
        .route("/portal/", get(portal_root))
        .route("/portal/*path", get(portal_path))
        .route("/graphql", post(graphql))
        .route("/submission/:program/:project", post(submission))
        .route("/entities/*guid", get(get_entity).delete(delete_entity))
        .route("/export/:program/:project", get(export))
        .route("/import/:program/:project", post(import))
        .route("/index", post(register_object))
        .route("/index/", post(register_object))
        .route("/index/*guid", get(get_object).put(update_object).delete(delete_object))
        .route("/ga4gh/drs/v1/objects/*id", get(drs))
        .route("/metadata", get(query_metadata))
        .route(
            "/metadata/*guid",
            get(get_metadata)
                .post(create_metadata)
                .put(replace_metadata)
                .delete(delete_metadata),
        )
        .route("/search/:index", post(search))
        .route("/search/:index/aggs", post(aggs))
        .route("/admin/etl", post(admin_etl))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn(log_request))
        .with_state(commons)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    commons: Arc<Commons>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(commons))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting requests and wait for in-flight ones to finish.
    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown_inner()
    }

    fn shutdown_inner(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_inner();
    }
}

/// Bind `addr` (port 0 picks a free port) and serve in the background.
pub fn spawn(commons: Arc<Commons>, addr: SocketAddr) -> Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("minicommons-gateway".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(commons, listener, async {
                    let _ = rx.await;
                })
                .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Open the commons described by `config` and serve until Ctrl-C.
pub fn serve_forever(config: CommonsConfig) -> Result<()> {
    let addr = config.listen_addr()?;
    let commons = Arc::new(Commons::open(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        serve(commons, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}
