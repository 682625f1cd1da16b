#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use minicommons::commons::{Commons, CommonsConfig};
use serde_json::Value;
use tower::ServiceExt;

pub const ADMIN: &str = "tkn-admin";
pub const READER: &str = "tkn-reader";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The fixture commons with all state under `data_dir`.
pub fn config(data_dir: &Path) -> CommonsConfig {
    let mut cfg = CommonsConfig::load(&fixtures().join("commons.yaml")).unwrap();
    cfg.data_dir = Some(data_dir.to_path_buf());
    cfg.listen = "127.0.0.1:0".into();
    cfg
}

pub fn open(data_dir: &Path) -> Arc<Commons> {
    Arc::new(Commons::open(config(data_dir)).unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

/// One request through the router without a socket.
pub async fn call(commons: &Arc<Commons>, method: &str, uri: &str, token: Option<&str>, body: Option<&str>) -> Reply {
    let mut req = Request::builder()
        .method(Method::from_bytes(method.as_bytes()).unwrap())
        .uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = req.body(Body::from(body.unwrap_or("").to_owned())).unwrap();
    let resp = minicommons::gateway::router(commons.clone())
        .oneshot(req)
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}
