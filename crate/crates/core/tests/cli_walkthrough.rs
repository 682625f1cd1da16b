//! Scripted operator session against a real server process.

mod common;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn start(config: &Path, url: &str) -> Server {
    let child = Command::new(env!("CARGO_BIN_EXE_minicommons"))
        .args(["serve", "--config", config.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let server = Server(child);
    let deadline = Instant::now() + Duration::from_secs(30);
    while reqwest::blocking::get(format!("{url}/_status")).is_err() {
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    server
}

fn cli(url: &str, token: &str, args: &[&str]) -> (i32, String, String) {
    let mut full = vec![
        "minicommons",
        "--server",
        url,
        "--token",
        token,
        "--client-config",
        "/nonexistent/client.json",
    ];
    full.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = minicommons::cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, port: u16) -> std::path::PathBuf {
    let f = common::fixtures();
    let text = format!(
        "host: localhost\ndata_dir: {}\nguid_prefix: dg.MINI\ndictionary_dir: {}\npolicy_path: {}\netl_mapping_path: {}\nportal_config_path: {}\nlisten: 127.0.0.1:{port}\n",
        dir.join("data").display(),
        f.join("dd").display(),
        f.join("policy.yaml").display(),
        f.join("etl.yaml").display(),
        f.join("portal.yaml").display(),
    );
    let path = dir.join("commons.yaml");
    std::fs::write(&path, text).unwrap();
    path
}

fn records() -> Value {
    let mut recs = Vec::new();
    for i in 0..6 {
        recs.push(json!({"type": "subject", "submitter_id": format!("S{i}"), "species": "Homo sapiens"}));
        recs.push(json!({"type": "demographic", "submitter_id": format!("D{i}"),
            "gender": if i % 3 == 0 { "male" } else { "female" }, "age_at_index": 30 + i * 5,
            "subjects": {"submitter_id": format!("S{i}")}}));
        recs.push(
            json!({"type": "sample", "submitter_id": format!("X{i}"), "sample_type": "blood",
            "subjects": {"submitter_id": format!("S{i}")}}),
        );
    }
    Value::Array(recs)
}

fn total(url: &str, filter: &str) -> u64 {
    let (code, out, err) = cli(
        url,
        common::READER,
        &["search", "--index", "demographic", "--filter", filter],
    );
    assert_eq!(code, 0, "{err}");
    serde_json::from_str::<Value>(&out).unwrap()["total"].as_u64().unwrap()
}

#[test]
fn validate_serve_submit_index_etl_search_export_wipe_import() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let url = format!("http://127.0.0.1:{port}");
    let config = write_config(dir.path(), port);
    let admin = common::ADMIN;

    let (code, out, _) = cli(
        &url,
        admin,
        &["dict", "validate", common::fixtures().join("dd").to_str().unwrap()],
    );
    assert_eq!(code, 0);
    assert_eq!(
        serde_json::from_str::<Value>(&out).unwrap()["checksum"]
            .as_str()
            .unwrap()
            .len(),
        32
    );

    let server = start(&config, &url);

    let data = dir.path().join("records.json");
    std::fs::write(&data, records().to_string()).unwrap();
    let (code, _, err) = cli(
        &url,
        admin,
        &["submit", "--project", "open/A", "--file", data.to_str().unwrap()],
    );
    assert_eq!(code, 0, "{err}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"[{"type": "demographic", "submitter_id": "DX", "gender": "male", "age_at_index": "forty", "subjects": {"submitter_id": "S0"}}]"#).unwrap();
    let (code, _, err) = cli(
        &url,
        admin,
        &["submit", "--project", "open/A", "--file", bad.to_str().unwrap()],
    );
    assert_eq!(code, 2);
    assert!(err.contains("age_at_index: wrong_type"), "{err}");
    let (code, _, _) = cli(
        &url,
        "tkn-unknown",
        &["submit", "--project", "open/A", "--file", data.to_str().unwrap()],
    );
    assert_eq!(code, 3);

    let empty = dir.path().join("empty.bin");
    std::fs::write(&empty, b"").unwrap();
    let store = dir.path().join("store");
    let (code, out, err) = cli(
        &url,
        admin,
        &[
            "index",
            "register",
            "--file",
            empty.to_str().unwrap(),
            "--url",
            "s3://bucket/empty.bin",
            "--store",
            store.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0, "{err}");
    let rec: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(
        (rec["size"].clone(), rec["hashes"]["md5"].clone()),
        (json!(0), json!("d41d8cd98f00b204e9800998ecf8427e"))
    );
    assert_eq!(rec["file_name"], json!("empty.bin"));
    let copy = store
        .canonicalize()
        .unwrap()
        .join("d41d8cd98f00b204e9800998ecf8427e/empty.bin");
    assert!(copy.is_file());
    assert_eq!(
        rec["urls"],
        json!(["s3://bucket/empty.bin", format!("file://{}", copy.display())])
    );

    let (code, _, err) = cli(&url, admin, &["etl", "run"]);
    assert_eq!(code, 0, "{err}");
    let filters = [
        r#"{}"#,
        r#"{"IN":{"gender":["female"]}}"#,
        r#"{"AND":[{"IN":{"gender":["female"]}},{"GTE":{"age_at_index":40}}]}"#,
    ];
    let before: Vec<u64> = filters.iter().map(|f| total(&url, f)).collect();
    assert_eq!(before, vec![6, 4, 3]);

    let (code, out, _) = cli(
        &url,
        common::READER,
        &[
            "query",
            "--q",
            "{ subject(first: 0) { submitter_id samples { sample_type } } }",
        ],
    );
    assert_eq!(code, 0);
    assert_eq!(
        serde_json::from_str::<Value>(&out).unwrap()["data"]["subject"]
            .as_array()
            .unwrap()
            .len(),
        6
    );
    let (code, _, _) = cli(&url, common::READER, &["query", "--q", "{ subject { bogus } }"]);
    assert_eq!(code, 2);

    let export = dir.path().join("open-A.json");
    let (code, _, err) = cli(
        &url,
        admin,
        &["export", "--project", "open/A", "--out", export.to_str().unwrap()],
    );
    assert_eq!(code, 0, "{err}");

    // Wipe the graph and indices, restart, and restore from the container.
    drop(server);
    std::fs::remove_dir_all(dir.path().join("data/graph")).unwrap();
    std::fs::remove_dir_all(dir.path().join("data/etl")).unwrap();
    let _server = start(&config, &url);
    assert_eq!(total(&url, "{}"), 0);
    let (code, _, err) = cli(
        &url,
        admin,
        &["import", "--project", "open/A", "--in", export.to_str().unwrap()],
    );
    assert_eq!(code, 0, "{err}");
    let (code, _, _) = cli(&url, admin, &["etl", "run"]);
    assert_eq!(code, 0);
    let after: Vec<u64> = filters.iter().map(|f| total(&url, f)).collect();
    assert_eq!(after, before);

    // The index record survived the restart untouched.
    let guid = rec["guid"].as_str().unwrap();
    let got: Value = reqwest::blocking::Client::new()
        .get(format!("{url}/index/{guid}"))
        .bearer_auth(admin)
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(got, rec);
}
