//! Operator command line. Machine-readable documents go to stdout,
//! diagnostics to stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canon;
use crate::commons::CommonsConfig;
use crate::dictionary::load_model;
use crate::graphstore::ProjectKey;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_API: i32 = 3;

pub const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "minicommons", version, about = "Run and operate a miniature data commons")]
struct Cli {
    /// Gateway base URL.
    #[arg(long = "server", global = true, env = "MINICOMMONS_URL")]
    url: Option<String>,
    /// Bearer token sent with every request.
    #[arg(long, global = true, env = "MINICOMMONS_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Client settings file written by `token set`.
    #[arg(long, global = true, env = "MINICOMMONS_CLIENT_CONFIG")]
    client_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Data dictionary tools.
    Dict {
        #[command(subcommand)]
        command: DictCommand,
    },
    /// Serve the commons described by a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Submit a JSON array of records to a project.
    Submit {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Object index tools.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Search index tools.
    Etl {
        #[command(subcommand)]
        command: EtlCommand,
    },
    /// Run a graph query.
    Query(QueryArgs),
    /// Search a flattened index.
    Search {
        #[arg(long)]
        index: String,
        /// Filter document, e.g. '{"IN":{"gender":["female"]}}'.
        #[arg(long, default_value = "{}")]
        filter: String,
        #[arg(long)]
        first: Option<usize>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Write a project's export container to a file.
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Import an export container into a project.
    Import {
        #[arg(long)]
        project: String,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Client credential tools.
    Token {
        #[command(subcommand)]
        command: TokenCommand,
    },
}

#[derive(Debug, Subcommand)]
enum DictCommand {
    /// Load and check a dictionary directory; prints its checksum.
    Validate { dir: PathBuf },
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Hash a local file and register it.
    Register {
        #[arg(long)]
        file: PathBuf,
        /// Storage location; repeatable.
        #[arg(long = "url")]
        urls: Vec<String>,
        /// Copy the file under this local directory (as `{md5}/{file name}`)
        /// and add its `file://` location.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum EtlCommand {
    /// Rebuild every search index on the server.
    Run,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long = "q")]
    q: Option<String>,
}

#[derive(Debug, Subcommand)]
enum TokenCommand {
    /// Store a bearer token in the client settings file.
    Set { token: String },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ClientSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token: Option<String>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn api(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_API,
            message: message.into(),
        }
    }
}

type Outcome = Result<i32, Failure>;

fn settings_path(explicit: Option<PathBuf>) -> Option<PathBuf> {
    explicit.or_else(|| std::env::var_os("HOME").map(|h| Path::new(&h).join(".minicommons.json")))
}

fn read_settings(path: Option<&Path>) -> ClientSettings {
    path.and_then(|p| std::fs::read(p).ok())
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default()
}

struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

enum Reply {
    Ok(String),
    /// A rejected submission or import, carrying the result document.
    Rejected(Value),
}

impl Client {
    fn send(&self, method: reqwest::Method, path: &str, body: Option<String>) -> Result<Reply, Failure> {
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base.trim_end_matches('/')));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b);
        }
        let resp = req
            .send()
            .map_err(|e| Failure::api(format!("request to {} failed: {e}", self.base)))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Failure::api(format!("reading response: {e}")))?;
        if status.is_success() {
            return Ok(Reply::Ok(text));
        }
        let doc: Option<Value> = serde_json::from_str(&text).ok();
        match doc {
            Some(d) if status == reqwest::StatusCode::BAD_REQUEST && d.get("outcomes").is_some() => {
                Ok(Reply::Rejected(d))
            }
            _ => Err(Failure::api(format!("HTTP {}: {text}", status.as_u16()))),
        }
    }

    fn expect_ok(&self, method: reqwest::Method, path: &str, body: Option<String>) -> Result<String, Failure> {
        match self.send(method, path, body)? {
            Reply::Ok(t) => Ok(t),
            Reply::Rejected(d) => Err(Failure::api(canon::value_to_string(&d))),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_project(p: &str) -> Result<ProjectKey, Failure> {
    p.parse().map_err(|e: crate::Error| Failure::usage(e.to_string()))
}

fn report_rejection(doc: &Value, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{}", canon::value_to_string(doc))?;
    for outcome in doc["outcomes"].as_array().into_iter().flatten() {
        for e in outcome["report"]["errors"].as_array().into_iter().flatten() {
            writeln!(
                err,
                "record {}: {}: {}: {}",
                e["record_index"],
                e["path"].as_str().unwrap_or(""),
                e["code"].as_str().unwrap_or(""),
                e["message"].as_str().unwrap_or("")
            )?;
        }
    }
    Ok(())
}

fn hash_file(path: &Path) -> io::Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut hasher = Md5::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        size += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((size, hex::encode(hasher.finalize())))
}

/// Copy `file` to `root/{md5}/{file_name}` and return the absolute path.
fn store_copy(file: &Path, root: &Path, md5: &str, file_name: &str) -> io::Result<PathBuf> {
    let dir = root.join(md5);
    fs::create_dir_all(&dir)?;
    let dest = dir.join(file_name);
    fs::copy(file, &dest)?;
    dest.canonicalize()
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let settings_file = settings_path(cli.client_config);
    let settings = read_settings(settings_file.as_deref());
    let client = || -> Result<Client, Failure> {
        let http = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .map_err(|e| Failure::api(e.to_string()))?;
        Ok(Client {
            base: cli
                .url
                .clone()
                .or_else(|| settings.url.clone())
                .unwrap_or_else(|| DEFAULT_URL.into()),
            token: cli.token.clone().or_else(|| settings.token.clone()),
            http,
        })
    };
    let io_fail = |e: io::Error| Failure::usage(e.to_string());
    use reqwest::Method;
    match cli.command {
        Command::Dict {
            command: DictCommand::Validate { dir },
        } => match load_model(&dir) {
            Ok(model) => {
                let doc = json!({"checksum": model.checksum(), "nodes": model.node_ids().collect::<Vec<_>>()});
                writeln!(out, "{}", canon::value_to_string(&doc)).map_err(io_fail)?;
                Ok(EXIT_OK)
            }
            Err(errors) => {
                for e in errors {
                    writeln!(err, "{e}").map_err(io_fail)?;
                }
                Ok(EXIT_VALIDATION)
            }
        },
        Command::Serve { config } => {
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .with_writer(io::stderr)
                .try_init();
            let cfg = CommonsConfig::load(&config).map_err(|e| Failure::usage(e.to_string()))?;
            match crate::gateway::serve_forever(cfg) {
                Ok(()) => Ok(EXIT_OK),
                Err(e @ crate::Error::Model(_)) => {
                    writeln!(err, "{e}").map_err(io_fail)?;
                    Ok(EXIT_VALIDATION)
                }
                Err(e) => Err(Failure::usage(e.to_string())),
            }
        }
        Command::Submit { project, file } => {
            let key = parse_project(&project)?;
            let text = read_text(&file)?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("{}: not a JSON document: {e}", file.display())))?;
            let path = format!("/submission/{}/{}", key.program, key.project);
            match client()?.send(Method::POST, &path, Some(canon::value_to_string(&doc)))? {
                Reply::Ok(t) => {
                    writeln!(out, "{t}").map_err(io_fail)?;
                    Ok(EXIT_OK)
                }
                Reply::Rejected(d) => {
                    report_rejection(&d, out, err).map_err(io_fail)?;
                    Ok(EXIT_VALIDATION)
                }
            }
        }
        Command::Index {
            command: IndexCommand::Register { file, mut urls, store },
        } => {
            let (size, md5) = hash_file(&file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
            let file_name = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if let Some(root) = store {
                let stored =
                    store_copy(&file, &root, &md5, &file_name).map_err(|e| Failure::usage(format!("store: {e}")))?;
                urls.push(format!("file://{}", stored.display()));
            }
            let body = json!({"file_name": file_name, "size": size, "hashes": {"md5": md5}, "urls": urls});
            let t = client()?.expect_ok(Method::POST, "/index/", Some(body.to_string()))?;
            writeln!(out, "{t}").map_err(io_fail)?;
            Ok(EXIT_OK)
        }
        Command::Etl {
            command: EtlCommand::Run,
        } => {
            let t = client()?.expect_ok(Method::POST, "/admin/etl", None)?;
            writeln!(out, "{t}").map_err(io_fail)?;
            Ok(EXIT_OK)
        }
        Command::Query(QueryArgs { file, q }) => {
            let text = match (file, q) {
                (Some(f), _) => read_text(&f)?,
                (None, Some(q)) => q,
                (None, None) => return Err(Failure::usage("one of --file or --q is required")),
            };
            let t = client()?.expect_ok(Method::POST, "/graphql", Some(json!({"query": text}).to_string()))?;
            writeln!(out, "{t}").map_err(io_fail)?;
            let result: Value = serde_json::from_str(&t).unwrap_or(Value::Null);
            match result.get("errors").and_then(Value::as_array) {
                Some(errors) if !errors.is_empty() => {
                    for e in errors {
                        writeln!(err, "{}", canon::value_to_string(e)).map_err(io_fail)?;
                    }
                    Ok(EXIT_VALIDATION)
                }
                _ => Ok(EXIT_OK),
            }
        }
        Command::Search {
            index,
            filter,
            first,
            offset,
        } => {
            let filter: Value = serde_json::from_str(&filter).map_err(|e| Failure::usage(format!("--filter: {e}")))?;
            let mut body = json!({"filter": filter, "offset": offset});
            if let Some(f) = first {
                body["first"] = json!(f);
            }
            let t = client()?.expect_ok(Method::POST, &format!("/search/{index}"), Some(body.to_string()))?;
            writeln!(out, "{t}").map_err(io_fail)?;
            Ok(EXIT_OK)
        }
        Command::Export { project, out: path } => {
            let key = parse_project(&project)?;
            let t = client()?.expect_ok(Method::GET, &format!("/export/{}/{}", key.program, key.project), None)?;
            canon::write_atomic(&path, t.as_bytes()).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            writeln!(
                out,
                "{}",
                json!({"project": key.to_string(), "out": path, "bytes": t.len()})
            )
            .map_err(io_fail)?;
            Ok(EXIT_OK)
        }
        Command::Import { project, input } => {
            let key = parse_project(&project)?;
            let text = read_text(&input)?;
            let path = format!("/import/{}/{}", key.program, key.project);
            match client()?.send(Method::POST, &path, Some(text))? {
                Reply::Ok(t) => {
                    writeln!(out, "{t}").map_err(io_fail)?;
                    Ok(EXIT_OK)
                }
                Reply::Rejected(d) => {
                    report_rejection(&d, out, err).map_err(io_fail)?;
                    Ok(EXIT_VALIDATION)
                }
            }
        }
        Command::Token {
            command: TokenCommand::Set { token },
        } => {
            let path =
                settings_file.ok_or_else(|| Failure::usage("no client config path; set --client-config or HOME"))?;
            let mut s = read_settings(Some(&path));
            s.token = Some(token);
            if s.url.is_none() {
                s.url = cli.url.clone();
            }
            canon::write_atomic(&path, canon::to_string(&s).as_bytes())
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            writeln!(err, "token saved to {}", path.display()).map_err(io_fail)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
