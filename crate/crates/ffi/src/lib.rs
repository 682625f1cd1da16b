//! C ABI over the minicommons facade.
//!
//! Every call returns an [`McStatus`]. Documents cross the boundary as
//! NUL-terminated UTF-8 JSON. Strings handed out through `out` parameters
//! belong to the caller and must be released with [`mc_string_free`].
//! On failure a message is available from [`mc_last_error`] on the same
//! thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use minicommons::authz::Principal;
use minicommons::canon;
use minicommons::commons::{Commons, CommonsConfig};
use minicommons::dictionary::validate_record;
use minicommons::graphstore::ProjectKey;
use minicommons::objectindex::NewObject;
use minicommons::Error;
use serde_json::Value;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    NotFound = 4,
    Unauthenticated = 5,
    Forbidden = 6,
    Conflict = 7,
    /// The call completed and produced a document describing rejected input.
    ValidationFailed = 8,
    BadRequest = 9,
    Config = 10,
    Internal = 11,
}

/// Opaque handle to an open commons.
pub struct McCommons {
    inner: Commons,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> McStatus {
    match e {
        Error::NotFound(_) => McStatus::NotFound,
        Error::Unauthenticated => McStatus::Unauthenticated,
        Error::Forbidden(_) => McStatus::Forbidden,
        Error::Conflict(_) | Error::RevConflict { .. } => McStatus::Conflict,
        Error::Rejected(_) => McStatus::ValidationFailed,
        Error::BadRequest(_)
        | Error::Model(_)
        | Error::ChecksumMismatch { .. }
        | Error::Mapping(_)
        | Error::Syntax { .. } => McStatus::BadRequest,
        Error::Config(_) => McStatus::Config,
        Error::Io(_) => McStatus::Internal,
    }
}

struct Fail(McStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Run `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<McStatus, Fail>) -> McStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Fail(s, msg))) => {
            set_last_error(&msg);
            s
        }
        Err(_) => {
            set_last_error("internal panic");
            McStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(McStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(McStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn json(p: *const c_char, what: &str) -> Result<Value, Fail> {
    serde_json::from_str(text(p, what)?).map_err(|e| Fail(McStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn handle<'a>(h: *const McCommons) -> Result<&'a Commons, Fail> {
    h.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| Fail(McStatus::NullArgument, "handle is null".into()))
}

unsafe fn principal(c: &Commons, token: *const c_char) -> Result<Principal, Fail> {
    let token = if token.is_null() {
        None
    } else {
        Some(text(token, "token")?)
    };
    Ok(c.authenticate(token)?)
}

unsafe fn emit(out: *mut *mut c_char, doc: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(McStatus::NullArgument, "out is null".into()));
    }
    let c = CString::new(doc).map_err(|_| Fail(McStatus::Internal, "document contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn clear(out: *mut *mut c_char) {
    if !out.is_null() {
        *out = ptr::null_mut();
    }
}

/// Open the commons described by a YAML config file.
///
/// # Safety
/// `config_path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_commons_open(config_path: *const c_char, out: *mut *mut McCommons) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(McStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let cfg = CommonsConfig::load(Path::new(text(config_path, "config_path")?))?;
        let inner = Commons::open(cfg)?;
        *out = Box::into_raw(Box::new(McCommons { inner }));
        Ok(McStatus::Ok)
    })
}

/// # Safety
/// `h` must come from [`mc_commons_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_commons_free(h: *mut McCommons) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Write `{"status":"ok","model_checksum":…}` to `out`.
///
/// # Safety
/// Pointers must be valid as documented on the module.
#[no_mangle]
pub unsafe extern "C" fn mc_status(h: *const McCommons, out: *mut *mut c_char) -> McStatus {
    guard(|| {
        clear(out);
        emit(out, canon::value_to_string(&handle(h)?.status()))?;
        Ok(McStatus::Ok)
    })
}

/// Submit a JSON array of records to `project` ("program/project").
/// The submission result is written to `out` both on success and when
/// validation rejects the batch (status `ValidationFailed`).
///
/// # Safety
/// Pointers must be valid as documented on the module; `token` may be null.
#[no_mangle]
pub unsafe extern "C" fn mc_submit(
    h: *const McCommons,
    token: *const c_char,
    project: *const c_char,
    records_json: *const c_char,
    out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        clear(out);
        let c = handle(h)?;
        let p = principal(c, token)?;
        let key: ProjectKey = text(project, "project")?.parse()?;
        let records = match json(records_json, "records_json")? {
            Value::Array(items) => items,
            single => vec![single],
        };
        let result = c.submit(&p, &key, &records)?;
        emit(out, canon::to_string(&result))?;
        Ok(if result.ok {
            McStatus::Ok
        } else {
            McStatus::ValidationFailed
        })
    })
}

/// Run a graph query; the result document (data and errors) goes to `out`.
///
/// # Safety
/// Pointers must be valid as documented on the module; `token` may be null.
#[no_mangle]
pub unsafe extern "C" fn mc_graphql(
    h: *const McCommons,
    token: *const c_char,
    query: *const c_char,
    out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        clear(out);
        let c = handle(h)?;
        let p = principal(c, token)?;
        let result = c.graphql(&p, text(query, "query")?)?;
        emit(out, canon::to_string(&result))?;
        Ok(McStatus::Ok)
    })
}

/// Register `{file_name, size, hashes:{md5}, urls}`; the new index record
/// goes to `out`.
///
/// # Safety
/// Pointers must be valid as documented on the module; `token` may be null.
#[no_mangle]
pub unsafe extern "C" fn mc_register_object(
    h: *const McCommons,
    token: *const c_char,
    object_json: *const c_char,
    out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        clear(out);
        let c = handle(h)?;
        let p = principal(c, token)?;
        let new: NewObject = serde_json::from_value(json(object_json, "object_json")?)
            .map_err(|e| Fail(McStatus::InvalidJson, format!("object_json: {e}")))?;
        let rec = c.register_object(&p, new)?;
        emit(out, canon::to_string(&rec))?;
        Ok(McStatus::Ok)
    })
}

/// Resolve a GUID to its DRS object document.
///
/// # Safety
/// Pointers must be valid as documented on the module; `token` may be null.
#[no_mangle]
pub unsafe extern "C" fn mc_drs_object(
    h: *const McCommons,
    token: *const c_char,
    guid: *const c_char,
    out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        clear(out);
        let c = handle(h)?;
        let p = principal(c, token)?;
        let obj = c.drs_object(&p, text(guid, "guid")?)?;
        emit(out, canon::to_string(&obj))?;
        Ok(McStatus::Ok)
    })
}

/// Check one record against the model without storing it. The validation
/// report goes to `out`; status is `ValidationFailed` when it lists errors.
///
/// # Safety
/// Pointers must be valid as documented on the module.
#[no_mangle]
pub unsafe extern "C" fn mc_validate_record(
    h: *const McCommons,
    node_id: *const c_char,
    record_json: *const c_char,
    out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        clear(out);
        let c = handle(h)?;
        let report = validate_record(c.model(), text(node_id, "node_id")?, &json(record_json, "record_json")?);
        emit(out, canon::to_string(&report))?;
        Ok(if report.ok {
            McStatus::Ok
        } else {
            McStatus::ValidationFailed
        })
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn mc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string produced by this library.
#[no_mangle]
pub unsafe extern "C" fn mc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
