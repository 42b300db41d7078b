//! C interface to the query rewriter.
//!
//! Requests and responses are the JSON documents the NDJSON server speaks.
//! Every function returns a [`DpsqlStatus`]; on failure the message is
//! available from [`dpsql_last_error`] on the same thread. Strings handed
//! out by this library must be released with [`dpsql_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dpsql_core::algebra::Catalog;
use dpsql_core::service::{ErrorCode, Gateway, RewriteRequest, ServiceError};

/// Result of a call. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpsqlStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    NoMechanism = 3,
    BudgetExhausted = 4,
    CatalogError = 5,
    LedgerError = 6,
    Panic = 7,
}

/// Opaque rewriter bound to one catalog and optional ledger file.
pub struct DpsqlRewriter {
    gateway: Gateway,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(code: ErrorCode) -> DpsqlStatus {
    match code {
        ErrorCode::BadRequest => DpsqlStatus::InvalidArgument,
        ErrorCode::ParseError | ErrorCode::InvalidQuery => DpsqlStatus::ParseError,
        ErrorCode::NoMechanism => DpsqlStatus::NoMechanism,
        ErrorCode::BudgetExhausted => DpsqlStatus::BudgetExhausted,
        ErrorCode::CatalogError => DpsqlStatus::CatalogError,
        ErrorCode::LedgerError => DpsqlStatus::LedgerError,
    }
}

struct Failure(DpsqlStatus, String);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure(status_of(e.code), e.message)
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(DpsqlStatus::InvalidArgument, message.into())
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DpsqlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DpsqlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DpsqlStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a valid nul-terminated string.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn hand_out(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("output contains a nul byte"))?;
    // SAFETY: callers check `out` for null before computing the output.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Creates a rewriter from a catalog JSON document. `ledger_path` may be
/// null, in which case no budget is enforced.
///
/// # Safety
/// `catalog_json` must be a valid string, `ledger_path` null or a valid
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsql_rewriter_new(
    catalog_json: *const c_char,
    ledger_path: *const c_char,
    out: *mut *mut DpsqlRewriter,
) -> DpsqlStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let catalog = Catalog::from_json(text(catalog_json, "catalog_json")?)
            .map_err(|e| Failure(DpsqlStatus::CatalogError, e.to_string()))?;
        let ledger = if ledger_path.is_null() { None } else { Some(PathBuf::from(text(ledger_path, "ledger_path")?)) };
        let handle = Box::new(DpsqlRewriter { gateway: Gateway::new(catalog, ledger) });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `rewriter` must be null or a pointer from [`dpsql_rewriter_new`] not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn dpsql_rewriter_free(rewriter: *mut DpsqlRewriter) {
    if !rewriter.is_null() {
        drop(Box::from_raw(rewriter));
    }
}

unsafe fn respond(
    rewriter: *const DpsqlRewriter,
    request_json: *const c_char,
    out: *mut *mut c_char,
    f: impl FnOnce(&Gateway, &RewriteRequest) -> Result<String, ServiceError>,
) -> DpsqlStatus {
    guard(|| {
        if rewriter.is_null() || out.is_null() {
            return Err(invalid("rewriter or out is null"));
        }
        *out = ptr::null_mut();
        let req: RewriteRequest =
            serde_json::from_str(text(request_json, "request_json")?).map_err(|e| invalid(e.to_string()))?;
        let body = f(&(*rewriter).gateway, &req)?;
        hand_out(body, out)
    })
}

/// Rewrites the query in a request document and charges the ledger. On
/// success `*out` receives the response document.
///
/// # Safety
/// `rewriter` must come from [`dpsql_rewriter_new`], `request_json` must be
/// a valid string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsql_rewrite(
    rewriter: *const DpsqlRewriter,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> DpsqlStatus {
    respond(rewriter, request_json, out, |g, req| {
        g.rewrite(req).map(|r| serde_json::to_string(&r).expect("serializes"))
    })
}

/// Reports mechanism support for the query in a request document without
/// charging the ledger.
///
/// # Safety
/// As for [`dpsql_rewrite`].
#[no_mangle]
pub unsafe extern "C" fn dpsql_analyze(
    rewriter: *const DpsqlRewriter,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> DpsqlStatus {
    respond(rewriter, request_json, out, |g, req| {
        g.analyze(req).map(|r| serde_json::to_string(&r).expect("serializes"))
    })
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dpsql_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map(|c| c.as_ptr()).unwrap_or(ptr::null()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn dpsql_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dpsql_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
