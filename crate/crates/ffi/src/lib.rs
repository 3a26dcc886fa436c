//! C ABI over the socialtv store, rule engine and diffusion simulator.
//!
//! Every fallible function returns a [`SocialtvStatus`]; on failure the
//! message is available from [`socialtv_last_error`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`socialtv_string_free`]. Handles are released with
//! [`socialtv_store_close`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use socialtv::ids::UserId;
use socialtv::profile::{TypeCode, UserProfile};
use socialtv::rules::{default_rules, match_rules};
use socialtv::sim::simulate;
use socialtv::store::record::{parse_records, records_to_text};
use socialtv::store::{Location, Store, StoreError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocialtvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Io = 5,
    Corrupt = 6,
    Closed = 7,
    Parse = 8,
    Conflict = 9,
    Panic = 10,
}

/// Opaque store handle.
pub struct SocialtvStore {
    store: Store,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SocialtvStatus, String);

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Failure {
        let status = match &e {
            StoreError::Closed => SocialtvStatus::Closed,
            StoreError::Io(_) => SocialtvStatus::Io,
            StoreError::Parse { .. } | StoreError::Header(_) => SocialtvStatus::Parse,
            StoreError::Corrupt(_) => SocialtvStatus::Corrupt,
            StoreError::NotFound(_) => SocialtvStatus::NotFound,
            StoreError::Conflict(_) | StoreError::Transition(_) => SocialtvStatus::Conflict,
            StoreError::Invalid { .. } | StoreError::Graph(_) => SocialtvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SocialtvStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SocialtvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SocialtvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SocialtvStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SocialtvStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SocialtvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `h` is null or a handle from `socialtv_store_open` not yet closed.
unsafe fn handle<'a>(h: *const SocialtvStore) -> Result<&'a Store, Failure> {
    h.as_ref()
        .map(|h| &h.store)
        .ok_or_else(|| fail(SocialtvStatus::NullArgument, "store handle is null"))
}

/// # Safety
/// `out` is null or writable.
unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SocialtvStatus::NullArgument, "output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| fail(SocialtvStatus::InvalidArgument, "output contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn socialtv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn socialtv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Open a store file, creating it if absent. A null `path` opens an empty
/// in-memory store.
///
/// # Safety
/// `path` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_store_open(path: *const c_char, out: *mut *mut SocialtvStore) -> SocialtvStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SocialtvStatus::NullArgument, "output pointer is null"));
        }
        let location = if path.is_null() {
            Location::InMemory
        } else {
            Location::File(read_str(path, "path")?.into())
        };
        let store = Store::open(location)?;
        *out = Box::into_raw(Box::new(SocialtvStore { store }));
        Ok(())
    })
}

/// Flush and free the handle. Null is ignored.
///
/// # Safety
/// `h` is null or a handle from `socialtv_store_open`, not yet closed.
#[no_mangle]
pub unsafe extern "C" fn socialtv_store_close(h: *mut SocialtvStore) -> SocialtvStatus {
    if h.is_null() {
        return SocialtvStatus::Ok;
    }
    let boxed = Box::from_raw(h);
    guard(move || Ok(boxed.store.close()?))
}

/// Import newline-separated records as one commit.
///
/// # Safety
/// `h` is a live handle; `records` is NUL-terminated; `out_count` is null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_store_import(
    h: *const SocialtvStore,
    records: *const c_char,
    out_count: *mut usize,
) -> SocialtvStatus {
    guard(|| {
        let store = handle(h)?;
        let text = read_str(records, "records")?;
        let parsed = parse_records(text).map_err(|(line, msg)| fail(SocialtvStatus::Parse, format!("line {line}: {msg}")))?;
        let n = store.import(parsed)?;
        if !out_count.is_null() {
            *out_count = n;
        }
        Ok(())
    })
}

/// Every entity as newline-separated records.
///
/// # Safety
/// `h` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_store_export(h: *const SocialtvStore, out: *mut *mut c_char) -> SocialtvStatus {
    guard(|| {
        let store = handle(h)?;
        write_string(out, records_to_text(&store.export()?))
    })
}

/// Run the integrity scan; `out_issue_count` receives the number of
/// violations and `out_report` (if not null) a JSON array describing them.
///
/// # Safety
/// `h` is a live handle; `out_issue_count` is writable; `out_report` is null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_store_validate(
    h: *const SocialtvStore,
    out_issue_count: *mut usize,
    out_report: *mut *mut c_char,
) -> SocialtvStatus {
    guard(|| {
        let store = handle(h)?;
        if out_issue_count.is_null() {
            return Err(fail(SocialtvStatus::NullArgument, "output pointer is null"));
        }
        let issues = store.validate()?;
        *out_issue_count = issues.len();
        if !out_report.is_null() {
            write_string(out_report, serde_json::to_string(&issues).expect("issues serialize"))?;
        }
        Ok(())
    })
}

/// Spread `type_code` from `seed_user` over friendships with the built-in
/// rules. `out_json` receives the run report.
///
/// # Safety
/// `h` is a live handle; `seed_user` is NUL-terminated; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_simulate(
    h: *const SocialtvStore,
    seed_user: *const c_char,
    type_code: i32,
    max_hops: u32,
    out_json: *mut *mut c_char,
) -> SocialtvStatus {
    guard(|| {
        let store = handle(h)?;
        let seed = UserId::new(read_str(seed_user, "seed_user")?)
            .map_err(|e| fail(SocialtvStatus::InvalidArgument, e.to_string()))?;
        let code = TypeCode::new(type_code.into()).map_err(|e| fail(SocialtvStatus::InvalidArgument, e.to_string()))?;
        let data = store.snapshot()?;
        let run = simulate(&data, &seed, code, max_hops, &default_rules())
            .map_err(|e| fail(SocialtvStatus::NotFound, e.to_string()))?;
        write_string(out_json, serde_json::to_string(&run).expect("runs serialize"))
    })
}

/// Label of a recommendation type code in [1, 27].
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_type_label(code: i32, out: *mut *mut c_char) -> SocialtvStatus {
    guard(|| {
        let code = TypeCode::new(code.into()).map_err(|e| fail(SocialtvStatus::InvalidArgument, e.to_string()))?;
        write_string(out, code.label().to_owned())
    })
}

/// Codes produced by the built-in rules for a profile, ascending. `out_codes`
/// must have room for 27 entries; `out_len` receives the count.
///
/// # Safety
/// `prefs` points to `n_prefs` values (or is null when `n_prefs` is 0);
/// `out_codes` has room for 27 bytes; `out_len` is writable.
#[no_mangle]
pub unsafe extern "C" fn socialtv_match_rules(
    gender_code: i32,
    age: i32,
    prefs: *const u32,
    n_prefs: usize,
    out_codes: *mut u8,
    out_len: *mut usize,
) -> SocialtvStatus {
    guard(|| {
        if out_codes.is_null() || out_len.is_null() || (prefs.is_null() && n_prefs > 0) {
            return Err(fail(SocialtvStatus::NullArgument, "null pointer argument"));
        }
        let prefs = if n_prefs == 0 { &[][..] } else { std::slice::from_raw_parts(prefs, n_prefs) };
        let profile = UserProfile {
            user_id: UserId::new("ffi").expect("valid id"),
            name: String::new(),
            gender_code,
            age,
            activity_prefs: prefs.iter().copied().collect(),
            photo_ref: None,
        };
        socialtv::profile::validate_profile(&profile).map_err(|errs| {
            let msg: Vec<String> = errs.iter().map(ToString::to_string).collect();
            fail(SocialtvStatus::InvalidArgument, msg.join(", "))
        })?;
        let codes = match_rules(&profile, &default_rules());
        for (i, c) in codes.iter().enumerate() {
            *out_codes.add(i) = c.get();
        }
        *out_len = codes.len();
        Ok(())
    })
}
