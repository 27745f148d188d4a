//! C ABI for the bicnet toolkit.
//!
//! Opaque handles wrap the core types; every function returns a
//! [`BicnetStatus`] and fills output parameters on success. Failure details
//! are available through `bicnet_last_error_message()` (thread-local, valid
//! until the next bicnet call on the same thread). Strings returned through
//! `char **` outputs are heap-allocated and must be released with
//! `bicnet_string_free`.
//!
//! The generated header lives at `include/bicnet.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bicnet_core::bundle_io;
use bicnet_core::model::{
    hash_bundle, verify_certificate, FirmwareBundle, SignedCertificate, TrustStore, VerifyError,
};
use bicnet_core::verifier::{evaluate_policy, PolicyOutcome, SecurityPolicy};

/// Result of a bicnet call. Anything but OK leaves the output parameters
/// untouched; details are in `bicnet_last_error_message()`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicnetStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// Input could not be parsed into the expected shape.
    Parse = 4,
    /// Certificate signer is not in the trust store.
    UnknownSigner = 5,
    /// Certificate body digest does not match the body.
    DigestMismatch = 6,
    /// Signature verification failed.
    BadSignature = 7,
    /// Policy file violated its own invariants.
    InvalidPolicy = 8,
    /// Internal error (a bug; never expected across this boundary).
    Internal = 9,
}

/// Opaque firmware bundle handle.
pub struct BicnetBundle(FirmwareBundle);
/// Opaque trust store handle.
pub struct BicnetTrustStore(TrustStore);
/// Opaque signed certificate handle.
pub struct BicnetCertificate(SignedCertificate);
/// Opaque security policy handle.
pub struct BicnetPolicy(SecurityPolicy);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(detail: impl std::fmt::Display) {
    let text = detail.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

/// Last failure detail for this thread; valid until the next bicnet call.
/// Never null; empty string when the last call succeeded.
#[no_mangle]
pub extern "C" fn bicnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn bicnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned through a `char **` output.
///
/// # Safety
/// `s` must be a pointer previously returned by a bicnet function (or null).
#[no_mangle]
pub unsafe extern "C" fn bicnet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn path_arg<'a>(raw: *const c_char) -> Result<&'a Path, BicnetStatus> {
    if raw.is_null() {
        set_error("null path argument");
        return Err(BicnetStatus::NullArgument);
    }
    match CStr::from_ptr(raw).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(e) => {
            set_error(e);
            Err(BicnetStatus::InvalidUtf8)
        }
    }
}

fn emit_string(value: String, out: *mut *mut c_char) -> BicnetStatus {
    match CString::new(value) {
        Ok(cstring) => {
            unsafe { *out = cstring.into_raw() };
            BicnetStatus::Ok
        }
        Err(e) => {
            set_error(e);
            BicnetStatus::Internal
        }
    }
}

fn guarded(body: impl FnOnce() -> BicnetStatus) -> BicnetStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic inside bicnet");
            BicnetStatus::Internal
        }
    }
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error("null argument");
            return BicnetStatus::NullArgument;
        }
    };
}

// ---------------------------------------------------------------------------
// bundles
// ---------------------------------------------------------------------------

/// Load a firmware bundle from a manifest directory.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_bundle_load_dir(
    path: *const c_char,
    out: *mut *mut BicnetBundle,
) -> BicnetStatus {
    guarded(|| {
        require!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match bundle_io::load_dir(path) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(BicnetBundle(bundle)));
                BicnetStatus::Ok
            }
            Err(e) => {
                set_error(&e);
                match e {
                    bundle_io::BundleIoError::Io { .. } => BicnetStatus::Io,
                    _ => BicnetStatus::Parse,
                }
            }
        }
    })
}

/// Load a firmware bundle from a single JSON document with inline base64
/// content.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_bundle_load_inline_json(
    path: *const c_char,
    out: *mut *mut BicnetBundle,
) -> BicnetStatus {
    guarded(|| {
        require!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match bundle_io::load_inline(path) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(BicnetBundle(bundle)));
                BicnetStatus::Ok
            }
            Err(e) => {
                set_error(&e);
                match e {
                    bundle_io::BundleIoError::Io { .. } => BicnetStatus::Io,
                    _ => BicnetStatus::Parse,
                }
            }
        }
    })
}

/// # Safety
/// `bundle` must come from a bicnet_bundle_load_* call (or be null).
#[no_mangle]
pub unsafe extern "C" fn bicnet_bundle_free(bundle: *mut BicnetBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// The aggregate software digest (lowercase hex) used as the certificate
/// lookup key.
///
/// # Safety
/// `bundle` must be a live bundle handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_bundle_aggregate_hex(
    bundle: *const BicnetBundle,
    out: *mut *mut c_char,
) -> BicnetStatus {
    guarded(|| {
        require!(bundle);
        require!(out);
        let digest = hash_bundle(&(*bundle).0);
        emit_string(digest.aggregate.to_hex(), out)
    })
}

/// The full software digest (per-component + aggregate) as JSON.
///
/// # Safety
/// `bundle` must be a live bundle handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_bundle_software_digest_json(
    bundle: *const BicnetBundle,
    out: *mut *mut c_char,
) -> BicnetStatus {
    guarded(|| {
        require!(bundle);
        require!(out);
        let digest = hash_bundle(&(*bundle).0);
        match serde_json::to_string(&digest) {
            Ok(json) => emit_string(json, out),
            Err(e) => {
                set_error(e);
                BicnetStatus::Internal
            }
        }
    })
}

// ---------------------------------------------------------------------------
// trust stores
// ---------------------------------------------------------------------------

/// Load a trust store (JSON: org -> [{key_id, public_key_hex}]).
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_trust_store_load(
    path: *const c_char,
    out: *mut *mut BicnetTrustStore,
) -> BicnetStatus {
    guarded(|| {
        require!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match TrustStore::load(path) {
            Ok(store) => {
                *out = Box::into_raw(Box::new(BicnetTrustStore(store)));
                BicnetStatus::Ok
            }
            Err(e) => {
                set_error(e);
                BicnetStatus::Parse
            }
        }
    })
}

/// # Safety
/// `store` must come from bicnet_trust_store_load (or be null).
#[no_mangle]
pub unsafe extern "C" fn bicnet_trust_store_free(store: *mut BicnetTrustStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

/// Load a signed certificate from a JSON file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_load(
    path: *const c_char,
    out: *mut *mut BicnetCertificate,
) -> BicnetStatus {
    guarded(|| {
        require!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                set_error(e);
                return BicnetStatus::Io;
            }
        };
        parse_certificate(&text, out)
    })
}

/// Parse a signed certificate from a JSON string.
///
/// # Safety
/// `json` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_from_json(
    json: *const c_char,
    out: *mut *mut BicnetCertificate,
) -> BicnetStatus {
    guarded(|| {
        require!(json);
        require!(out);
        let text = match CStr::from_ptr(json).to_str() {
            Ok(s) => s,
            Err(e) => {
                set_error(e);
                return BicnetStatus::InvalidUtf8;
            }
        };
        parse_certificate(text, out)
    })
}

unsafe fn parse_certificate(text: &str, out: *mut *mut BicnetCertificate) -> BicnetStatus {
    match serde_json::from_str::<SignedCertificate>(text) {
        Ok(cert) => {
            *out = Box::into_raw(Box::new(BicnetCertificate(cert)));
            BicnetStatus::Ok
        }
        Err(e) => {
            set_error(e);
            BicnetStatus::Parse
        }
    }
}

/// # Safety
/// `cert` must come from a bicnet_certificate_* constructor (or be null).
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_free(cert: *mut BicnetCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// The certificate body digest (lowercase hex).
///
/// # Safety
/// `cert` must be a live certificate handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_body_digest_hex(
    cert: *const BicnetCertificate,
    out: *mut *mut c_char,
) -> BicnetStatus {
    guarded(|| {
        require!(cert);
        require!(out);
        emit_string((*cert).0.body_digest.to_hex(), out)
    })
}

/// Verify a certificate against a trust store: recomputed body digest plus
/// Ed25519 signature under the key registered for the inspector org.
///
/// # Safety
/// `cert` and `trust` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_verify(
    cert: *const BicnetCertificate,
    trust: *const BicnetTrustStore,
) -> BicnetStatus {
    guarded(|| {
        require!(cert);
        require!(trust);
        match verify_certificate(&(*cert).0, &(*trust).0) {
            Ok(_) => BicnetStatus::Ok,
            Err(e) => {
                set_error(&e);
                match e {
                    VerifyError::UnknownSigner { .. } => BicnetStatus::UnknownSigner,
                    VerifyError::DigestMismatch => BicnetStatus::DigestMismatch,
                    VerifyError::BadSignature => BicnetStatus::BadSignature,
                }
            }
        }
    })
}

// ---------------------------------------------------------------------------
// policies
// ---------------------------------------------------------------------------

/// Load and validate a security policy file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_policy_load(
    path: *const c_char,
    out: *mut *mut BicnetPolicy,
) -> BicnetStatus {
    guarded(|| {
        require!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match SecurityPolicy::load(path) {
            Ok(policy) => {
                *out = Box::into_raw(Box::new(BicnetPolicy(policy)));
                BicnetStatus::Ok
            }
            Err(e) => {
                set_error(&e);
                BicnetStatus::InvalidPolicy
            }
        }
    })
}

/// # Safety
/// `policy` must come from bicnet_policy_load (or be null).
#[no_mangle]
pub unsafe extern "C" fn bicnet_policy_free(policy: *mut BicnetPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Verify a certificate and evaluate it against a policy. On OK the outcome
/// JSON is `{"outcome":"pass"}`, `{"outcome":"grey","max_score":s}`, or
/// `{"outcome":"fail","reasons":[...]}`. Trust-store and signature failures
/// are returned as their own statuses without an outcome.
///
/// # Safety
/// All handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bicnet_certificate_evaluate(
    cert: *const BicnetCertificate,
    policy: *const BicnetPolicy,
    trust: *const BicnetTrustStore,
    out: *mut *mut c_char,
) -> BicnetStatus {
    guarded(|| {
        require!(cert);
        require!(policy);
        require!(trust);
        require!(out);
        let verified = match verify_certificate(&(*cert).0, &(*trust).0) {
            Ok(v) => v,
            Err(e) => {
                set_error(&e);
                return match e {
                    VerifyError::UnknownSigner { .. } => BicnetStatus::UnknownSigner,
                    VerifyError::DigestMismatch => BicnetStatus::DigestMismatch,
                    VerifyError::BadSignature => BicnetStatus::BadSignature,
                };
            }
        };
        let outcome = match evaluate_policy(&verified.body, &(*policy).0) {
            PolicyOutcome::Pass => serde_json::json!({"outcome": "pass"}),
            PolicyOutcome::Grey { max_score } => {
                serde_json::json!({"outcome": "grey", "max_score": max_score})
            }
            PolicyOutcome::Fail { reasons } => {
                serde_json::json!({"outcome": "fail", "reasons": reasons})
            }
        };
        emit_string(outcome.to_string(), out)
    })
}
