//! C ABI over the proxy-audit core.
//!
//! Programs and datasets cross the boundary as opaque handles. Every
//! fallible call returns a [`PaStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`pa_last_error`]. Strings handed
//! out by the library are freed with [`pa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use proxy_audit::data::{Dataset, LoadOptions};
use proxy_audit::detect::{audit, AuditConfig, Report};
use proxy_audit::expr::Expr;
use proxy_audit::frontends::load_model;
use proxy_audit::measures::{association, UtilityTarget};
use proxy_audit::oracle::parse_policy;
use proxy_audit::repair::{repair_loop, steps_jsonl, LoopOutcome};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// A JSON document (program, model, options, config or policy) was rejected.
    Parse = 3,
    /// The dataset could not be read or does not fit the program.
    Data = 4,
    Detect = 5,
    Repair = 6,
    /// The oracle left witnesses unjudged.
    Suspended = 7,
    Panic = 8,
}

/// Opaque program handle.
pub struct PaProgram(Expr);

/// Opaque dataset handle.
pub struct PaDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(PaStatus, String);

impl Fail {
    fn new(status: PaStatus, e: impl std::fmt::Display) -> Fail {
        Fail(status, e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus the thread's
/// last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(PaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::new(PaStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(PaStatus::NullArgument, format!("{what} is null")))
}

fn out_ptr<T>(out: *mut T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail::new(PaStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail::new(PaStatus::Panic, e))
}

fn config(json: &str) -> Result<AuditConfig, Fail> {
    let cfg: AuditConfig = serde_json::from_str(json).map_err(|e| Fail::new(PaStatus::Parse, e))?;
    cfg.validate().map_err(|e| Fail::new(PaStatus::Parse, e))?;
    Ok(cfg)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not be freed yet, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a program from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_program_from_json(json: *const c_char, out: *mut *mut PaProgram) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let p = Expr::from_json(text(json, "json")?).map_err(|e| Fail::new(PaStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(PaProgram(p)));
        Ok(())
    })
}

/// Translates a model document (tree, linear model, rule list or CART text
/// dump) using the dataset's category codes.
///
/// # Safety
/// `doc` must be a NUL-terminated string, `data` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pa_program_load_model(
    doc: *const c_char,
    data: *const PaDataset,
    out: *mut *mut PaProgram,
) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let data = handle(data, "data")?;
        let p = load_model(text(doc, "doc")?, data.0.codebook()).map_err(|e| Fail::new(PaStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(PaProgram(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle and `out` writable. Free the result with
/// [`pa_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pa_program_to_json(p: *const PaProgram, out: *mut *mut c_char) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = c_string(handle(p, "program")?.0.to_json())?;
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_program_size(p: *const PaProgram) -> usize {
    p.as_ref().map_or(0, |p| p.0.size())
}

/// # Safety
/// `p` must come from this library and not be freed yet, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pa_program_free(p: *mut PaProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Loads a CSV file. `options_json` holds the load options, at least
/// `{"protected": "<column>"}`.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_dataset_load_csv(
    path: *const c_char,
    options_json: *const c_char,
    out: *mut *mut PaDataset,
) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let opts: LoadOptions =
            serde_json::from_str(text(options_json, "options")?).map_err(|e| Fail::new(PaStatus::Parse, e))?;
        let d = Dataset::load(text(path, "path")?, &opts).map_err(|e| Fail::new(PaStatus::Data, e))?;
        *out = Box::into_raw(Box::new(PaDataset(d)));
        Ok(())
    })
}

/// Like [`pa_dataset_load_csv`] for CSV text held in memory.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_dataset_parse_csv(
    csv: *const c_char,
    options_json: *const c_char,
    out: *mut *mut PaDataset,
) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let opts: LoadOptions =
            serde_json::from_str(text(options_json, "options")?).map_err(|e| Fail::new(PaStatus::Parse, e))?;
        let d = Dataset::parse_csv(text(csv, "csv")?, &opts).map_err(|e| Fail::new(PaStatus::Data, e))?;
        *out = Box::into_raw(Box::new(PaDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_dataset_rows(d: *const PaDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `d` must come from this library and not be freed yet, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pa_dataset_free(d: *mut PaDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

fn key(x: f64) -> u64 {
    // -0.0 and 0.0 are one value; all NaNs are one value
    if x == 0.0 {
        0
    } else if x.is_nan() {
        f64::NAN.to_bits()
    } else {
        x.to_bits()
    }
}

/// Normalized mutual information between two discrete sequences of length
/// `n`, each value taken as a category.
///
/// # Safety
/// `xs` and `zs` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_association(xs: *const f64, zs: *const f64, n: usize, out: *mut f64) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if xs.is_null() || zs.is_null() {
            return Err(Fail::new(PaStatus::NullArgument, "sequence is null"));
        }
        let xs: Vec<u64> = std::slice::from_raw_parts(xs, n).iter().map(|&x| key(x)).collect();
        let zs: Vec<u64> = std::slice::from_raw_parts(zs, n).iter().map(|&z| key(z)).collect();
        *out = association(&xs, &zs).map_err(|e| Fail::new(PaStatus::Data, e))?.d;
        Ok(())
    })
}

/// Runs detection and writes the witness report as JSON. `config_json` is
/// an audit configuration, at least `{"epsilon": e, "delta": d}`.
///
/// # Safety
/// Handles must be live, `config_json` NUL-terminated and `out` writable.
/// Free the result with [`pa_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pa_detect(
    p: *const PaProgram,
    data: *const PaDataset,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> PaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (p, data) = (&handle(p, "program")?.0, &handle(data, "data")?.0);
        let cfg = config(text(config_json, "config")?)?;
        let a = audit(p, data, &cfg).map_err(|e| Fail::new(PaStatus::Detect, e))?;
        let report = Report::new(p, data, &cfg, &a);
        *out = c_string(serde_json::to_string(&report).map_err(|e| Fail::new(PaStatus::Panic, e))?)?;
        Ok(())
    })
}

/// Repairs `p` against a policy document until the policy approves every
/// remaining witness. Utility is accuracy on the dataset's label column
/// when it has one, else agreement with `p`. Writes the repaired program
/// and the step log (JSON lines); `out_steps` may be NULL.
///
/// # Safety
/// Handles must be live, strings NUL-terminated and `out_program` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_repair(
    p: *const PaProgram,
    data: *const PaDataset,
    config_json: *const c_char,
    policy_json: *const c_char,
    out_program: *mut *mut PaProgram,
    out_steps: *mut *mut c_char,
) -> PaStatus {
    guard(|| {
        out_ptr(out_program, "out_program")?;
        let (p, data) = (&handle(p, "program")?.0, &handle(data, "data")?.0);
        let cfg = config(text(config_json, "config")?)?;
        let mut policy = parse_policy(text(policy_json, "policy")?).map_err(|e| Fail::new(PaStatus::Parse, e))?;
        let target = match data.label() {
            Some(l) => UtilityTarget::Labels(l.to_string()),
            None => UtilityTarget::Fidelity(p.clone()),
        };
        let out = repair_loop(p, data, &cfg, &mut policy, &target).map_err(|e| Fail::new(PaStatus::Repair, e))?;
        let LoopOutcome::Done { program, steps } = out else {
            return Err(Fail::new(PaStatus::Suspended, "witnesses left unjudged"));
        };
        if !out_steps.is_null() {
            *out_steps = c_string(steps_jsonl(&steps))?;
        }
        *out_program = Box::into_raw(Box::new(PaProgram(program)));
        Ok(())
    })
}
