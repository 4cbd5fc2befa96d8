//! C ABI over the block-model library: opaque handles, integer status
//! codes, and JSON strings for structured results.
//!
//! Conventions:
//!
//! * Every fallible call returns a status code (`SBM_OK` = 0); constructor
//!   outputs are written through `out` pointers and must be released with
//!   the matching `*_free`.
//! * Strings returned through `char**` are NUL-terminated, heap-allocated,
//!   and released with [`sbm_string_free`].
//! * On failure, [`sbm_last_error`] returns a `category: message` line for
//!   the current thread, valid until the next failing call on that thread.
//! * Handles are plain heap objects — share them across threads only with
//!   external synchronization, and never use one after freeing it.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sbm_lab::assumptions::check_assumptions;
use sbm_lab::error::SbmError;
use sbm_lab::exact::exact_em_fit;
use sbm_lab::fit::FitResult;
use sbm_lab::graph::{sample_graph, LabeledGraph};
use sbm_lab::io;
use sbm_lab::moments::{moments_analytic, recover_from_moments, MomentOrientation, RecoveryOptions};
use sbm_lab::params::SbmParams;
use sbm_lab::symmetry::param_distance;
use sbm_lab::variational::{vem_fit, VemOptions};

pub const SBM_OK: c_int = 0;
/// Malformed input: null pointer, bad UTF-8, unparseable JSON.
pub const SBM_ERR_USAGE: c_int = 2;
/// Structurally invalid parameters or out-of-range bounds.
pub const SBM_ERR_VALIDATION: c_int = 3;
/// Identification genuinely impossible (singular moments, coincident
/// rates, indistinguishable classes).
pub const SBM_ERR_DEGENERATE: c_int = 4;
/// The request exceeds a hard size limit (e.g. enumeration space).
pub const SBM_ERR_SIZE_LIMIT: c_int = 5;

/// Opaque model parameters (class weights and edge probabilities).
pub struct SbmParamsHandle {
    inner: SbmParams,
}

/// Opaque directed graph with its planted labels.
pub struct SbmGraphHandle {
    inner: LabeledGraph,
}

/// Opaque result of an iterative fit.
pub struct SbmFitHandle {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail_msg(code: c_int, msg: &str) -> c_int {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
    code
}

fn fail(err: &SbmError) -> c_int {
    let code = match err.category() {
        "validation" => SBM_ERR_VALIDATION,
        "degenerate" => SBM_ERR_DEGENERATE,
        "size-limit" => SBM_ERR_SIZE_LIMIT,
        _ => SBM_ERR_USAGE,
    };
    fail_msg(code, &format!("{}: {}", err.category(), err))
}

fn guard(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail_msg(SBM_ERR_USAGE, "usage: internal panic"),
    }
}

fn emit_string(out: *mut *mut c_char, s: String) -> c_int {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SBM_OK
        }
        Err(_) => fail_msg(SBM_ERR_USAGE, "usage: string contains NUL"),
    }
}

/// Message for the most recent failure on this thread; empty string when no
/// failure has been recorded. The pointer stays valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn sbm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string obtained from this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build parameters from `q` class weights and a row-major `q*q` matrix of
/// edge probabilities.
///
/// # Safety
/// `alpha` must point to `q` doubles, `pi` to `q*q` doubles, `out` to a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_params_new(
    alpha: *const f64,
    q: usize,
    pi: *const f64,
    out: *mut *mut SbmParamsHandle,
) -> c_int {
    guard(|| {
        if alpha.is_null() || pi.is_null() || out.is_null() || q == 0 {
            return fail_msg(SBM_ERR_USAGE, "usage: null argument or q = 0");
        }
        let alpha = unsafe { std::slice::from_raw_parts(alpha, q) }.to_vec();
        let flat = unsafe { std::slice::from_raw_parts(pi, q * q) };
        let pi: Vec<Vec<f64>> = flat.chunks(q).map(|r| r.to_vec()).collect();
        match SbmParams::new(alpha, pi) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(SbmParamsHandle { inner: p })) };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parse parameters from their JSON form (`{"alpha": [...], "pi": [[...]]}`).
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_params_from_json(
    json: *const c_char,
    out: *mut *mut SbmParamsHandle,
) -> c_int {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null argument");
        }
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail_msg(SBM_ERR_USAGE, "usage: JSON is not valid UTF-8"),
        };
        match io::params_from_json(text) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(SbmParamsHandle { inner: p })) };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Serialize parameters to JSON; release the string with `sbm_string_free`.
///
/// # Safety
/// `p` must be a live params handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_params_to_json(
    p: *const SbmParamsHandle,
    out: *mut *mut c_char,
) -> c_int {
    guard(|| {
        let Some(p) = (unsafe { p.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        match io::params_to_json(&p.inner) {
            Ok(s) => emit_string(out, s),
            Err(e) => fail(&e),
        }
    })
}

/// Number of classes, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live params handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_params_q(p: *const SbmParamsHandle) -> usize {
    unsafe { p.as_ref() }.map_or(0, |h| h.inner.q())
}

/// # Safety
/// `p` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbm_params_free(p: *mut SbmParamsHandle) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Sample an `n`-vertex graph; deterministic in `seed`.
///
/// # Safety
/// `p` must be a live params handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_sample_graph(
    p: *const SbmParamsHandle,
    n: usize,
    seed: u64,
    out: *mut *mut SbmGraphHandle,
) -> c_int {
    guard(|| {
        let Some(p) = (unsafe { p.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        match sample_graph(&p.inner, n, seed) {
            Ok(g) => {
                unsafe { *out = Box::into_raw(Box::new(SbmGraphHandle { inner: g })) };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of vertices, 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_graph_vertex_count(g: *const SbmGraphHandle) -> usize {
    unsafe { g.as_ref() }.map_or(0, |h| h.inner.n())
}

/// 1 if the directed edge `i -> j` is present, 0 if absent, -1 on a null
/// handle or out-of-range index.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_graph_edge(g: *const SbmGraphHandle, i: usize, j: usize) -> c_int {
    let Some(g) = (unsafe { g.as_ref() }) else {
        fail_msg(SBM_ERR_USAGE, "usage: null graph handle");
        return -1;
    };
    if i >= g.inner.n() || j >= g.inner.n() {
        fail_msg(SBM_ERR_USAGE, "usage: vertex index out of range");
        return -1;
    }
    c_int::from(g.inner.edge(i, j))
}

/// Copy the planted labels (0-based classes) into `out`, which must hold
/// exactly `len == n` entries.
///
/// # Safety
/// `g` must be a live graph handle and `out` point to `len` writable words.
#[no_mangle]
pub unsafe extern "C" fn sbm_graph_labels(
    g: *const SbmGraphHandle,
    out: *mut usize,
    len: usize,
) -> c_int {
    guard(|| {
        let Some(g) = (unsafe { g.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null graph handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output buffer");
        }
        let Some(labels) = g.inner.labels() else {
            return fail_msg(SBM_ERR_VALIDATION, "validation: graph carries no labels");
        };
        if len != labels.len() {
            return fail_msg(SBM_ERR_USAGE, "usage: label buffer length mismatch");
        }
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(labels);
        SBM_OK
    })
}

/// # Safety
/// `g` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbm_graph_free(g: *mut SbmGraphHandle) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

/// Variational EM fit with `restarts` initializations; deterministic in
/// `seed`.
///
/// # Safety
/// `g` must be a live graph handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_vem(
    g: *const SbmGraphHandle,
    q: usize,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
    out: *mut *mut SbmFitHandle,
) -> c_int {
    guard(|| {
        let Some(g) = (unsafe { g.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null graph handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        let opts = VemOptions {
            restarts,
            max_iter,
            tol,
            seed,
            ..VemOptions::default()
        };
        match vem_fit(&g.inner, q, &opts) {
            Ok(f) => {
                unsafe { *out = Box::into_raw(Box::new(SbmFitHandle { inner: f })) };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Exact EM from an explicit starting point. Fails with
/// `SBM_ERR_SIZE_LIMIT` when `q^n` exceeds the enumeration budget.
///
/// # Safety
/// `g` and `init` must be live handles, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_exact_em(
    g: *const SbmGraphHandle,
    init: *const SbmParamsHandle,
    max_iter: usize,
    tol: f64,
    out: *mut *mut SbmFitHandle,
) -> c_int {
    guard(|| {
        let Some(g) = (unsafe { g.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null graph handle");
        };
        let Some(init) = (unsafe { init.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        match exact_em_fit(&g.inner, &init.inner, max_iter, tol) {
            Ok(f) => {
                unsafe { *out = Box::into_raw(Box::new(SbmFitHandle { inner: f })) };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Final objective value (variational bound or marginal log-likelihood);
/// NaN for a null handle.
///
/// # Safety
/// `f` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_objective(f: *const SbmFitHandle) -> f64 {
    unsafe { f.as_ref() }.map_or(f64::NAN, |h| h.inner.objective())
}

/// Copy the fitted parameters out of a fit.
///
/// # Safety
/// `f` must be a live fit handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_params(
    f: *const SbmFitHandle,
    out: *mut *mut SbmParamsHandle,
) -> c_int {
    guard(|| {
        let Some(f) = (unsafe { f.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null fit handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        let p = f.inner.params.clone();
        unsafe { *out = Box::into_raw(Box::new(SbmParamsHandle { inner: p })) };
        SBM_OK
    })
}

/// Serialize a fit (parameters, objective trace, convergence flags) to
/// JSON; release with `sbm_string_free`.
///
/// # Safety
/// `f` must be a live fit handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_to_json(f: *const SbmFitHandle, out: *mut *mut c_char) -> c_int {
    guard(|| {
        let Some(f) = (unsafe { f.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null fit handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        match io::fit_to_json(&f.inner) {
            Ok(s) => emit_string(out, s),
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `f` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbm_fit_free(f: *mut SbmFitHandle) {
    if !f.is_null() {
        drop(unsafe { Box::from_raw(f) });
    }
}

/// Check the standing regularity conditions (class distinguishability,
/// edge probabilities off the 0/1 boundary by `zeta`, class weights off the
/// boundary by `gamma`). Returns `SBM_OK` when all hold and
/// `SBM_ERR_VALIDATION` when violated; either way, when `report_json` is
/// non-null it receives the full report.
///
/// # Safety
/// `p` must be a live params handle; `report_json` null or a writable slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_check_assumptions(
    p: *const SbmParamsHandle,
    zeta: f64,
    gamma: f64,
    n0: usize,
    report_json: *mut *mut c_char,
) -> c_int {
    guard(|| {
        let Some(p) = (unsafe { p.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        let report = match check_assumptions(&p.inner, None, zeta, gamma, n0) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        if !report_json.is_null() {
            let s = match io::to_json_string(&report) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let code = emit_string(report_json, s);
            if code != SBM_OK {
                return code;
            }
        }
        if report.all_ok() {
            SBM_OK
        } else {
            let first = report
                .violations
                .first()
                .map(|(name, detail)| format!("validation: assumption {name} fails: {detail}"))
                .unwrap_or_else(|| "validation: assumption violated".to_string());
            fail_msg(SBM_ERR_VALIDATION, &first)
        }
    })
}

/// Identify parameters from the noise-free moments of `truth` — the
/// round-trip the constructive identification theory promises. Fails with
/// `SBM_ERR_DEGENERATE` when the moments do not pin the model down.
///
/// # Safety
/// `truth` must be a live params handle, `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sbm_recover_analytic(
    truth: *const SbmParamsHandle,
    out: *mut *mut SbmParamsHandle,
) -> c_int {
    guard(|| {
        let Some(truth) = (unsafe { truth.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        if out.is_null() {
            return fail_msg(SBM_ERR_USAGE, "usage: null output slot");
        }
        let ms = moments_analytic(&truth.inner, MomentOrientation::Row);
        match recover_from_moments(&ms, &RecoveryOptions::default()) {
            Ok(rec) => {
                unsafe {
                    *out = Box::into_raw(Box::new(SbmParamsHandle { inner: rec.params }))
                };
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Smallest sup-norm distance between two parameter sets over all class
/// relabelings; written to `err_pi` / `err_alpha` (either may be null).
///
/// # Safety
/// `a` and `b` must be live params handles; `err_pi`/`err_alpha` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sbm_param_distance(
    a: *const SbmParamsHandle,
    b: *const SbmParamsHandle,
    err_pi: *mut f64,
    err_alpha: *mut f64,
) -> c_int {
    guard(|| {
        let (Some(a), Some(b)) = (unsafe { a.as_ref() }, unsafe { b.as_ref() }) else {
            return fail_msg(SBM_ERR_USAGE, "usage: null params handle");
        };
        match param_distance(&a.inner, &b.inner) {
            Ok(d) => {
                if !err_pi.is_null() {
                    unsafe { *err_pi = d.err_pi };
                }
                if !err_alpha.is_null() {
                    unsafe { *err_alpha = d.err_alpha };
                }
                SBM_OK
            }
            Err(e) => fail(&e),
        }
    })
}
