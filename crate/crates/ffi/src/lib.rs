//! C ABI for the Nash social welfare solver.
//!
//! Instances are opaque handles created from the JSON wire format; solve,
//! certify and oracle results come back as JSON strings owned by this
//! library (release them with [`nsw_string_free`]). Every fallible entry
//! point returns an [`NswStatus`] code; the most recent failure message for
//! the calling thread is available through [`nsw_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use nsw_solver::certify::certify;
use nsw_solver::instance::instance_from_json;
use nsw_solver::oracle::{brute_force_opt, DEFAULT_MAX_STATES};
use nsw_solver::solver::{solve, SolveError, SolverOutput};
use nsw_solver::{Instance, Rat};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NswStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    SolverAbort = 3,
    CertificationFailed = 4,
    Oversize = 5,
}

/// Opaque validated instance handle.
pub struct NswInstance {
    inner: Instance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: NswStatus, msg: String) -> NswStatus {
    set_error(msg);
    status
}

/// Most recent error message for this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nsw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(c) => c.as_ptr(),
        None => ptr::null(),
    })
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, NswStatus> {
    if ptr.is_null() {
        return Err(NswStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| NswStatus::InvalidInput)
}

fn write_string(out: *mut *mut c_char, text: String) -> NswStatus {
    if out.is_null() {
        return fail(NswStatus::NullPointer, "output pointer is null".into());
    }
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            NswStatus::Ok
        }
        Err(_) => fail(NswStatus::InvalidInput, "output contained NUL".into()),
    }
}

/// Parses and validates an instance from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
/// On `Ok` the caller owns the handle and must release it with
/// [`nsw_instance_free`].
#[no_mangle]
pub unsafe extern "C" fn nsw_instance_from_json(
    json: *const c_char,
    out: *mut *mut NswInstance,
) -> NswStatus {
    if out.is_null() {
        return fail(NswStatus::NullPointer, "output pointer is null".into());
    }
    let text = match read_str(json) {
        Ok(t) => t,
        Err(s) => return fail(s, "instance JSON pointer unusable".into()),
    };
    let inst = match instance_from_json(text) {
        Ok(i) => i,
        Err(e) => return fail(NswStatus::InvalidInput, e.to_string()),
    };
    if let Err(errs) = inst.validate() {
        let msg = errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
        return fail(NswStatus::InvalidInput, msg);
    }
    *out = Box::into_raw(Box::new(NswInstance { inner: inst }));
    NswStatus::Ok
}

/// Releases an instance handle. Null is ignored.
///
/// # Safety
/// `inst` must have come from [`nsw_instance_from_json`] and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn nsw_instance_free(inst: *mut NswInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Agent and good counts of a parsed instance.
///
/// # Safety
/// `inst` must be a live handle; `n_agents`/`n_goods` may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn nsw_instance_shape(
    inst: *const NswInstance,
    n_agents: *mut usize,
    n_goods: *mut usize,
) -> NswStatus {
    if inst.is_null() {
        return fail(NswStatus::NullPointer, "instance handle is null".into());
    }
    let handle = &*inst;
    if !n_agents.is_null() {
        *n_agents = handle.inner.n();
    }
    if !n_goods.is_null() {
        *n_goods = handle.inner.m();
    }
    NswStatus::Ok
}

/// Runs the solver with `epsilon` given as an exact rational literal like
/// `"1/100"` and writes the solver-output JSON.
///
/// # Safety
/// `inst` must be a live handle, `epsilon` a NUL-terminated string, and
/// `out_json` a valid pointer. The returned string is released with
/// [`nsw_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nsw_solve_json(
    inst: *const NswInstance,
    epsilon: *const c_char,
    out_json: *mut *mut c_char,
) -> NswStatus {
    if inst.is_null() {
        return fail(NswStatus::NullPointer, "instance handle is null".into());
    }
    let eps_text = match read_str(epsilon) {
        Ok(t) => t,
        Err(s) => return fail(s, "epsilon pointer unusable".into()),
    };
    let eps = match Rat::parse(eps_text) {
        Ok(e) => e,
        Err(e) => return fail(NswStatus::InvalidInput, e.to_string()),
    };
    match solve(&(*inst).inner, &eps) {
        Ok(out) => write_string(out_json, out.to_json_string()),
        Err(e @ (SolveError::Validation(_) | SolveError::Rounding(_))) => {
            fail(NswStatus::InvalidInput, e.to_string())
        }
        Err(e) => fail(NswStatus::SolverAbort, e.to_string()),
    }
}

/// Certifies a solver-output JSON against the instance and writes the
/// certificate JSON. Returns `CertificationFailed` when the certificate does
/// not pass; the certificate is still written in that case.
///
/// # Safety
/// Same pointer contracts as [`nsw_solve_json`].
#[no_mangle]
pub unsafe extern "C" fn nsw_certify_json(
    inst: *const NswInstance,
    solution_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NswStatus {
    if inst.is_null() {
        return fail(NswStatus::NullPointer, "instance handle is null".into());
    }
    let text = match read_str(solution_json) {
        Ok(t) => t,
        Err(s) => return fail(s, "solution JSON pointer unusable".into()),
    };
    let solution = match SolverOutput::from_json_str(text) {
        Ok(s) => s,
        Err(e) => return fail(NswStatus::InvalidInput, e),
    };
    match certify(&(*inst).inner, &solution) {
        Ok(cert) => {
            let pass = cert.pass();
            let status = write_string(out_json, cert.to_json_string());
            if status != NswStatus::Ok {
                status
            } else if pass {
                NswStatus::Ok
            } else {
                fail(NswStatus::CertificationFailed, "certificate did not pass".into())
            }
        }
        Err(e) => fail(NswStatus::InvalidInput, e.to_string()),
    }
}

/// Brute-forces the exact optimum and writes the oracle JSON. `max_states`
/// of 0 uses the built-in guard; oversized state spaces return `Oversize`.
///
/// # Safety
/// Same pointer contracts as [`nsw_solve_json`].
#[no_mangle]
pub unsafe extern "C" fn nsw_oracle_json(
    inst: *const NswInstance,
    max_states: u64,
    out_json: *mut *mut c_char,
) -> NswStatus {
    if inst.is_null() {
        return fail(NswStatus::NullPointer, "instance handle is null".into());
    }
    let limit = if max_states == 0 { DEFAULT_MAX_STATES } else { max_states };
    let handle = &*inst;
    match brute_force_opt(&handle.inner, limit) {
        Ok(res) => write_string(out_json, res.to_json_string(handle.inner.n())),
        Err(e) => fail(NswStatus::Oversize, e.to_string()),
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn nsw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
