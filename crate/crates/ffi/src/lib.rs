//! C ABI for the solver.
//!
//! Problems and solve reports are opaque handles created and released
//! through this interface. Every fallible function returns a [`SocpError`]
//! code; a description of the most recent failure on the calling thread is
//! available from [`socp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use socp_sqp::driver::{solve, SolverConfig};
use socp_sqp::io::{parse_cbf, read_instance, to_cone_problem, CbfModel};
use socp_sqp::model::{ConeProblem, SolveReport, SolveStatus};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocpError {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidConfig = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Termination status of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocpSolveStatus {
    Optimal = 0,
    Infeasible = 1,
    IterationLimit = 2,
    SubproblemFailure = 3,
}

impl From<SolveStatus> for SocpSolveStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => Self::Optimal,
            SolveStatus::Infeasible => Self::Infeasible,
            SolveStatus::IterationLimit => Self::IterationLimit,
            SolveStatus::SubproblemFailure => Self::SubproblemFailure,
        }
    }
}

/// Solver options exposed to C. Obtain defaults from [`socp_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SocpConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub max_inner_iters: usize,
    pub enable_soc_step: bool,
}

impl From<&SocpConfig> for SolverConfig {
    fn from(c: &SocpConfig) -> Self {
        SolverConfig {
            tol: c.tol,
            max_iters: c.max_iters,
            max_inner_iters: c.max_inner_iters,
            enable_soc_step: c.enable_soc_step,
            ..SolverConfig::default()
        }
    }
}

/// Opaque problem handle.
pub struct SocpProblem {
    problem: ConeProblem,
    /// kept for CBF input so objectives are reported in the original sense
    cbf: Option<CbfModel>,
}

/// Opaque solve report handle.
pub struct SocpReport {
    report: SolveReport,
    objective: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> SocpError) -> SocpError {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => {
            if code == SocpError::Ok {
                set_error("");
            }
            code
        }
        Err(_) => {
            set_error("internal panic");
            SocpError::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, SocpError> {
    if s.is_null() {
        set_error("null string");
        return Err(SocpError::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|e| {
        set_error(e.to_string());
        SocpError::InvalidUtf8
    })
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn socp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default solver options.
#[no_mangle]
pub extern "C" fn socp_config_default() -> SocpConfig {
    let d = SolverConfig::default();
    SocpConfig {
        tol: d.tol,
        max_iters: d.max_iters,
        max_inner_iters: d.max_inner_iters,
        enable_soc_step: d.enable_soc_step,
    }
}

/// Reads a problem from the JSON instance format.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn socp_problem_from_json(json: *const c_char, out: *mut *mut SocpProblem) -> SocpError {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return SocpError::NullPointer;
        }
        *out = ptr::null_mut();
        let s = match text(json) {
            Ok(s) => s,
            Err(e) => return e,
        };
        match read_instance(s) {
            Ok(inst) => {
                emit(out, SocpProblem { problem: inst.problem, cbf: None });
                SocpError::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SocpError::Parse
            }
        }
    })
}

/// Reads a problem from CBF text.
///
/// # Safety
/// `cbf` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn socp_problem_from_cbf(cbf: *const c_char, out: *mut *mut SocpProblem) -> SocpError {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return SocpError::NullPointer;
        }
        *out = ptr::null_mut();
        let s = match text(cbf) {
            Ok(s) => s,
            Err(e) => return e,
        };
        match parse_cbf(s).and_then(|m| to_cone_problem(&m).map(|p| (m, p))) {
            Ok((model, problem)) => {
                emit(out, SocpProblem { problem, cbf: Some(model) });
                SocpError::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SocpError::Parse
            }
        }
    })
}

/// Number of variables, including those introduced by the CBF mapping.
/// Returns 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn socp_problem_num_vars(problem: *const SocpProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.problem.num_vars())
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn socp_problem_free(problem: *mut SocpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solves a problem. `config` may be null for defaults. A report is
/// produced for every termination status; inspect it with
/// [`socp_report_status`].
///
/// # Safety
/// `problem` must be a live handle, `config` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn socp_solve(
    problem: *const SocpProblem,
    config: *const SocpConfig,
    out: *mut *mut SocpReport,
) -> SocpError {
    guard(|| {
        if out.is_null() || problem.is_null() {
            set_error("null problem or output pointer");
            return SocpError::NullPointer;
        }
        *out = ptr::null_mut();
        let p = &*problem;
        let cfg = config.as_ref().map_or_else(SolverConfig::default, SolverConfig::from);
        match solve(&p.problem, None, &cfg) {
            Ok(report) => {
                let x = &report.triple.x;
                let objective = match &p.cbf {
                    Some(m) => m.original_objective(x),
                    None => p.problem.objective_value(x),
                };
                emit(out, SocpReport { report, objective });
                SocpError::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SocpError::InvalidConfig
            }
        }
    })
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn socp_report_status(report: *const SocpReport) -> SocpSolveStatus {
    (*report).report.status.into()
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn socp_report_kkt_error(report: *const SocpReport) -> f64 {
    (*report).report.kkt_error
}

/// Objective at the returned point, in the sense of the input file.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn socp_report_objective(report: *const SocpReport) -> f64 {
    (*report).objective
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn socp_report_iterations(report: *const SocpReport) -> usize {
    (*report).report.total_iters
}

/// Copies the primal point into `buf`. `len` is the capacity of `buf`;
/// the required length is always written to `needed` when it is non-null.
///
/// # Safety
/// `report` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn socp_report_x(
    report: *const SocpReport,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> SocpError {
    guard(|| {
        let Some(r) = report.as_ref() else {
            set_error("null report");
            return SocpError::NullPointer;
        };
        let x = &r.report.triple.x;
        if let Some(n) = needed.as_mut() {
            *n = x.len();
        }
        if len < x.len() {
            set_error(format!("buffer holds {len} values, {} required", x.len()));
            return SocpError::BufferTooSmall;
        }
        if buf.is_null() {
            set_error("null buffer");
            return SocpError::NullPointer;
        }
        ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
        SocpError::Ok
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn socp_report_free(report: *mut SocpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
