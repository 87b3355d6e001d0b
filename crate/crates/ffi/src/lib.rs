//! C ABI for `darcy-mlmc`.
//!
//! Handles are opaque and owned by the caller; every handle returned through
//! an out-pointer must be released with its `_free` function. Functions
//! return a [`DmStatus`]; on failure the thread-local message from
//! [`dm_last_error`] describes the cause. Strings returned as `char *` are
//! owned by the caller and released with [`dm_string_free`].

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use darcy_mlmc::assembly::{assemble, EdgeAveraging};
use darcy_mlmc::experiment::{self, Command, ExperimentConfig, RunOutput};
use darcy_mlmc::grid::Grid;
use darcy_mlmc::problem::ModelProblem;
use darcy_mlmc::solver::{Solver, SolverConfig};
use darcy_mlmc::{qoi, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NonStationary = 4,
    NotConverged = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmCommand {
    Convergence = 0,
    CgvCompare = 1,
    SolverBench = 2,
    Mlmc = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmModelProblem {
    /// Unit source, zero pressure on the boundary, local average.
    PointAverage = 0,
    /// Unit pressure drop along x1, outflow through x1 = 1.
    Outflow = 1,
}

/// Parsed and validated experiment configuration.
pub struct DmExperiment {
    config: ExperimentConfig,
}

/// Output of one experiment run.
pub struct DmResult {
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DmStatus {
    match e {
        Error::Config { .. } => DmStatus::Config,
        Error::NonStationary => DmStatus::NonStationary,
        Error::NotConverged { .. } => DmStatus::NotConverged,
        Error::EmbeddingNotNonNegative { .. } | Error::SingularSystem | Error::TooFewLevels(_) => DmStatus::Numerical,
        Error::Io(_) | Error::Json(_) => DmStatus::Io,
        _ => DmStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), (DmStatus, String)>>(f: F) -> DmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DmStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DmStatus, String) {
    (DmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (DmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a TOML experiment configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_experiment_from_toml(toml: *const c_char, out: *mut *mut DmExperiment) -> DmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { str_arg(toml, "toml") }?;
        let config = ExperimentConfig::from_toml_str(text).map_err(lib_err)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(DmExperiment { config })) };
        Ok(())
    })
}

/// Replaces the base seed of the experiment.
///
/// # Safety
/// `exp` must come from [`dm_experiment_from_toml`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn dm_experiment_set_seed(exp: *mut DmExperiment, seed: u64) -> DmStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let exp = unsafe { exp.as_mut() }.ok_or_else(|| null("experiment"))?;
        exp.config.sampling.seed = seed;
        Ok(())
    })
}

/// Resolved configuration as TOML; release with [`dm_string_free`].
///
/// # Safety
/// `exp` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dm_experiment_to_toml(exp: *const DmExperiment) -> *mut c_char {
    // SAFETY: caller guarantees a live handle or null.
    match unsafe { exp.as_ref() } {
        Some(e) => match e.config.to_toml_string() {
            Ok(s) => into_c_string(s),
            Err(err) => {
                set_last_error(err.to_string());
                ptr::null_mut()
            }
        },
        None => {
            set_last_error("experiment is null".into());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `exp` must come from [`dm_experiment_from_toml`] (or be null) and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_experiment_free(exp: *mut DmExperiment) {
    if !exp.is_null() {
        // SAFETY: pointer came from Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// Runs one study.
///
/// # Safety
/// `exp` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_run(exp: *const DmExperiment, command: DmCommand, out: *mut *mut DmResult) -> DmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees a live handle or null.
        let exp = unsafe { exp.as_ref() }.ok_or_else(|| null("experiment"))?;
        let command = match command {
            DmCommand::Convergence => Command::Convergence,
            DmCommand::CgvCompare => Command::CgvCompare,
            DmCommand::SolverBench => Command::SolverBench,
            DmCommand::Mlmc => Command::Mlmc,
        };
        let output = experiment::run(command, &exp.config).map_err(lib_err)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(DmResult { output })) };
        Ok(())
    })
}

/// Run summary as JSON; release with [`dm_string_free`]. Null on failure.
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dm_result_summary_json(res: *const DmResult) -> *mut c_char {
    // SAFETY: caller guarantees a live handle or null.
    match unsafe { res.as_ref() } {
        Some(r) => match serde_json::to_string(&r.output.summary()) {
            Ok(s) => into_c_string(s),
            Err(e) => {
                set_last_error(e.to_string());
                ptr::null_mut()
            }
        },
        None => {
            set_last_error("result is null".into());
            ptr::null_mut()
        }
    }
}

/// Per-level table in the `levels.csv` format; release with
/// [`dm_string_free`].
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dm_result_levels_csv(res: *const DmResult) -> *mut c_char {
    // SAFETY: caller guarantees a live handle or null.
    match unsafe { res.as_ref() } {
        Some(r) => into_c_string(r.output.levels_csv.clone()),
        None => {
            set_last_error("result is null".into());
            ptr::null_mut()
        }
    }
}

/// Writes every output file into directory `dir`.
///
/// # Safety
/// `res` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn dm_result_write(res: *const DmResult, dir: *const c_char) -> DmStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let res = unsafe { res.as_ref() }.ok_or_else(|| null("result"))?;
        let dir = unsafe { str_arg(dir, "dir") }?;
        experiment::write_outputs(Path::new(dir), &res.output).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `res` must come from [`dm_run`] (or be null) and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_result_free(res: *mut DmResult) {
    if !res.is_null() {
        // SAFETY: pointer came from Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(res) });
    }
}

/// # Safety
/// `s` must be a string returned by this library (or null).
#[no_mangle]
pub unsafe extern "C" fn dm_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: pointer came from CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Solves one model problem for a given cell permeability on the grid with
/// `m` cells per direction in `dim` dimensions (`m^dim` values, last
/// coordinate fastest), with harmonic edge averaging and the default solver.
/// Writes the functional to `qoi_out` and, when `pressure_out` is not null,
/// the cell pressures (`m^dim` values). `iterations_out` may be null.
///
/// # Safety
/// `k` must point to `len` doubles; `pressure_out`, if not null, to `len`
/// writable doubles; `qoi_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dm_solve(
    dim: usize,
    m: usize,
    problem: DmModelProblem,
    k: *const f64,
    len: usize,
    pressure_out: *mut f64,
    qoi_out: *mut f64,
    iterations_out: *mut usize,
) -> DmStatus {
    guard(|| {
        if k.is_null() {
            return Err(null("k"));
        }
        if qoi_out.is_null() {
            return Err(null("qoi_out"));
        }
        let grid = Grid::new(dim, m).map_err(lib_err)?;
        if len != grid.num_cells() {
            return Err((
                DmStatus::InvalidArgument,
                format!("expected {} permeability values, got {len}", grid.num_cells()),
            ));
        }
        // SAFETY: caller guarantees `len` readable doubles.
        let k = unsafe { std::slice::from_raw_parts(k, len) };
        let kind = match problem {
            DmModelProblem::PointAverage => ModelProblem::PointAverage,
            DmModelProblem::Outflow => ModelProblem::Outflow,
        };
        let bc = kind.boundary(dim);
        let mode = EdgeAveraging::Harmonic;
        let system = assemble(&grid, k, &bc, &kind.source(), mode).map_err(lib_err)?;
        let report = Solver::new(SolverConfig::default())
            .solve(&system, k, &bc, mode)
            .map_err(lib_err)?;
        let q = qoi::evaluate(&kind.default_qoi(dim), &report.solution, k, &grid, &bc).map_err(lib_err)?;
        // SAFETY: out-pointers checked or documented as valid.
        unsafe {
            *qoi_out = q;
            if !pressure_out.is_null() {
                std::slice::from_raw_parts_mut(pressure_out, len).copy_from_slice(&report.solution);
            }
            if !iterations_out.is_null() {
                *iterations_out = report.iterations;
            }
        }
        Ok(())
    })
}
