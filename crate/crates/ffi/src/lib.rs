//! C ABI over `mts-core`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an [`MtsStatus`]
//! and leaves a message retrievable through [`mts_last_error`] on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mts_core::compress::compress;
use mts_core::dag::MarkedDag;
use mts_core::engine::{EngineState, StepOptions};
use mts_core::error::Error;
use mts_core::metric::MetricSpace;
use mts_core::offline::{comparator_lipschitz, offline_opt};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvariantFailure = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// A validated marked DAG.
pub struct MtsDag {
    dag: MarkedDag,
}

/// Algorithm state bound to a DAG.
pub struct MtsEngine {
    state: EngineState,
}

/// Per-step accounting.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MtsStepResult {
    pub service: f64,
    pub movement_l1: f64,
    pub splits: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MtsStatus {
    if e.is_invariant_failure() {
        MtsStatus::InvariantFailure
    } else {
        MtsStatus::InvalidInput
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MtsStatus, String)>) -> MtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MtsStatus::Panic
        }
    }
}

fn fail(e: Error) -> (MtsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MtsStatus, String) {
    (MtsStatus::NullPointer, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mts_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

unsafe fn read_matrix(dist: *const f64, n: usize) -> Result<MetricSpace, (MtsStatus, String)> {
    if dist.is_null() {
        return Err(null("dist"));
    }
    let flat = std::slice::from_raw_parts(dist, n * n);
    MetricSpace::from_flat(flat, n).map_err(fail)
}

/// Builds the net DAG of a row-major `n x n` distance matrix, compressed
/// when `compressed` is nonzero.
///
/// # Safety
/// `dist` must point to `n * n` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_build(dist: *const f64, n: usize, compressed: i32, out: *mut *mut MtsDag) -> MtsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = read_matrix(dist, n)?;
        let net = mts_core::builder::build_hierarchical_dag(&m).map_err(fail)?;
        let dag = if compressed != 0 && net.dag.arc_count() > 0 {
            compress(&net.dag).map_err(fail)?.compressed
        } else {
            net.dag
        };
        *out = Box::into_raw(Box::new(MtsDag { dag }));
        Ok(())
    })
}

/// Parses and validates DAG JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_from_json(json: *const c_char, out: *mut *mut MtsDag) -> MtsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (MtsStatus::InvalidInput, "json is not UTF-8".to_string()))?;
        let dag = MarkedDag::from_json(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(MtsDag { dag }));
        Ok(())
    })
}

/// Writes the DAG's JSON into `buf`. `needed` receives the required size
/// including the NUL; the call fails with `BufferTooSmall` if `len` is short.
///
/// # Safety
/// `dag` must come from this library; `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_to_json(dag: *const MtsDag, buf: *mut c_char, len: usize, needed: *mut usize) -> MtsStatus {
    guard(|| {
        let dag = dag.as_ref().ok_or_else(|| null("dag"))?;
        let json = dag.dag.to_json().map_err(fail)?;
        if !needed.is_null() {
            *needed = json.len() + 1;
        }
        if buf.is_null() || len < json.len() + 1 {
            return Err((MtsStatus::BufferTooSmall, format!("need {} bytes", json.len() + 1)));
        }
        ptr::copy_nonoverlapping(json.as_ptr() as *const c_char, buf, json.len());
        *buf.add(json.len()) = 0;
        Ok(())
    })
}

/// Number of points (sinks); 0 for a null handle.
///
/// # Safety
/// `dag` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_num_points(dag: *const MtsDag) -> usize {
    dag.as_ref().map_or(0, |d| d.dag.num_points())
}

/// Number of root-sink paths, saturated at `u64::MAX`; 0 for a null handle.
///
/// # Safety
/// `dag` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_path_count(dag: *const MtsDag) -> u64 {
    dag.as_ref().map_or(0, |d| u64::try_from(d.dag.path_count()).unwrap_or(u64::MAX))
}

/// # Safety
/// `dag` must be null or come from this library, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mts_dag_free(dag: *mut MtsDag) {
    if !dag.is_null() {
        drop(Box::from_raw(dag));
    }
}

/// Starts the dynamics on `dag` from its arc probabilities. A non-positive
/// `kappa` selects six times the comparator Lipschitz constant, which needs
/// the DAG to carry its metric.
///
/// # Safety
/// `dag` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mts_engine_new(dag: *const MtsDag, kappa: f64, out: *mut *mut MtsEngine) -> MtsStatus {
    guard(|| {
        let dag = dag.as_ref().ok_or_else(|| null("dag"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kappa = if kappa > 0.0 {
            kappa
        } else {
            let m = dag
                .dag
                .metric()
                .ok_or_else(|| (MtsStatus::InvalidInput, "DAG has no metric to derive kappa from".to_string()))?;
            6.0 * comparator_lipschitz(&dag.dag, m).map_err(fail)?
        };
        let state = EngineState::new(dag.dag.clone(), None, kappa).map_err(fail)?;
        *out = Box::into_raw(Box::new(MtsEngine { state }));
        Ok(())
    })
}

/// Serves one cost vector of length `n`.
///
/// # Safety
/// `engine` must come from this library; `cost` must point to `n` doubles;
/// `result` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn mts_engine_step(
    engine: *mut MtsEngine,
    cost: *const f64,
    n: usize,
    result: *mut MtsStepResult,
) -> MtsStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        let c = std::slice::from_raw_parts(cost, n);
        let rec = engine.state.step(c, &StepOptions::default()).map_err(fail)?;
        if let Some(r) = result.as_mut() {
            *r = MtsStepResult {
                service: rec.service,
                movement_l1: rec.movement_l1,
                splits: rec.splits,
            };
        }
        Ok(())
    })
}

/// Copies the current point marginal into `out[0..n]`.
///
/// # Safety
/// `engine` must come from this library; `out` must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mts_engine_marginal(engine: *const MtsEngine, out: *mut f64, n: usize) -> MtsStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = engine.state.marginal();
        if n < m.len() {
            return Err((MtsStatus::BufferTooSmall, format!("need {} entries", m.len())));
        }
        ptr::copy_nonoverlapping(m.as_ptr(), out, m.len());
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or come from this library, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mts_engine_free(engine: *mut MtsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Offline optimum of `t` cost rows (row-major `t x n`) from state `start`,
/// on the diameter-normalized metric.
///
/// # Safety
/// `dist` must point to `n * n` doubles, `costs` to `t * n` doubles, `total` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mts_offline_opt(
    dist: *const f64,
    n: usize,
    costs: *const f64,
    t: usize,
    start: usize,
    total: *mut f64,
) -> MtsStatus {
    guard(|| {
        let m = read_matrix(dist, n)?;
        if total.is_null() {
            return Err(null("total"));
        }
        if costs.is_null() && t > 0 {
            return Err(null("costs"));
        }
        let rows: Vec<Vec<f64>> = if t == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(costs, t * n).chunks(n).map(<[f64]>::to_vec).collect()
        };
        *total = offline_opt(&m, &rows, start).map_err(fail)?.total;
        Ok(())
    })
}
