//! C ABI for the estimation library: opaque handles, integer status codes,
//! and a thread-local last-error message. The matching header is generated
//! into `include/blochreach.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use blochreach::config::RunConfig;
use blochreach::controls::PiecewiseControl;
use blochreach::dynamics::{propagate_endpoint_exact, BlochVector, SystemParams};
use blochreach::estimation::{build_grid, GridSpec};
use blochreach::objectives::PNorm;
use blochreach::store::RunSummaryFile;
use blochreach::{run, store, validate};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation; see `br_last_error`.
    InvalidArgument = 2,
    /// A path or file operation failed; see `br_last_error`.
    Io = 3,
    /// The computation failed; see `br_last_error`.
    Runtime = 4,
    /// The provided buffer is too small; see `br_last_error` for the size.
    BufferTooSmall = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn classify(err: &blochreach::Error) -> BrStatus {
    use blochreach::Error as E;
    set_error(err);
    match err {
        E::InvalidConfig(_)
        | E::Parse { .. }
        | E::InvalidParams(_)
        | E::InvalidControl(_)
        | E::InvalidState(_)
        | E::OutOfBox(_)
        | E::UnknownRun(_)
        | E::UnknownStage(_) => BrStatus::InvalidArgument,
        E::Io(_) => BrStatus::Io,
        _ => BrStatus::Runtime,
    }
}

/// Opaque handle to a parsed run configuration.
pub struct BrConfig {
    inner: RunConfig,
}

/// Opaque handle to a completed run loaded from disk.
pub struct BrRun {
    summary: RunSummaryFile,
    /// Member rows per stage: `(x1, x2, x3, best_value)`.
    member_points: Vec<Vec<[f64; 4]>>,
}

/// Per-stage aggregates of a loaded run. `farthest` is NaN when the stage has
/// no members.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BrStageMetrics {
    pub t_final: f64,
    pub d_mult: f64,
    pub members: usize,
    pub candidates: usize,
    pub volume: f64,
    pub ball_fraction: f64,
    pub grid_fraction: f64,
    pub farthest: f64,
}

/// Version string of the library; the pointer is static.
#[no_mangle]
pub extern "C" fn br_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf` (NUL-terminated) and
/// return the full message length in bytes (excluding the NUL). A zero return
/// means no error has been recorded. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must either be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn br_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Parse a TOML run configuration from `path`. Returns null on failure (see
/// `br_last_error`). Free with `br_config_free`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn br_config_load(path: *const c_char) -> *mut BrConfig {
    let Some(path) = cstr_arg(path) else {
        set_error("path must be a non-null UTF-8 string");
        return ptr::null_mut();
    };
    match RunConfig::from_path(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(BrConfig { inner })),
        Err(err) => {
            set_error(err);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `config` must have been returned by `br_config_load` and not freed yet.
#[no_mangle]
pub unsafe extern "C" fn br_config_free(config: *mut BrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Execute (or resume) the run described by `config`. On success the run id
/// is copied into `id_buf` as a NUL-terminated string.
///
/// `workers` = 0 uses all cores; `force` recomputes even when results exist.
///
/// # Safety
/// `config` must be a live handle from `br_config_load`; `id_buf` must point
/// to at least `id_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn br_estimate(
    config: *const BrConfig,
    workers: usize,
    force: bool,
    id_buf: *mut c_char,
    id_cap: usize,
) -> BrStatus {
    let Some(config) = config.as_ref() else {
        set_error("config handle is null");
        return BrStatus::NullArgument;
    };
    if id_buf.is_null() {
        set_error("id_buf is null");
        return BrStatus::NullArgument;
    }
    let workers = (workers > 0).then_some(workers);
    match run::execute(&config.inner, workers, force, None) {
        Ok(outcome) => {
            let id = outcome.run_id.as_bytes();
            if id_cap < id.len() + 1 {
                set_error(format!("id buffer needs {} bytes", id.len() + 1));
                return BrStatus::BufferTooSmall;
            }
            ptr::copy_nonoverlapping(id.as_ptr(), id_buf as *mut u8, id.len());
            *id_buf.add(id.len()) = 0;
            BrStatus::Ok
        }
        Err(err) => classify(&err),
    }
}

/// Load a completed run from `root`/`run_id`. Returns null on failure. Free
/// with `br_run_free`.
///
/// # Safety
/// `root` and `run_id` must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn br_run_open(
    root: *const c_char,
    run_id: *const c_char,
) -> *mut BrRun {
    let (Some(root), Some(run_id)) = (cstr_arg(root), cstr_arg(run_id)) else {
        set_error("root and run_id must be non-null UTF-8 strings");
        return ptr::null_mut();
    };
    let root = Path::new(root);
    let summary = match store::load_summary(root, run_id) {
        Ok(s) => s,
        Err(err) => {
            set_error(err);
            return ptr::null_mut();
        }
    };
    let evidence = match store::load_evidence(root, run_id) {
        Ok(e) => e,
        Err(err) => {
            set_error(err);
            return ptr::null_mut();
        }
    };
    let member_points = (0..summary.stages.len())
        .map(|stage| {
            let mut rows: Vec<[f64; 4]> = evidence
                .get(&stage)
                .map(|nodes| {
                    let mut members: Vec<_> =
                        nodes.values().filter(|n| n.member).collect();
                    members.sort_by_key(|n| n.node);
                    members
                        .iter()
                        .map(|n| [n.point[0], n.point[1], n.point[2], n.best_value])
                        .collect()
                })
                .unwrap_or_default();
            rows.shrink_to_fit();
            rows
        })
        .collect();
    Box::into_raw(Box::new(BrRun {
        summary,
        member_points,
    }))
}

/// # Safety
/// `run` must have been returned by `br_run_open` and not freed yet.
#[no_mangle]
pub unsafe extern "C" fn br_run_free(run: *mut BrRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of stages of a loaded run; zero when `run` is null.
///
/// # Safety
/// `run` must be null or a live handle from `br_run_open`.
#[no_mangle]
pub unsafe extern "C" fn br_run_stage_count(run: *const BrRun) -> usize {
    run.as_ref().map_or(0, |r| r.summary.stages.len())
}

/// Fetch the aggregates of one stage.
///
/// # Safety
/// `run` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn br_run_stage_metrics(
    run: *const BrRun,
    stage: usize,
    out: *mut BrStageMetrics,
) -> BrStatus {
    let Some(run) = run.as_ref() else {
        set_error("run handle is null");
        return BrStatus::NullArgument;
    };
    if out.is_null() {
        set_error("out is null");
        return BrStatus::NullArgument;
    }
    let Some(s) = run.summary.stages.get(stage) else {
        set_error(format!(
            "stage {stage} out of range ({} stages)",
            run.summary.stages.len()
        ));
        return BrStatus::InvalidArgument;
    };
    *out = BrStageMetrics {
        t_final: s.t_final,
        d_mult: s.d_mult,
        members: s.members,
        candidates: s.candidates,
        volume: s.volume,
        ball_fraction: s.ball_fraction,
        grid_fraction: s.grid_fraction,
        farthest: s.farthest.unwrap_or(f64::NAN),
    };
    BrStatus::Ok
}

/// Copy the member points of one stage as quadruples
/// `(x1, x2, x3, best_value)` into `out`. `cap` counts quadruples; the number
/// available is always written to `written`. Call with `cap` = 0 to query the
/// count.
///
/// # Safety
/// `run` must be a live handle; `out` must point to at least `4 * cap`
/// doubles when `cap` > 0; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_run_member_points(
    run: *const BrRun,
    stage: usize,
    out: *mut f64,
    cap: usize,
    written: *mut usize,
) -> BrStatus {
    let Some(run) = run.as_ref() else {
        set_error("run handle is null");
        return BrStatus::NullArgument;
    };
    if written.is_null() {
        set_error("written is null");
        return BrStatus::NullArgument;
    }
    let Some(points) = run.member_points.get(stage) else {
        set_error(format!(
            "stage {stage} out of range ({} stages)",
            run.member_points.len()
        ));
        return BrStatus::InvalidArgument;
    };
    *written = points.len();
    if cap == 0 {
        return BrStatus::Ok;
    }
    if out.is_null() {
        set_error("out is null");
        return BrStatus::NullArgument;
    }
    if cap < points.len() {
        set_error(format!("need capacity for {} points", points.len()));
        return BrStatus::BufferTooSmall;
    }
    for (i, quad) in points.iter().enumerate() {
        ptr::copy_nonoverlapping(quad.as_ptr(), out.add(4 * i), 4);
    }
    BrStatus::Ok
}

/// Exact endpoint of the piecewise-constant flow: propagate `x0` under the
/// step values `v` and `n` over `[0, t_final]` and write the endpoint into
/// `endpoint` (3 doubles).
///
/// # Safety
/// `x0` and `endpoint` must point to 3 doubles; `v` and `n` to `v_len` and
/// `n_len` doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn br_propagate(
    omega: f64,
    gamma: f64,
    kappa: f64,
    x0: *const f64,
    t_final: f64,
    v: *const f64,
    v_len: usize,
    n: *const f64,
    n_len: usize,
    endpoint: *mut f64,
) -> BrStatus {
    if x0.is_null() || v.is_null() || n.is_null() || endpoint.is_null() {
        set_error("pointer argument is null");
        return BrStatus::NullArgument;
    }
    let params = match SystemParams::new(omega, gamma, kappa) {
        Ok(p) => p,
        Err(err) => return classify(&err),
    };
    let v = std::slice::from_raw_parts(v, v_len);
    let n = std::slice::from_raw_parts(n, n_len);
    let control = match PiecewiseControl::new(t_final, v.to_vec(), n.to_vec()) {
        Ok(u) => u,
        Err(err) => return classify(&err),
    };
    let start = BlochVector::new(*x0, *x0.add(1), *x0.add(2));
    match propagate_endpoint_exact(&start, &control, &params) {
        Ok(end) => {
            *endpoint = end[0];
            *endpoint.add(1) = end[1];
            *endpoint.add(2) = end[2];
            BrStatus::Ok
        }
        Err(err) => classify(&err),
    }
}

/// Number of ball-grid nodes for subdivision count `m`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_grid_size(m: u32, out: *mut usize) -> BrStatus {
    if out.is_null() {
        set_error("out is null");
        return BrStatus::NullArgument;
    }
    match GridSpec::new(m, 1.0, PNorm::L1) {
        Ok(spec) => {
            *out = build_grid(spec).len();
            BrStatus::Ok
        }
        Err(err) => classify(&err),
    }
}

/// Run the built-in oracle suite; `Ok` when every check passes.
#[no_mangle]
pub extern "C" fn br_self_check() -> BrStatus {
    let checks = validate::run_all();
    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if failures.is_empty() {
        BrStatus::Ok
    } else {
        set_error(failures.join("; "));
        BrStatus::Runtime
    }
}
