//! C ABI over `hjb_core`.
//!
//! Objects are opaque handles created by `hjb_*_new`/`hjb_solve_*` style functions and
//! released with the matching `*_free`. Every fallible function returns an `int` status;
//! on failure the message is available from `hjb_last_error` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hjb_core::gridsolve::Extrapolation;
use hjb_core::maxplus::TargetMode;
use hjb_core::problem::riccati_solve;
use hjb_core::schemes::DeltaMode;
use hjb_core::{
    registry, solve_grid, solve_maxplus, ControlProblem, Decomposition, Engine, GridSpec, HjbError, MaxPlusValue,
    SamplePlan, Scheme, SchemeConfig, ValueGrid, Variant,
};

pub const HJB_OK: c_int = 0;
/// A required pointer argument was null.
pub const HJB_ERR_NULL: c_int = 1;
/// Invalid input: configuration, dimensions, step size, time index or JSON.
pub const HJB_ERR_VALIDATION: c_int = 2;
/// Numerical failure during a computation.
pub const HJB_ERR_NUMERIC: c_int = 3;
/// Operation on an object in an unusable state.
pub const HJB_ERR_STATE: c_int = 4;
pub const HJB_ERR_IO: c_int = 5;
/// A string argument was not valid UTF-8.
pub const HJB_ERR_UTF8: c_int = 6;
/// The library panicked; the handle arguments remain valid but results are undefined.
pub const HJB_ERR_PANIC: c_int = 7;

pub const HJB_VARIANT_NEW_UPWIND: c_int = 0;
pub const HJB_VARIANT_PRIOR_FODJO2: c_int = 1;
pub const HJB_VARIANT_FTW_BASELINE: c_int = 2;

pub const HJB_DELTA_LOWER_BOUNDED: c_int = 0;
pub const HJB_DELTA_NONNEGATIVE: c_int = 1;
pub const HJB_DELTA_GENERAL_SIGN: c_int = 2;

pub const HJB_EXTRAPOLATE_LINEAR: c_int = 0;
pub const HJB_EXTRAPOLATE_CLAMP: c_int = 1;

pub const HJB_TARGETS_SAMPLED: c_int = 0;
pub const HJB_TARGETS_QUADRATURE: c_int = 1;
pub const HJB_TARGETS_PER_SAMPLE: c_int = 2;

/// A control problem.
pub struct HjbProblem(ControlProblem);

/// A discretization scheme bound to a problem.
pub struct HjbScheme(Scheme);

/// Grid solution of the backward recursion.
pub struct HjbValueGrid(ValueGrid);

/// Max-plus value function: one set of quadratic forms per time.
pub struct HjbMaxPlusValue(MaxPlusValue);

/// Scheme parameters. Start from `hjb_scheme_options_default` and override fields.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HjbSchemeOptions {
    /// One of `HJB_VARIANT_*`.
    pub variant: c_int,
    /// Weight order; negative selects the smallest admissible order.
    pub k: c_int,
    pub h: f64,
    /// One of `HJB_DELTA_*`.
    pub delta_mode: c_int,
    /// Quadrature nodes per half-axis; 0 selects the default.
    pub quadrature_nodes: usize,
}

/// Max-plus sampling sizes and seed.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HjbSamplePlan {
    pub n_in: usize,
    pub n_x: usize,
    pub n_w: usize,
    pub seed: u64,
    pub init_lo: f64,
    pub init_hi: f64,
    /// One of `HJB_TARGETS_*`.
    pub targets: c_int,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &HjbError) -> c_int {
    match e {
        HjbError::Io(_) => HJB_ERR_IO,
        HjbError::State(_) => HJB_ERR_STATE,
        e if e.is_validation() => HJB_ERR_VALIDATION,
        _ => HJB_ERR_NUMERIC,
    }
}

enum Fail {
    Code(c_int, String),
    Core(HjbError),
}

impl From<HjbError> for Fail {
    fn from(e: HjbError) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HJB_OK,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Ok(Err(Fail::Code(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HJB_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Code(HJB_ERR_NULL, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Code(HJB_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn invalid(msg: String) -> Fail {
    Fail::Code(HJB_ERR_VALIDATION, msg)
}

/// Message of the last failed call on this thread, or null. The pointer stays valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hjb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hjb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a built-in problem by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_builtin(name: *const c_char, out: *mut *mut HjbProblem) -> c_int {
    guard(|| {
        let p = registry::builtin(string(name, "name")?)?;
        put(out, Box::into_raw(Box::new(HjbProblem(p))), "out")
    })
}

/// Parses a problem from its JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_from_json(json: *const c_char, out: *mut *mut HjbProblem) -> c_int {
    guard(|| {
        let p = ControlProblem::from_json(string(json, "json")?)?;
        put(out, Box::into_raw(Box::new(HjbProblem(p))), "out")
    })
}

/// # Safety
/// `p` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_free(p: *mut HjbProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_dim(p: *const HjbProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// Horizon `T`, or NaN for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_horizon(p: *const HjbProblem) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.0.horizon())
}

/// Exact value from the Riccati equation of a single-mode LQ problem, integrated with
/// `time_step`.
///
/// # Safety
/// `p` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_riccati_value(
    p: *const HjbProblem,
    time_step: f64,
    t: f64,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let prob = &deref(p, "problem")?.0;
        let x = slice(x, d, "x")?;
        if d != prob.dim() {
            return Err(invalid(format!("x has {d} entries, expected {}", prob.dim())));
        }
        let v = riccati_solve(prob, time_step)?.value(t, x)?;
        put(out, v, "out")
    })
}

/// New-upwind scheme, smallest admissible order, `h = 0.1`, default quadrature.
#[no_mangle]
pub extern "C" fn hjb_scheme_options_default() -> HjbSchemeOptions {
    HjbSchemeOptions {
        variant: HJB_VARIANT_NEW_UPWIND,
        k: -1,
        h: 0.1,
        delta_mode: HJB_DELTA_LOWER_BOUNDED,
        quadrature_nodes: 0,
    }
}

/// Builds a scheme for `problem`. The scheme keeps its own copy of the problem.
///
/// # Safety
/// `problem` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hjb_scheme_new(
    problem: *const HjbProblem,
    options: *const HjbSchemeOptions,
    out: *mut *mut HjbScheme,
) -> c_int {
    guard(|| {
        let prob = &deref(problem, "problem")?.0;
        let o = *deref(options, "options")?;
        let variant = match o.variant {
            HJB_VARIANT_NEW_UPWIND => Variant::NewUpwind,
            HJB_VARIANT_PRIOR_FODJO2 => Variant::PriorFodjo2,
            HJB_VARIANT_FTW_BASELINE => Variant::FtwBaseline,
            v => return Err(invalid(format!("unknown variant {v}"))),
        };
        let delta_mode = match o.delta_mode {
            HJB_DELTA_LOWER_BOUNDED => DeltaMode::LowerBounded,
            HJB_DELTA_NONNEGATIVE => DeltaMode::Nonnegative,
            HJB_DELTA_GENERAL_SIGN => DeltaMode::GeneralSign,
            v => return Err(invalid(format!("unknown delta mode {v}"))),
        };
        let decomp = Decomposition::from_problem(prob)?;
        let k = if o.k < 0 { decomp.min_k() } else { o.k as u32 };
        let engine = match o.quadrature_nodes {
            0 => Engine::quadrature(),
            n => Engine::Quadrature {
                nodes_per_dim: n,
                split: true,
            },
        };
        let cfg = SchemeConfig {
            delta_mode,
            ..SchemeConfig::new(variant, k, o.h)
        };
        let s = Scheme::new(prob, &decomp, cfg, &engine)?;
        put(out, Box::into_raw(Box::new(HjbScheme(s))), "out")
    })
}

/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_scheme_free(s: *mut HjbScheme) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Largest admissible step `h0`, or NaN for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_scheme_h0(s: *const HjbScheme) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.0.h0())
}

/// Solves on the box `[lo, hi]` with `n[i]` core points per axis.
///
/// # Safety
/// `lo`, `hi` and `n` must each point to `d` elements; `scheme` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_solve_grid(
    scheme: *const HjbScheme,
    lo: *const f64,
    hi: *const f64,
    n: *const usize,
    d: usize,
    extrapolation: c_int,
    out: *mut *mut HjbValueGrid,
) -> c_int {
    guard(|| {
        let s = &deref(scheme, "scheme")?.0;
        if d > 0 && n.is_null() {
            return Err(null("n"));
        }
        let counts = if d == 0 { &[][..] } else { std::slice::from_raw_parts(n, d) };
        let extrapolation = match extrapolation {
            HJB_EXTRAPOLATE_LINEAR => Extrapolation::Linear,
            HJB_EXTRAPOLATE_CLAMP => Extrapolation::Clamp,
            v => return Err(invalid(format!("unknown extrapolation {v}"))),
        };
        let spec = GridSpec {
            lo: slice(lo, d, "lo")?.to_vec(),
            hi: slice(hi, d, "hi")?.to_vec(),
            n: counts.to_vec(),
            extrapolation,
            pad: None,
            allow_high_dim: false,
        };
        let vg = solve_grid(s, &spec)?;
        put(out, Box::into_raw(Box::new(HjbValueGrid(vg))), "out")
    })
}

/// `v^h(t, x)`; `t` must be a multiple of `h`.
///
/// # Safety
/// `v` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_value_grid_eval(
    v: *const HjbValueGrid,
    t: f64,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let val = deref(v, "value grid")?.0.eval(t, slice(x, d, "x")?)?;
        put(out, val, "out")
    })
}

/// # Safety
/// `v` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_value_grid_free(v: *mut HjbValueGrid) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Runs the max-plus solver.
///
/// # Safety
/// `scheme` must be a live handle, `plan` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hjb_solve_maxplus(
    scheme: *const HjbScheme,
    plan: *const HjbSamplePlan,
    out: *mut *mut HjbMaxPlusValue,
) -> c_int {
    guard(|| {
        let s = &deref(scheme, "scheme")?.0;
        let p = *deref(plan, "plan")?;
        let target = match p.targets {
            HJB_TARGETS_SAMPLED => TargetMode::Sampled,
            HJB_TARGETS_QUADRATURE => TargetMode::Quadrature,
            HJB_TARGETS_PER_SAMPLE => TargetMode::PerSample,
            v => return Err(invalid(format!("unknown target mode {v}"))),
        };
        let plan = SamplePlan {
            init_lo: p.init_lo,
            init_hi: p.init_hi,
            target,
            ..SamplePlan::new(p.n_in, p.n_x, p.n_w, p.seed)
        };
        let v = solve_maxplus(s, &plan)?;
        put(out, Box::into_raw(Box::new(HjbMaxPlusValue(v))), "out")
    })
}

/// Reads a value function previously written by `hjb_maxplus_to_json` or the CLI.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_maxplus_from_json(json: *const c_char, out: *mut *mut HjbMaxPlusValue) -> c_int {
    guard(|| {
        let v = MaxPlusValue::from_json(string(json, "json")?)?;
        put(out, Box::into_raw(Box::new(HjbMaxPlusValue(v))), "out")
    })
}

/// `max_z q(x, z)` over the forms stored at time `t`.
///
/// # Safety
/// `v` must be a live handle, `x` must point to `d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_maxplus_eval(
    v: *const HjbMaxPlusValue,
    t: f64,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let val = deref(v, "value")?.0.eval(t, slice(x, d, "x")?)?;
        put(out, val, "out")
    })
}

/// Number of forms stored at time `t`.
///
/// # Safety
/// `v` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_maxplus_num_forms(v: *const HjbMaxPlusValue, t: f64, out: *mut usize) -> c_int {
    guard(|| {
        let v = &deref(v, "value")?.0;
        let n = v.layers[v.time_index(t)?].forms.len();
        put(out, n, "out")
    })
}

/// JSON text of the value function. Release the string with `hjb_string_free`.
///
/// # Safety
/// `v` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_maxplus_to_json(v: *const HjbMaxPlusValue, out: *mut *mut c_char) -> c_int {
    guard(|| {
        let text = deref(v, "value")?.0.to_json()?;
        let c = CString::new(text).map_err(|e| Fail::Code(HJB_ERR_STATE, e.to_string()))?;
        put(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `v` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_maxplus_free(v: *mut HjbMaxPlusValue) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hjb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
