//! C ABI over `uplift-core`.
//!
//! Every fallible call returns an [`UpliftStatus`]; on failure the message is
//! kept per thread and read back with [`uplift_last_error`]. Stacks and
//! fitted margins cross the boundary as opaque handles that the caller frees
//! with the matching `*_free` function.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, c_double, size_t};

use uplift::directsampling::{ds_simulate, DsParams};
use uplift::field::{load_grid_stack, save_grid_stack, Grid, GridStack, StackFormat};
use uplift::lifting::{events_from_stack, extract_top_events, lift_batch, lifted_stack, postprocess_map, LiftSpec};
use uplift::marginal::{fit_marginal, gpd_cdf, gpd_density, gpd_quantile, gpd_survival, MarginalModel, ShapeEstimator};
use uplift::pipeline::{run_pipeline, PipelineConfig};
use uplift::risk::{apply_risk, return_level_with, summary_series, ReturnLevelConvention, RiskFunctional};
use uplift::synth::{simulate, CovarianceSpec, FactorMethod, Family, MarginTransform, SynthSpec};
use uplift::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpliftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Field = 3,
    Marginal = 4,
    Risk = 5,
    Lift = 6,
    Synth = 7,
    DirectSampling = 8,
    Config = 9,
    Pipeline = 10,
    Panic = 11,
}

/// Replicated gridded data.
pub struct UpliftStack(GridStack);

/// Fitted spliced kernel/GPD margin.
pub struct UpliftMarginal(MarginalModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(UpliftStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Field(_) => UpliftStatus::Field,
            Error::Marginal(_) => UpliftStatus::Marginal,
            Error::Risk(_) => UpliftStatus::Risk,
            Error::Lift(_) => UpliftStatus::Lift,
            Error::Naive(_) => UpliftStatus::InvalidArgument,
            Error::Synth(_) => UpliftStatus::Synth,
            Error::Ds(_) => UpliftStatus::DirectSampling,
            Error::Config(_) => UpliftStatus::Config,
            Error::Pipeline(_) => UpliftStatus::Pipeline,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: UpliftStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn core<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from(e.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UpliftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UpliftStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UpliftStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(UpliftStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live handle.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(UpliftStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a>(p: *const c_double, len: size_t, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(UpliftStatus::NullPointer, format!("{name} is null"));
    }
    // SAFETY: non-null and the caller guarantees `len` readable values.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(UpliftStatus::NullPointer, format!("{name} is null"));
    }
    // SAFETY: non-null and the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(UpliftStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn parse<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    s.parse().or_else(|e: T::Err| fail(UpliftStatus::InvalidArgument, format!("{name}: {e}")))
}

fn boxed<T>(slot: &mut *mut T, value: T) {
    *slot = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn uplift_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uplift_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- stacks

/// Build a stack from `m * nx * ny` row-major values, replicates concatenated.
///
/// # Safety
/// `values` must point to `len` readable doubles; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_new(
    nx: size_t,
    ny: size_t,
    x0: c_double,
    y0: c_double,
    dx: c_double,
    dy: c_double,
    m: size_t,
    values: *const c_double,
    len: size_t,
    result: *mut *mut UpliftStack,
) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let values = unsafe { slice(values, len, "values") }?;
        let grid = core(Grid::new(nx, ny, x0, y0, dx, dy))?;
        let stack = core(GridStack::new(grid, m, values.to_vec()))?;
        boxed(result, UpliftStack(stack));
        Ok(())
    })
}

/// Read a stack; `format` is `binary` or `csv-long`.
///
/// # Safety
/// `path` and `format` must be NUL-terminated strings; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_load(path: *const c_char, format: *const c_char, result: *mut *mut UpliftStack) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let format: StackFormat = parse(unsafe { text(format, "format") }?, "format")?;
        let stack = core(load_grid_stack(unsafe { text(path, "path") }?, format))?;
        boxed(result, UpliftStack(stack));
        Ok(())
    })
}

/// # Safety
/// `stack` must be a live handle; `path` and `format` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_save(stack: *const UpliftStack, path: *const c_char, format: *const c_char) -> UpliftStatus {
    guard(|| {
        let stack = unsafe { handle(stack, "stack") }?;
        let format: StackFormat = parse(unsafe { text(format, "format") }?, "format")?;
        core(save_grid_stack(&stack.0, unsafe { text(path, "path") }?, format))
    })
}

/// Grid shape and replicate count; any output pointer may be null.
///
/// # Safety
/// `stack` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_shape(stack: *const UpliftStack, nx: *mut size_t, ny: *mut size_t, m: *mut size_t) -> UpliftStatus {
    guard(|| {
        let s = &unsafe { handle(stack, "stack") }?.0;
        for (p, v) in [(nx, s.grid().nx), (ny, s.grid().ny), (m, s.m())] {
            if let Some(p) = unsafe { p.as_mut() } {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copy all values into `buffer`, which must hold exactly `m * nx * ny` doubles.
///
/// # Safety
/// `stack` must be a live handle; `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_values(stack: *const UpliftStack, buffer: *mut c_double, len: size_t) -> UpliftStatus {
    guard(|| {
        let values = unsafe { handle(stack, "stack") }?.0.values();
        if len != values.len() {
            return fail(UpliftStatus::InvalidArgument, format!("buffer holds {len} values, stack has {}", values.len()));
        }
        if buffer.is_null() {
            return fail(UpliftStatus::NullPointer, "buffer is null");
        }
        // SAFETY: `buffer` is non-null and holds `len` doubles.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buffer, len) };
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uplift_stack_free(stack: *mut UpliftStack) {
    if !stack.is_null() {
        // SAFETY: allocated by this library and freed at most once.
        drop(unsafe { Box::from_raw(stack) });
    }
}

// ---------------------------------------------------------------- margins

/// Fit the spliced margin to a sample; `estimator` is `moment`, `hill`, `ml`
/// or `ml-nonpositive`.
///
/// # Safety
/// `sample` must point to `n` doubles; `estimator` must be NUL-terminated;
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_marginal_fit(
    sample: *const c_double,
    n: size_t,
    p_u: c_double,
    estimator: *const c_char,
    result: *mut *mut UpliftMarginal,
) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let sample = unsafe { slice(sample, n, "sample") }?;
        let est: ShapeEstimator = parse(unsafe { text(estimator, "estimator") }?, "estimator")?;
        boxed(result, UpliftMarginal(core(fit_marginal(sample, p_u, est))?));
        Ok(())
    })
}

/// Threshold, GPD scale and shape, exceedance probability and kernel
/// bandwidth; any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_marginal_params(
    model: *const UpliftMarginal,
    u: *mut c_double,
    sigma: *mut c_double,
    xi: *mut c_double,
    p_u: *mut c_double,
    bandwidth: *mut c_double,
) -> UpliftStatus {
    guard(|| {
        let m = &unsafe { handle(model, "model") }?.0;
        let t = m.tail();
        for (p, v) in [(u, t.u), (sigma, t.sigma), (xi, t.xi), (p_u, t.p_u), (bandwidth, m.bulk().bandwidth())] {
            if let Some(p) = unsafe { p.as_mut() } {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Which quantity [`uplift_marginal_eval`] computes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpliftMarginalFn {
    Density = 0,
    Cdf = 1,
    Survival = 2,
    Quantile = 3,
    ToUniform = 4,
    FromUniform = 5,
    ToPareto = 6,
}

/// Evaluate the fitted margin at `x`.
///
/// # Safety
/// `model` must be a live handle; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_marginal_eval(
    model: *const UpliftMarginal,
    which: UpliftMarginalFn,
    x: c_double,
    result: *mut c_double,
) -> UpliftStatus {
    guard(|| {
        let m = &unsafe { handle(model, "model") }?.0;
        let result = unsafe { out(result, "result") }?;
        *result = match which {
            UpliftMarginalFn::Density => m.density(x),
            UpliftMarginalFn::Cdf => m.cdf(x),
            UpliftMarginalFn::Survival => m.survival(x),
            UpliftMarginalFn::Quantile => core(m.quantile(x))?,
            UpliftMarginalFn::ToUniform => m.to_uniform(x),
            UpliftMarginalFn::FromUniform => core(m.from_uniform(x))?,
            UpliftMarginalFn::ToPareto => m.to_pareto(x),
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uplift_marginal_free(model: *mut UpliftMarginal) {
    if !model.is_null() {
        // SAFETY: allocated by this library and freed at most once.
        drop(unsafe { Box::from_raw(model) });
    }
}

// ---------------------------------------------------------------- GPD

/// Which quantity [`uplift_gpd`] computes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpliftGpdFn {
    Survival = 0,
    Cdf = 1,
    Density = 2,
    Quantile = 3,
}

/// Generalized Pareto function of an excess `y` (or probability for the quantile).
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_gpd(which: UpliftGpdFn, y: c_double, sigma: c_double, xi: c_double, result: *mut c_double) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        if !(sigma > 0.0 && sigma.is_finite() && xi.is_finite() && !y.is_nan()) {
            return fail(UpliftStatus::InvalidArgument, format!("invalid GPD arguments y={y}, sigma={sigma}, xi={xi}"));
        }
        *result = match which {
            UpliftGpdFn::Survival => gpd_survival(y, sigma, xi),
            UpliftGpdFn::Cdf => gpd_cdf(y, sigma, xi),
            UpliftGpdFn::Density => gpd_density(y, sigma, xi),
            UpliftGpdFn::Quantile => {
                if !(0.0..1.0).contains(&y) {
                    return fail(UpliftStatus::InvalidArgument, format!("probability {y} outside [0, 1)"));
                }
                gpd_quantile(y, sigma, xi)
            }
        };
        Ok(())
    })
}

// ---------------------------------------------------------------- risk

/// Summary `V` of one uniform-scale field under `functional` (`max`, `min`,
/// `mean`, `median`, `site:<i>` or `order:<k>`).
///
/// # Safety
/// `x_u` must point to `n` doubles; `functional` must be NUL-terminated;
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_risk_summary(functional: *const c_char, x_u: *const c_double, n: size_t, result: *mut c_double) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let r: RiskFunctional = core(unsafe { text(functional, "functional") }?.parse::<RiskFunctional>())?;
        *result = core(apply_risk(&r, unsafe { slice(x_u, n, "x_u") }?))?;
        Ok(())
    })
}

/// Uniform-scale return level for a period of `period` replicates;
/// `convention` is `extremal-coefficient` or `theta-over-period`.
///
/// # Safety
/// `convention` must be NUL-terminated; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_return_level(theta: c_double, period: c_double, convention: *const c_char, result: *mut c_double) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let c: ReturnLevelConvention = parse(unsafe { text(convention, "convention") }?, "convention")?;
        *result = core(return_level_with(theta, period, c))?;
        Ok(())
    })
}

// ---------------------------------------------------------------- lifting

/// Post-processed lifting map of a single uniform-scale value.
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_lift_value(x: c_double, s: c_double, u_marg: c_double, result: *mut c_double) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        if !(u_marg > -1.0 && u_marg < 0.0) || !(s > 0.0) || s * u_marg <= -1.0 || !(-1.0..=0.0).contains(&x) {
            return fail(UpliftStatus::InvalidArgument, format!("invalid lift arguments x={x}, s={s}, u_marg={u_marg}"));
        }
        *result = postprocess_map(x, s, u_marg);
        Ok(())
    })
}

/// Extract the `top_k` declustered events of a uniform-scale stack and lift
/// them to `count` fields with summaries drawn in `[v1, v2]`.
///
/// # Safety
/// `stack` must be a live handle; `functional` NUL-terminated; `result` writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_lift_top_events(
    stack: *const UpliftStack,
    functional: *const c_char,
    top_k: size_t,
    min_separation: size_t,
    v1: c_double,
    v2: c_double,
    u_marg: c_double,
    seed: u64,
    count: size_t,
    result: *mut *mut UpliftStack,
) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let stack = &unsafe { handle(stack, "stack") }?.0;
        let r: RiskFunctional = core(unsafe { text(functional, "functional") }?.parse::<RiskFunctional>())?;
        let series = core(summary_series(&r, stack))?;
        let idx = core(extract_top_events(&series, top_k, min_separation))?;
        let events = core(events_from_stack(stack, &idx, &r))?;
        let lifted = core(lift_batch(&events, &LiftSpec { v1, v2, u_marg, seed }, count))?;
        boxed(result, UpliftStack(core(lifted_stack(&lifted))?));
        Ok(())
    })
}

// ---------------------------------------------------------------- synth

/// Simulate `m` fields on the `nx` by `ny` unit-square grid with exponential
/// covariance. `family` is `gaussian` or `student:<nu>`; `margin` is `none`,
/// `exponential` or `log-gaussian`.
///
/// # Safety
/// `family` and `margin` must be NUL-terminated; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_synth(
    nx: size_t,
    ny: size_t,
    m: size_t,
    range: c_double,
    variance: c_double,
    family: *const c_char,
    margin: *const c_char,
    seed: u64,
    result: *mut *mut UpliftStack,
) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let spec = SynthSpec {
            grid: core(Grid::unit_square(nx, ny))?,
            cov: CovarianceSpec { range, variance },
            m,
            family: parse::<Family>(unsafe { text(family, "family") }?, "family")?,
            margin: parse::<MarginTransform>(unsafe { text(margin, "margin") }?, "margin")?,
            method: FactorMethod::Auto,
            seed,
        };
        boxed(result, UpliftStack(core(simulate(&spec))?));
        Ok(())
    })
}

// ---------------------------------------------------------------- direct sampling

/// Direct Sampling parameters as passed over the C boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UpliftDsParams {
    pub n_neighbors: size_t,
    pub dist_threshold: c_double,
    pub scan_fraction: c_double,
    pub coord_weight: c_double,
    pub seed: u64,
}

/// Defaults: 20 neighbors, threshold 0.05, scan fraction 0.5, coordinate weight 0.1, seed 0.
#[no_mangle]
pub extern "C" fn uplift_ds_default_params() -> UpliftDsParams {
    let d = DsParams::default();
    UpliftDsParams {
        n_neighbors: d.n_neighbors,
        dist_threshold: d.dist_threshold,
        scan_fraction: d.scan_fraction,
        coord_weight: d.coord_weight,
        seed: d.seed,
    }
}

/// `count` realizations on an `nx` by `ny` unit-square grid, or on the
/// training grid when `nx` or `ny` is 0.
///
/// # Safety
/// `training` must be a live handle; `params` readable; `result` writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_ds_simulate(
    training: *const UpliftStack,
    nx: size_t,
    ny: size_t,
    params: *const UpliftDsParams,
    count: size_t,
    result: *mut *mut UpliftStack,
) -> UpliftStatus {
    guard(|| {
        let result = unsafe { out(result, "result") }?;
        let training = &unsafe { handle(training, "training") }?.0;
        let p = unsafe { handle(params, "params") }?;
        let target = if nx == 0 || ny == 0 { *training.grid() } else { core(Grid::unit_square(nx, ny))? };
        let params = DsParams {
            n_neighbors: p.n_neighbors,
            dist_threshold: p.dist_threshold,
            scan_fraction: p.scan_fraction,
            coord_weight: p.coord_weight,
            seed: p.seed,
        };
        boxed(result, UpliftStack(core(ds_simulate(training, &target, &params, &BTreeMap::new(), count))?));
        Ok(())
    })
}

// ---------------------------------------------------------------- pipeline

/// Run the full pipeline from a config file. When the run has holdout
/// events and `coverage_fraction` is non-null, the share of covered holdout
/// statistics is written there (otherwise NaN).
///
/// # Safety
/// `config_path` must be NUL-terminated; `coverage_fraction` null or writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_run_pipeline(config_path: *const c_char, coverage_fraction: *mut c_double) -> UpliftStatus {
    guard(|| {
        let path = PathBuf::from(unsafe { text(config_path, "config_path") }?);
        let config = core(PipelineConfig::load(&path))?;
        let output = core(run_pipeline(&config))?;
        if let Some(c) = unsafe { coverage_fraction.as_mut() } {
            *c = output.report.map_or(f64::NAN, |r| r.coverage_fraction());
        }
        Ok(())
    })
}
