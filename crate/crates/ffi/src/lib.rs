//! C ABI over `resmob`.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`*_open` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`ResmobStatus`]; the message of the last failure on the calling thread is
//! available from [`resmob_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use resmob::bridge::{fit_bmme, fit_sigma_horne, BmmeOptions, BridgeFit, FitFlags, FitMethod, HorneOptions, OccupationOptions};
use resmob::config::PipelineConfig;
use resmob::geo::{load_patches, Location, OccupancyGrid, PatchMap, DEFAULT_MAX_CELLS};
use resmob::occupancy::{distance, trajectory_row, Metric};
use resmob::pings::{TrackPoint, Trajectory};
use resmob::pipeline::Pipeline;
use resmob::seirs::{integrate, SeirsParams, SeirsState, SeirsTrajectory};
use resmob::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResmobStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Domain = 5,
    Patch = 6,
    GridTooLarge = 7,
    InsufficientData = 8,
    NonConvergence = 9,
    ShapeMismatch = 10,
    Invariant = 11,
    Integration = 12,
    MissingArtifact = 13,
    Config = 14,
    Panic = 99,
}

impl From<&Error> for ResmobStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => Self::Io,
            Error::Csv(_) | Error::Json(_) | Error::Format(_) => Self::Parse,
            Error::Domain { .. } => Self::Domain,
            Error::Patch { .. } | Error::DuplicatePatch(_) | Error::UnknownPatch(_) => Self::Patch,
            Error::GridTooLarge { .. } => Self::GridTooLarge,
            Error::InsufficientData(_) => Self::InsufficientData,
            Error::NonConvergence { .. } => Self::NonConvergence,
            Error::ShapeMismatch(_) => Self::ShapeMismatch,
            Error::Invariant(_) => Self::Invariant,
            Error::Integration { .. } => Self::Integration,
            Error::MissingArtifact { .. } => Self::MissingArtifact,
            Error::Config(_) => Self::Config,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResmobFitMethod {
    /// σ² by maximum likelihood with the error variance held fixed.
    HorneFixedDelta = 0,
    /// σ² and δ² jointly from the increment likelihood.
    BmmeJoint = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResmobMetric {
    Euclidean = 0,
    Manhattan = 1,
    /// Uses the `p` argument.
    Minkowski = 2,
}

/// Bridge parameters of one trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResmobFit {
    pub method: ResmobFitMethod,
    pub sigma2: f64,
    pub delta2: f64,
    pub loglik: f64,
    /// Bit 0/1: σ² at lower/upper bound; bit 2/3: δ² at lower/upper bound;
    /// bit 4: final point dropped.
    pub flags: u32,
}

pub struct ResmobTrajectory(Trajectory);
pub struct ResmobPatchMap(PatchMap);
pub struct ResmobGrid(OccupancyGrid);
pub struct ResmobSeirsParams(SeirsParams);
pub struct ResmobSeirsRun(SeirsTrajectory);
pub struct ResmobPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ResmobStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ResmobStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ResmobStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ResmobStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ResmobStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ResmobStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(ResmobStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(ResmobStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure(ResmobStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure(ResmobStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(ResmobStatus::NullPointer, "output handle pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn resmob_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn resmob_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Trajectory from `n` fixes; times in seconds (increasing), positions in projected meters.
///
/// # Safety
/// `t`, `x`, `y` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_trajectory_new(
    t: *const f64,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut ResmobTrajectory,
) -> ResmobStatus {
    guard(|| {
        let (t, x, y) = (slice(t, n, "t")?, slice(x, n, "x")?, slice(y, n, "y")?);
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("times must be strictly increasing"));
        }
        if t.iter().chain(x).chain(y).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        let t0 = t.first().copied().unwrap_or(0.0);
        let points = (0..n).map(|i| TrackPoint { t: t[i] - t0, x: x[i], y: y[i] }).collect();
        emit(out, ResmobTrajectory(Trajectory { device_id: String::new(), t0_local: Default::default(), points }))
    })
}

/// # Safety
/// `p` must come from [`resmob_trajectory_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_trajectory_free(p: *mut ResmobTrajectory) {
    release(p)
}

fn to_fit(f: &BridgeFit) -> ResmobFit {
    let flags = [
        f.flags.sigma_at_lower_bound,
        f.flags.sigma_at_upper_bound,
        f.flags.delta_at_lower_bound,
        f.flags.delta_at_upper_bound,
        f.flags.dropped_last_point,
    ]
    .iter()
    .enumerate()
    .fold(0u32, |acc, (bit, &on)| acc | (u32::from(on) << bit));
    ResmobFit {
        method: match f.method {
            FitMethod::HorneFixedDelta => ResmobFitMethod::HorneFixedDelta,
            FitMethod::BmmeJoint => ResmobFitMethod::BmmeJoint,
        },
        sigma2: f.sigma2,
        delta2: f.delta2,
        loglik: f.loglik,
        flags,
    }
}

fn from_fit(f: &ResmobFit) -> BridgeFit {
    let bit = |b: u32| f.flags & (1 << b) != 0;
    BridgeFit {
        device_id: String::new(),
        sigma2: f.sigma2,
        delta2: f.delta2,
        method: match f.method {
            ResmobFitMethod::HorneFixedDelta => FitMethod::HorneFixedDelta,
            ResmobFitMethod::BmmeJoint => FitMethod::BmmeJoint,
        },
        loglik: f.loglik,
        n_points: 0,
        flags: FitFlags {
            sigma_at_lower_bound: bit(0),
            sigma_at_upper_bound: bit(1),
            delta_at_lower_bound: bit(2),
            delta_at_upper_bound: bit(3),
            dropped_last_point: bit(4),
        },
    }
}

/// Fits bridge parameters. `delta2` is the fixed error variance for
/// `HorneFixedDelta` and ignored for `BmmeJoint`.
///
/// # Safety
/// `traj` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_fit(
    traj: *const ResmobTrajectory,
    method: ResmobFitMethod,
    delta2: f64,
    out: *mut ResmobFit,
) -> ResmobStatus {
    guard(|| {
        let t = &borrow(traj, "trajectory")?.0;
        if out.is_null() {
            return Err(Failure(ResmobStatus::NullPointer, "out is null".into()));
        }
        let fit = match method {
            ResmobFitMethod::HorneFixedDelta => fit_sigma_horne(t, delta2, &HorneOptions::default())?,
            ResmobFitMethod::BmmeJoint => fit_bmme(t, &BmmeOptions::default())?,
        };
        *out = to_fit(&fit);
        Ok(())
    })
}

/// Loads a patch GeoJSON file; degree coordinates are projected to UTM `zone`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_patch_map_load(path: *const c_char, zone: u8, out: *mut *mut ResmobPatchMap) -> ResmobStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        let file = File::open(&path).map_err(Error::from)?;
        emit(out, ResmobPatchMap(load_patches(BufReader::new(file), zone)?))
    })
}

/// # Safety
/// `map` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn resmob_patch_map_len(map: *const ResmobPatchMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.len())
}

/// Index of the patch containing `(x, y)`, or -1 when outside every patch (or `map` is NULL).
///
/// # Safety
/// `map` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn resmob_patch_map_locate(map: *const ResmobPatchMap, x: f64, y: f64) -> i64 {
    match map.as_ref().map(|m| m.0.locate((x, y))) {
        Some(Location::Patch(k)) => k as i64,
        _ => -1,
    }
}

/// # Safety
/// `p` must come from [`resmob_patch_map_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_patch_map_free(p: *mut ResmobPatchMap) {
    release(p)
}

/// Occupancy grid over the map's bounding box plus `margin` meters.
///
/// # Safety
/// `map` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_grid_new(
    map: *const ResmobPatchMap,
    cell_size: f64,
    margin: f64,
    out: *mut *mut ResmobGrid,
) -> ResmobStatus {
    guard(|| {
        let map = &borrow(map, "map")?.0;
        emit(out, ResmobGrid(OccupancyGrid::build(map, cell_size, margin, DEFAULT_MAX_CELLS)?))
    })
}

/// # Safety
/// `p` must come from [`resmob_grid_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_grid_free(p: *mut ResmobGrid) {
    release(p)
}

/// Share of the trajectory's span spent in each patch, OUTSIDE last:
/// `out_row` receives `resmob_patch_map_len(map) + 1` values.
///
/// # Safety
/// Handles must be live; `out_row` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn resmob_occupation_row(
    traj: *const ResmobTrajectory,
    fit: *const ResmobFit,
    grid: *const ResmobGrid,
    time_step: f64,
    out_row: *mut f64,
    len: usize,
) -> ResmobStatus {
    guard(|| {
        let (t, f, g) = (&borrow(traj, "trajectory")?.0, borrow(fit, "fit")?, &borrow(grid, "grid")?.0);
        if len != g.n_patches() + 1 {
            return Err(invalid(format!("row buffer holds {len} values, need {}", g.n_patches() + 1)));
        }
        let out = slice_mut(out_row, len, "out_row")?;
        let opts = OccupationOptions { time_step, ..Default::default() };
        out.copy_from_slice(&trajectory_row(t, &from_fit(f), g, &opts)?);
        Ok(())
    })
}

/// Entrywise distance between two `rows × cols` row-major matrices.
///
/// # Safety
/// `a` and `b` must hold `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_distance(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    metric: ResmobMetric,
    p: f64,
    out: *mut f64,
) -> ResmobStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| invalid("matrix too large"))?;
        let (a, b) = (slice(a, n, "a")?, slice(b, n, "b")?);
        let metric = match metric {
            ResmobMetric::Euclidean => Metric::Euclidean,
            ResmobMetric::Manhattan => Metric::Manhattan,
            ResmobMetric::Minkowski if p >= 1.0 && p.is_finite() => Metric::Minkowski(p),
            ResmobMetric::Minkowski => return Err(invalid(format!("minkowski order must be ≥ 1, got {p}"))),
        };
        let split = |v: &[f64]| v.chunks(cols.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let d = distance(&split(a), &split(b), metric)?;
        if out.is_null() {
            return Err(Failure(ResmobStatus::NullPointer, "out is null".into()));
        }
        *out = d;
        Ok(())
    })
}

/// SEIRS parameters for `n` patches: every rate zero, `alpha` zero, `p` zero.
/// Fill them with [`resmob_seirs_params_set`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_params_new(n: usize, out: *mut *mut ResmobSeirsParams) -> ResmobStatus {
    guard(|| {
        let z = vec![0.0; n];
        let params = SeirsParams {
            patch_ids: (0..n).map(|k| k.to_string()).collect(),
            lambda: z.clone(),
            beta: z.clone(),
            mu: z.clone(),
            gamma: z.clone(),
            tau: z.clone(),
            psi: z.clone(),
            kappa: z.clone(),
            alpha: z.clone(),
            p: vec![z.clone(); n],
            population: z,
        };
        emit(out, ResmobSeirsParams(params))
    })
}

/// Sets one parameter vector by name: `lambda`, `beta`, `mu`, `gamma`, `tau`,
/// `psi`, `kappa`, `alpha`, `population` (`n` values) or `p` (`n*n`, row-major).
///
/// # Safety
/// `params` must be a live handle; `name` NUL-terminated; `values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_params_set(
    params: *mut ResmobSeirsParams,
    name: *const c_char,
    values: *const f64,
    len: usize,
) -> ResmobStatus {
    guard(|| {
        let q = &mut params.as_mut().ok_or_else(|| Failure(ResmobStatus::NullPointer, "params is null".into()))?.0;
        let name = string(name, "name")?;
        let v = slice(values, len, "values")?;
        let n = q.n();
        if name == "p" {
            if len != n * n {
                return Err(invalid(format!("p needs {} values, got {len}", n * n)));
            }
            q.p = v.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
            return Ok(());
        }
        let target = match name.as_str() {
            "lambda" => &mut q.lambda,
            "beta" => &mut q.beta,
            "mu" => &mut q.mu,
            "gamma" => &mut q.gamma,
            "tau" => &mut q.tau,
            "psi" => &mut q.psi,
            "kappa" => &mut q.kappa,
            "alpha" => &mut q.alpha,
            "population" => &mut q.population,
            other => return Err(invalid(format!("unknown parameter `{other}`"))),
        };
        if len != n {
            return Err(invalid(format!("{name} needs {n} values, got {len}")));
        }
        *target = v.to_vec();
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`resmob_seirs_params_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_params_free(p: *mut ResmobSeirsParams) {
    release(p)
}

/// Integrates from `init` (`4n` values: S, E, I, R blocks of `n`) to `t_end` with RK4 step `dt`.
///
/// # Safety
/// `params` must be a live handle; `init` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_integrate(
    params: *const ResmobSeirsParams,
    init: *const f64,
    len: usize,
    t_end: f64,
    dt: f64,
    out: *mut *mut ResmobSeirsRun,
) -> ResmobStatus {
    guard(|| {
        let q = &borrow(params, "params")?.0;
        let n = q.n();
        if len != 4 * n {
            return Err(invalid(format!("init needs {} values, got {len}", 4 * n)));
        }
        let v = slice(init, len, "init")?;
        let state = SeirsState {
            s: v[..n].to_vec(),
            e: v[n..2 * n].to_vec(),
            i: v[2 * n..3 * n].to_vec(),
            r: v[3 * n..].to_vec(),
        };
        q.validate()?;
        emit(out, ResmobSeirsRun(integrate(q, &state, t_end, dt)?))
    })
}

/// Number of recorded time nodes (steps + 1), or 0 for NULL.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_run_len(run: *const ResmobSeirsRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.times.len())
}

/// Time and state at node `k`; `state` receives `4n` values in S, E, I, R blocks.
///
/// # Safety
/// `run` must be a live handle; `time` writable; `state` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_run_node(
    run: *const ResmobSeirsRun,
    k: usize,
    time: *mut f64,
    state: *mut f64,
    len: usize,
) -> ResmobStatus {
    guard(|| {
        let r = &borrow(run, "run")?.0;
        let s = r.states.get(k).ok_or_else(|| invalid(format!("node {k} out of range")))?;
        let n = s.n();
        if len != 4 * n {
            return Err(invalid(format!("state buffer holds {len} values, need {}", 4 * n)));
        }
        if time.is_null() {
            return Err(Failure(ResmobStatus::NullPointer, "time is null".into()));
        }
        *time = r.times[k];
        let out = slice_mut(state, len, "state")?;
        for (block, src) in [&s.s, &s.e, &s.i, &s.r].iter().enumerate() {
            out[block * n..(block + 1) * n].copy_from_slice(src);
        }
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`resmob_seirs_integrate`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_seirs_run_free(p: *mut ResmobSeirsRun) {
    release(p)
}

/// Opens a pipeline from a JSON config file (relative paths resolve against it).
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resmob_pipeline_open(config_path: *const c_char, out: *mut *mut ResmobPipeline) -> ResmobStatus {
    guard(|| {
        let cfg = PipelineConfig::load(&PathBuf::from(string(config_path, "config_path")?))?;
        emit(out, ResmobPipeline(Pipeline::new(cfg)?))
    })
}

/// Runs one command: `synth`, `ingest`, `residence`, `fit`, `matrix`,
/// `simulate`, `distance`, `diff` or `run`. `window` may be NULL for every
/// configured window.
///
/// # Safety
/// `pipeline` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn resmob_pipeline_command(
    pipeline: *const ResmobPipeline,
    command: *const c_char,
    window: *const c_char,
) -> ResmobStatus {
    guard(|| {
        let p = &borrow(pipeline, "pipeline")?.0;
        let command = string(command, "command")?;
        let windows: Vec<String> = if window.is_null() { Vec::new() } else { vec![string(window, "window")?] };
        let each = |f: fn(&Pipeline, &str) -> resmob::Result<resmob::pipeline::Manifest>| -> Result<(), Failure> {
            for w in p.resolve_windows(&windows)? {
                f(p, &w.name)?;
            }
            Ok(())
        };
        match command.as_str() {
            "synth" => p.synth().map(drop)?,
            "ingest" => p.ingest(&p.resolve_windows(&windows)?).map(drop)?,
            "residence" => each(Pipeline::residence)?,
            "fit" => each(Pipeline::fit)?,
            "matrix" => each(Pipeline::matrix)?,
            "simulate" => each(Pipeline::simulate)?,
            "distance" => p.distance(&windows).map(drop)?,
            "diff" => p.diff(&windows).map(drop)?,
            "run" => p.run_all(&windows).map(drop)?,
            other => return Err(invalid(format!("unknown command `{other}`"))),
        }
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`resmob_pipeline_open`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn resmob_pipeline_free(p: *mut ResmobPipeline) {
    release(p)
}
